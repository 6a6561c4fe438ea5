"""Experiment orchestration: datasets, the private pipeline, sweeps and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .basis import BoxDomain, analyze, build_basis, l2_norm, synthesize
from .bounds import DomainGeometry, tradeoff_bound
from .errors import ConfigError, ConvergenceError, DomainError, InvalidScheduleError, NumericalRankError
from .optim import (
    LogisticAgents,
    LogisticObjective,
    PolynomialAgents,
    StepSchedule,
    baseline_noise_scale,
    centralized_minimize,
    distributed_solve,
    impossibility_demo,
    make_topology,
    message_perturbing_baseline,
)
from .privacy import derive_seed, gamma_for, perturb
from .regularity import GridSpec, ProjectionConfig, class_params_for_logistic, project_to_S

__all__ = [
    "SCHEMA_VERSION",
    "CSV_HEADER",
    "ExperimentConfig",
    "generate_dataset",
    "Prepared",
    "prepare",
    "privatize",
    "run_pipeline",
    "SweepRow",
    "SweepResult",
    "sweep",
    "baseline_sweep",
    "demo_impossibility",
    "bounds_curve",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_HEADER = ("epsilon", "degree", "rep", "error", "bound", "runtime_ms")

# seed streams
_DATA, _NOISE, _BASELINE_NOISE = 0, 1, 2


def _default_epsilons():
    return [float(e) for e in np.logspace(-2, 3, 11)]


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    master_seed: int = 0
    n_agents: int = 10
    samples_per_agent: int = 100
    lam: float = 0.01
    r_D: float = 5.0
    reference_degree: int = 14
    degrees: list = field(default_factory=lambda: [4, 6, 14])
    epsilons: list = field(default_factory=_default_epsilons)
    repetitions: int = 20
    q: float = 1.1
    p: float = 0.55
    topology: str = "ring"
    solver: str = "centralized"  # or "distributed"
    step_kind: str = "harmonic"
    step_c: float = 1.0
    iterations: int = 200_000
    grid_points: int = 15
    grid_margin: float | None = None
    projection_max_iters: int = 3000
    projection_primal_tol: float = 1e-7
    projection_dual_tol: float = 1e-9
    baseline_runs: int = 50
    baseline_c: float = 0.5
    baseline_q: float = 0.1
    baseline_p: float = 0.11
    baseline_iterations: int = 100
    baseline_topology: str = "complete"
    impossibility_runs: int = 1000
    impossibility_iterations: int = 2000
    output: str = "sweep.csv"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        positive_ints = ("n_agents", "samples_per_agent", "repetitions", "iterations", "grid_points",
                         "baseline_runs", "baseline_iterations", "impossibility_runs", "impossibility_iterations",
                         "projection_max_iters")
        for name in positive_ints:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lam", "r_D", "step_c", "baseline_c", "projection_primal_tol", "projection_dual_tol"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.degrees or any(int(m) < 2 or int(m) > self.reference_degree for m in self.degrees):
            raise ConfigError(f"degrees must lie in [2, {self.reference_degree}]")
        if not self.epsilons or any(not float(e) > 0 for e in self.epsilons):
            raise ConfigError("epsilons must be a nonempty list of positive numbers")
        if self.solver not in ("centralized", "distributed"):
            raise ConfigError(f"solver must be 'centralized' or 'distributed', got {self.solver!r}")
        if not 0 < self.baseline_q < self.baseline_p < 1:
            raise ConfigError("baseline needs 0 < baseline_q < baseline_p < 1")
        try:
            gamma_for(1.0, self.p, self.q)
            StepSchedule(self.step_kind, self.step_c)
            make_topology(self.topology, self.n_agents)
            make_topology(self.baseline_topology, self.n_agents)
            GridSpec(self.grid_points, self.grid_margin)
        except (ValueError, DomainError, InvalidScheduleError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects -----------------------------------------------------
    @property
    def domain(self) -> BoxDomain:
        return BoxDomain.cube(self.r_D)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.grid_points, self.grid_margin)

    @property
    def projection(self) -> ProjectionConfig:
        return ProjectionConfig(self.projection_max_iters, self.projection_primal_tol, self.projection_dual_tol)

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "schema_version" not in data:
            raise ConfigError("config is missing schema_version")
        try:
            return cls(**data)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)


def generate_dataset(n: int, samples: int, seed: int):
    """Per-agent ``(a, b)``: features uniform on the unit square, labels uniform on {-1, +1}."""
    out = []
    for i in range(n):
        rng = np.random.default_rng(derive_seed(seed, i))
        a = rng.random((samples, 2))
        b = np.where(rng.random(samples) < 0.5, -1.0, 1.0)
        out.append((a, b))
    return out


@dataclass
class Prepared:
    """Everything about an experiment that does not depend on epsilon, degree or rep."""

    config: ExperimentConfig
    basis: object
    objectives: list
    coeffs: np.ndarray  # (n, dim) reference analysis
    x_star: np.ndarray
    cls: object
    geom: DomainGeometry
    residual: np.ndarray  # per-agent |f_i - reference expansion|

    def smoothing_distance(self, degree: int) -> np.ndarray:
        """``|f_i - f_i^s|`` for truncation at ``degree``, one value per agent."""
        K = self.basis.truncation_dim(degree)
        tail = np.linalg.norm(self.coeffs[:, K:], axis=1)
        return np.sqrt(tail**2 + self.residual**2)


_PREPARED: dict[str, Prepared] = {}


def prepare(config: ExperimentConfig) -> Prepared:
    key = config.to_json()
    if key in _PREPARED:
        return _PREPARED[key]
    D = config.domain
    data = generate_dataset(config.n_agents, config.samples_per_agent, derive_seed(config.master_seed, _DATA))
    objectives = [LogisticObjective(a, b, config.lam) for a, b in data]
    basis = build_basis(D, config.reference_degree)
    coeffs = np.array([analyze(basis, o.value) for o in objectives])
    residual = np.array(
        [l2_norm(D, lambda x, o=o, c=c: o.value(x) - synthesize(basis, c, x), quad_order=40) for o, c in zip(objectives, coeffs)]
    )
    agents = LogisticAgents(objectives)
    x_star = centralized_minimize(agents.total_value, agents.total_gradient, D, tol=1e-12)
    cls = class_params_for_logistic(config.samples_per_agent, config.lam, config.r_D)
    prep = Prepared(config, basis, objectives, coeffs, x_star, cls, DomainGeometry.from_box(D), residual)
    _PREPARED[key] = prep
    return prep


def _eps_key(epsilon: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(epsilon)))[0]


def _solve_perturbed(config: ExperimentConfig, basis, coeffs, domain: BoxDomain) -> np.ndarray:
    agents = PolynomialAgents(basis, coeffs)
    if config.solver == "centralized":
        return centralized_minimize(agents.total_value, agents.total_gradient, domain, tol=1e-12)
    net = make_topology(config.topology, config.n_agents)
    steps = StepSchedule(config.step_kind, config.step_c)
    rec = distributed_solve(agents, net, domain, steps, config.iterations, record_every=0)
    return rec.consensus


def privatize(basis, coeffs, schedule, degree: int, cls, seeds, grid: GridSpec = GridSpec(), projection: ProjectionConfig = ProjectionConfig()) -> np.ndarray:
    """Perturb each row of ``coeffs``, truncate it to ``degree`` and project it onto the class.

    This is everything an agent does locally before any communication; the
    rows of the result are the functions the agents then minimize jointly.
    """
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
    if len(seeds) != coeffs.shape[0]:
        raise ValueError("one seed per agent is required")
    K = basis.truncation_dim(degree)
    out = []
    for c, seed in zip(coeffs, seeds):
        pf = perturb(c, schedule, int(seed))
        out.append(project_to_S(basis, pf.perturbed[:K], cls, grid, projection))
    return np.array(out)


def run_pipeline(config: ExperimentConfig, epsilon: float, degree: int, rep: int, *, prepared: Prepared | None = None):
    """One private run: perturb, truncate and project every agent's objective, then optimize.

    Returns ``(x_tilde, x_star, error)``.  Noise is drawn once at the reference
    degree and truncated, so different ``degree`` values at the same
    ``(epsilon, rep)`` share their noise.
    """
    prep = prepared or prepare(config)
    schedule = gamma_for(float(epsilon), config.p, config.q)
    seeds = [derive_seed(config.master_seed, _NOISE, _eps_key(epsilon), rep, i) for i in range(len(prep.coeffs))]
    projected = privatize(prep.basis, prep.coeffs, schedule, degree, prep.cls, seeds, config.grid, config.projection)
    x_tilde = _solve_perturbed(config, prep.basis, projected, config.domain)
    return x_tilde, prep.x_star, float(np.linalg.norm(x_tilde - prep.x_star))


# -- sweeps --------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    degree: int
    rep: int
    error: float
    bound: float
    runtime_ms: float


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


@dataclass
class SweepResult:
    rows: list

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r.epsilon, r.degree, r.rep))

    def to_csv(self, timestamp: bool = True) -> str:
        buf = io.StringIO()
        if timestamp:
            buf.write(f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.sorted_rows():
            w.writerow([_fmt(r.epsilon), _fmt(r.degree), _fmt(r.rep), _fmt(r.error), _fmt(r.bound), _fmt(r.runtime_ms)])
        return buf.getvalue()

    def write(self, path, timestamp: bool = True) -> None:
        Path(path).write_text(self.to_csv(timestamp))

    @classmethod
    def read_csv(cls, path) -> "SweepResult":
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
        reader = csv.DictReader(lines)
        rows = [
            SweepRow(float(r["epsilon"]), int(r["degree"]), int(r["rep"]), float(r["error"]), float(r["bound"]), float(r["runtime_ms"]))
            for r in reader
        ]
        return cls(rows)

    def errors(self, degree=None) -> dict:
        """``{epsilon: array of errors}`` (failed runs excluded)."""
        out: dict = {}
        for r in self.sorted_rows():
            if (degree is None or r.degree == degree) and math.isfinite(r.error):
                out.setdefault(r.epsilon, []).append(r.error)
        return {e: np.array(v) for e, v in out.items()}

    def bounds(self, degree=None) -> dict:
        return {r.epsilon: r.bound for r in self.rows if degree is None or r.degree == degree}


def sweep(config: ExperimentConfig, write: bool = False, progress=None) -> SweepResult:
    """Run the full (epsilon, degree, rep) grid; each row carries the accuracy bound for its epsilon."""
    prep = prepare(config)
    rows = []
    n = config.n_agents
    for degree in config.degrees:
        eps_s = prep.smoothing_distance(degree)
        for eps in config.epsilons:
            bound = tradeoff_bound([eps] * n, [config.q] * n, list(eps_s), prep.cls, prep.geom)
            for rep in range(config.repetitions):
                t0 = time.perf_counter()
                try:
                    _, _, err = run_pipeline(config, eps, degree, rep, prepared=prep)
                except (ConvergenceError, NumericalRankError) as exc:
                    log.warning("run eps=%g degree=%d rep=%d failed: %s", eps, degree, rep, exc)
                    err = math.nan
                ms = (time.perf_counter() - t0) * 1e3
                if math.isfinite(err) and err > bound:
                    log.warning("run eps=%g degree=%d rep=%d: error %.3g above bound %.3g", eps, degree, rep, err, bound)
                rows.append(SweepRow(float(eps), int(degree), rep, err, bound, ms))
                if progress:
                    progress(rows[-1])
    result = SweepResult(rows)
    if write:
        result.write(config.output)
    return result


def baseline_sweep(config: ExperimentConfig, write: bool = False) -> SweepResult:
    """Message-perturbing baseline over the epsilon grid, ``baseline_runs`` executions each.

    The degree column is 0 and the bound column is NaN: the baseline has no
    functional expansion and no bound of ours applies.
    """
    prep = prepare(config)
    D = config.domain
    agents = LogisticAgents(prep.objectives)
    net = make_topology(config.baseline_topology, config.n_agents)
    steps = StepSchedule("geometric", config.baseline_c, config.baseline_q)
    rows = []
    for eps in config.epsilons:
        theta = baseline_noise_scale(eps, steps, config.baseline_p, prep.cls.u_bar)
        for run in range(config.baseline_runs):
            t0 = time.perf_counter()
            seed = derive_seed(config.master_seed, _BASELINE_NOISE, _eps_key(eps), run)
            rec = message_perturbing_baseline(agents, net, D, steps, theta, config.baseline_p, config.baseline_iterations, seed)
            err = float(np.mean(np.linalg.norm(rec.final - prep.x_star, axis=1)))
            rows.append(SweepRow(float(eps), 0, run, err, math.nan, (time.perf_counter() - t0) * 1e3))
    result = SweepResult(rows)
    if write:
        result.write(config.output)
    return result


def demo_impossibility(config: ExperimentConfig, separation: float = 1.0):
    """Two quadratic information sets whose optimizers are ``separation`` apart."""
    rng = np.random.default_rng(derive_seed(config.master_seed, 3))
    centers = rng.uniform(-1, 1, (config.n_agents, 2))
    other = centers.copy()
    other[0, 0] += separation * config.n_agents  # moves the average optimizer by `separation`
    return impossibility_demo(centers, other, runs=config.impossibility_runs, seed=config.master_seed, iters=config.impossibility_iterations)


def bounds_curve(config: ExperimentConfig) -> SweepResult:
    """The accuracy bound alone, per (epsilon, degree)."""
    prep = prepare(config)
    n = config.n_agents
    rows = []
    for degree in config.degrees:
        eps_s = list(prep.smoothing_distance(degree))
        for eps in config.epsilons:
            b = tradeoff_bound([eps] * n, [config.q] * n, eps_s, prep.cls, prep.geom)
            rows.append(SweepRow(float(eps), int(degree), 0, math.nan, b, 0.0))
    return SweepResult(rows)
