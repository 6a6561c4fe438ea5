"""Objectives, solvers and the distributed-optimization simulator."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import networkx as nx
import numpy as np
from scipy.special import expit

from .basis import Basis, BoxDomain
from .errors import ConvergenceError
from .privacy import laplace_noise

__all__ = [
    "LogisticObjective",
    "logistic_eval",
    "LogisticAgents",
    "PolynomialAgents",
    "QuadraticAgents",
    "Network",
    "metropolis_weights",
    "make_topology",
    "StepSchedule",
    "TrajectoryRecord",
    "centralized_minimize",
    "distributed_solve",
    "message_perturbing_baseline",
    "baseline_noise_scale",
    "ImpossibilityReport",
    "impossibility_demo",
]


# -- objectives -----------------------------------------------------------------


@dataclass(frozen=True)
class LogisticObjective:
    """``sum_i [ln(1 + exp(-b_i a_i.x)) + lam/2 |x|^2]`` (regularizer counted per sample)."""

    a: np.ndarray  # (N, d)
    b: np.ndarray  # (N,)
    lam: float

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if a.shape[0] != b.shape[0]:
            raise ValueError("one label per sample")
        if not np.all(np.abs(b) == 1):
            raise ValueError("labels must be +1 or -1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_samples(self) -> int:
        return self.a.shape[0]

    def value(self, x):
        """Objective at one point (d,) or a batch (M, d)."""
        X = np.atleast_2d(x)
        m = (X @ self.a.T) * self.b  # (M, N) margins
        v = np.logaddexp(0.0, -m).sum(axis=1) + 0.5 * self.lam * self.n_samples * np.sum(X * X, axis=1)
        return float(v[0]) if np.ndim(x) == 1 else v

    def __call__(self, x):
        return self.value(x)

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self.b * (self.a @ x)
        w = -self.b * expit(-m)
        return self.a.T @ w + self.lam * self.n_samples * x

    def hessian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        m = self.b * (self.a @ x)
        s = expit(m) * expit(-m)
        return (self.a.T * s) @ self.a + self.lam * self.n_samples * np.eye(self.a.shape[1])


def logistic_eval(obj: LogisticObjective, x):
    """(value, gradient, Hessian) at ``x``."""
    return obj.value(x), obj.gradient(x), obj.hessian(x)


# Agent collections expose ``gradients(Z)`` returning one gradient per agent,
# each evaluated at its own row of Z.


class LogisticAgents:
    def __init__(self, objectives: Sequence[LogisticObjective]):
        self.objectives = list(objectives)
        self.n = len(self.objectives)
        self._a = np.stack([o.a for o in self.objectives])  # (n, N, d)
        self._b = np.stack([o.b for o in self.objectives])  # (n, N)
        self._reg = np.array([o.lam * o.n_samples for o in self.objectives])

    def gradients(self, Z):
        m = self._b * np.einsum("ind,id->in", self._a, Z)
        w = -self._b * expit(-m)
        return np.einsum("ind,in->id", self._a, w) + self._reg[:, None] * Z

    def total_value(self, x):
        return sum(o.value(x) for o in self.objectives)

    def total_gradient(self, x):
        return sum(o.gradient(x) for o in self.objectives)


class PolynomialAgents:
    """Agents whose objectives are coefficient vectors in a shared basis."""

    def __init__(self, basis: Basis, coeffs):
        C = np.atleast_2d(np.asarray(coeffs, dtype=float))
        self.basis = basis
        self.n = C.shape[0]
        full = np.zeros((self.n, basis.dim))
        full[:, : C.shape[1]] = C
        self._mono = full @ basis.ortho_matrix  # monomial coefficients, (n, dim)
        self._total = self._mono.sum(axis=0)

    def gradients(self, Z):
        _, dV = self.basis.monomials(Z, order=1, check=False)  # (n, d, dim)
        return np.einsum("idk,ik->id", dV, self._mono)

    def total_value(self, x):
        X = np.atleast_2d(x)
        v = self.basis.monomials(X, check=False) @ self._total
        return float(v[0]) if np.ndim(x) == 1 else v

    def total_gradient(self, x):
        _, dV = self.basis.monomials(np.atleast_2d(x), order=1, check=False)
        return dV[0] @ self._total

    def total_hessian(self, x):
        _, _, d2V = self.basis.monomials(np.atleast_2d(x), order=2, check=False)
        return d2V[0] @ self._total


class QuadraticAgents:
    """``f_i(x) = (w_i / 2) |x - z_i|^2``; handy for tests and the impossibility demo."""

    def __init__(self, centers, weights=None):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.n = self.centers.shape[0]
        self.weights = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)

    def gradients(self, Z):
        return self.weights[:, None] * (Z - self.centers)

    def total_value(self, x):
        X = np.atleast_2d(x)
        diff = X[:, None, :] - self.centers[None]
        v = 0.5 * np.einsum("i,mid->m", self.weights, diff**2)
        return float(v[0]) if np.ndim(x) == 1 else v

    def total_gradient(self, x):
        return self.weights @ (np.asarray(x) - self.centers)

    def minimizer(self):
        return self.weights @ self.centers / self.weights.sum()


# -- centralized solver ----------------------------------------------------------


def centralized_minimize(
    fun: Callable,
    grad: Callable,
    X: BoxDomain,
    tol: float = 1e-10,
    x0=None,
    max_iters: int = 1_000_000,
) -> np.ndarray:
    """Projected gradient descent with backtracking on the box ``X``.

    Each trial step starts from a Barzilai-Borwein estimate and is halved until
    the standard sufficient-decrease test for projected steps holds.  Stops when
    ``|x - proj(x - grad f(x))| <= tol``.
    """
    x = X.center.copy() if x0 is None else X.project(np.asarray(x0, dtype=float))
    fx, gx = fun(x), grad(x)
    t = 1.0
    for _ in range(max_iters):
        if np.linalg.norm(x - X.project(x - gx)) <= tol:
            return x
        while True:
            xn = X.project(x - t * gx)
            step = xn - x
            fn = fun(xn)
            slack = 64 * np.finfo(float).eps * abs(fx)  # rounding in f near the optimum
            if fn <= fx + gx @ step + (step @ step) / (2 * t) + slack or t < 1e-300:
                break
            t *= 0.5
        gn = grad(xn)
        s, y = xn - x, gn - gx
        sy = s @ y
        t = float(np.clip((s @ s) / sy, 1e-12, 1e12)) if sy > 0 else min(2 * t, 1e12)
        x, fx, gx = xn, fn, gn
    raise ConvergenceError("projected gradient hit the iteration cap", residual=float(np.linalg.norm(x - X.project(x - gx))))


# -- networks --------------------------------------------------------------------


@dataclass(frozen=True)
class Network:
    n: int
    weights: np.ndarray
    adjacency: np.ndarray


def metropolis_weights(graph) -> Network:
    """Metropolis-Hastings weights: ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    G = graph if isinstance(graph, nx.Graph) else nx.from_numpy_array(np.asarray(graph))
    G = nx.convert_node_labels_to_integers(G)
    n = G.number_of_nodes()
    if n == 0 or not nx.is_connected(G):
        raise ValueError("communication graph must be connected")
    adj = nx.to_numpy_array(G, nodelist=range(n))
    np.fill_diagonal(adj, 0)
    adj = (adj != 0).astype(float)
    deg = adj.sum(axis=1)
    W = np.where(adj > 0, 1.0 / (1.0 + np.maximum.outer(deg, deg)), 0.0)
    W[np.diag_indices(n)] = 1.0 - W.sum(axis=1)
    return Network(n, W, adj)


def make_topology(name: str, n: int) -> Network:
    builders = {
        "ring": lambda: nx.cycle_graph(n) if n > 2 else nx.path_graph(n),
        "path": lambda: nx.path_graph(n),
        "complete": lambda: nx.complete_graph(n),
        "star": lambda: nx.star_graph(n - 1),
    }
    if name not in builders:
        raise ValueError(f"unknown topology {name!r}; choose from {sorted(builders)}")
    return metropolis_weights(builders[name]())


# -- distributed simulation ---------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    kind: str = "harmonic"  # "harmonic": c / k; "geometric": c q^(k-1)
    c: float = 0.5
    q: float = 0.1

    def __post_init__(self):
        if self.kind not in ("harmonic", "geometric"):
            raise ValueError(f"unknown step kind {self.kind!r}")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if self.kind == "geometric" and not 0 < self.q < 1:
            raise ValueError("geometric ratio must lie in (0, 1)")

    def __call__(self, k: int) -> float:
        return self.c / k if self.kind == "harmonic" else self.c * self.q ** (k - 1)


@dataclass
class TrajectoryRecord:
    iterations: np.ndarray  # recorded iteration numbers
    states: np.ndarray  # (T, n, d)
    final: np.ndarray  # (n, d)
    iters: int
    messages: np.ndarray | None = None  # (T, n, d), baseline only

    @property
    def consensus(self) -> np.ndarray:
        return self.final.mean(axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            d = self.states.shape[2]
            w.writerow(["iteration", "agent"] + [f"x{j + 1}" for j in range(d)])
            for k, S in zip(self.iterations, self.states):
                for i, row in enumerate(S):
                    w.writerow([int(k), i] + [repr(float(v)) for v in row])


def _run(agents, net, X, steps, iters, x0, record_every, noise=None):
    Wt = net.weights
    x = np.zeros((net.n, X.d)) if x0 is None else np.array(x0, dtype=float).reshape(net.n, X.d)
    x = X.project(x)
    lo, hi = np.array(X.lower), np.array(X.upper)
    rec_k, rec_x, rec_m = [0], [x.copy()], []
    for k in range(1, iters + 1):
        msg = x if noise is None else x + noise(k)
        if noise is not None and record_every and (k - 1) % record_every == 0:
            rec_m.append(msg.copy())
        z = Wt @ msg
        x = np.clip(z - steps(k) * agents.gradients(np.clip(z, lo, hi)), lo, hi)
        if record_every and k % record_every == 0:
            rec_k.append(k)
            rec_x.append(x.copy())
    if rec_k[-1] != iters:
        rec_k.append(iters)
        rec_x.append(x.copy())
    msgs = np.array(rec_m) if noise is not None else None
    return TrajectoryRecord(np.array(rec_k), np.array(rec_x), x, iters, msgs)


def distributed_solve(agents, net: Network, X: BoxDomain, steps: StepSchedule, iters: int, x0=None, record_every: int = 1):
    """Consensus-based projected gradient over ``net``.

    ``z_i = sum_j a_ij x_j``, then ``x_i <- proj_X(z_i - alpha_k grad f_i(z_i))``
    for all agents at once.  ``agents`` must provide ``gradients(Z)``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    return _run(agents, net, X, steps, iters, x0, record_every)


def baseline_noise_scale(epsilon: float, steps: StepSchedule, decay: float, grad_bound: float) -> float:
    """Initial Laplace scale ``theta`` for message noise ``Lap(theta decay^(k-1))``.

    Changing one objective moves a message at step k by at most
    ``2 alpha_k grad_bound``, so the loss accumulated over the run is
    ``sum_k 2 c grad_bound (q / decay)^(k-1) / theta``; theta makes that sum epsilon.
    """
    if steps.kind != "geometric":
        raise ValueError("baseline requires a geometric stepsize")
    if not steps.q < decay < 1:
        raise ValueError("noise decay must lie in (step ratio, 1) for a finite budget")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if math.isinf(epsilon):
        return 0.0
    return 2.0 * steps.c * grad_bound / (epsilon * (1.0 - steps.q / decay))


def message_perturbing_baseline(
    agents,
    net: Network,
    X: BoxDomain,
    steps: StepSchedule,
    theta: float,
    decay: float,
    iters: int,
    seed: int,
    x0=None,
    record_every: int = 0,
) -> TrajectoryRecord:
    """Same loop, but neighbours receive ``x_j + eta_j`` with ``eta_j(k) ~ Lap(theta decay^(k-1))``."""
    if steps.kind != "geometric":
        raise ValueError("baseline requires a geometric stepsize")
    rng_seed = np.random.SeedSequence(seed)
    seeds = rng_seed.generate_state(iters, np.uint64)
    shape = (net.n, X.d)

    def noise(k):
        b = theta * decay ** (k - 1)
        if b == 0:
            return np.zeros(shape)
        return laplace_noise(np.full(shape, b), int(seeds[k - 1]))

    return _run(agents, net, X, steps, iters, x0, record_every, noise)


# -- impossibility demo ------------------------------------------------------------


@dataclass
class ImpossibilityReport:
    runs: int
    radius: float
    freq_true: float
    freq_other: float
    optimizer_true: list = field(default_factory=list)
    optimizer_other: list = field(default_factory=list)


def _inside(points, center, radius) -> bool:
    return bool(np.all(np.linalg.norm(points - center, axis=1) <= radius))


def impossibility_demo(
    centers_true,
    centers_other,
    runs: int = 1000,
    seed: int = 0,
    noise_c: float = 0.5,
    noise_p: float = 1.0,
    step_c: float = 0.5,
    iters: int = 2000,
    radius: float | None = None,
    tail: int = 200,
    topology: str = "ring",
) -> ImpossibilityReport:
    """Monte-Carlo of a message-perturbed, asymptotically stable quadratic consensus run.

    The observed message sequence is generated under the true information set.
    For each run we ask whether that same sequence, explained as the output of
    either information set, implies a noise sequence that vanishes while staying
    bounded; equivalently whether the estimates settle in ``B(x*_I, r)`` or in
    ``B(x*_I', r)``.  Trajectories start at the true optimizer and use harmonic
    steps with ``Lap(noise_c / k**noise_p)`` message noise.
    """
    agents_t = QuadraticAgents(centers_true)
    agents_o = QuadraticAgents(centers_other)
    xs_t, xs_o = agents_t.minimizer(), agents_o.minimizer()
    sep = float(np.linalg.norm(xs_t - xs_o))
    if radius is None:
        radius = 0.25 * sep if sep > 0 else 0.25
    net = make_topology(topology, agents_t.n)
    d = agents_t.centers.shape[1]
    span = 10.0 * (1.0 + float(np.abs(np.concatenate([agents_t.centers, agents_o.centers])).max()))
    steps = StepSchedule("harmonic", step_c)
    hits_t = hits_o = 0
    ks = np.arange(1, iters + 1, dtype=float)
    scales = np.broadcast_to((noise_c / ks**noise_p)[:, None, None], (iters, agents_t.n, d))
    run_seeds = np.random.SeedSequence(seed).generate_state(runs, np.uint64)
    for r in range(runs):
        noise = laplace_noise(scales, int(run_seeds[r]))
        x = np.tile(xs_t, (agents_t.n, 1))
        tail_t = tail_o = True
        for k in range(1, iters + 1):
            xi = x + noise[k - 1]
            z = net.weights @ xi
            x = np.clip(z - steps(k) * agents_t.gradients(z), -span, span)
            if k > iters - tail:
                # an observer sees the messages; ask which information set explains them
                x_other = np.clip(z - steps(k) * agents_o.gradients(z), -span, span)
                tail_t &= _inside(xi, xs_t, radius) and _inside(x, xs_t, radius)
                tail_o &= _inside(xi, xs_o, radius) and _inside(x_other, xs_o, radius)
        hits_t += tail_t
        hits_o += tail_o
    return ImpossibilityReport(runs, radius, hits_t / runs, hits_o / runs, xs_t.tolist(), xs_o.tolist())
