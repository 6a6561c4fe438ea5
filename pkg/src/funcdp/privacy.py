"""Laplace functional perturbation and its privacy calculus.

A function is released as ``f + sum_k eta_k e_k`` with independent
``eta_k ~ Lap(gamma / k**p)``.  Privacy is measured against the weighted
adjacency norm ``||delta||_{V_q} = (sum_k (k**q delta_k)**2) ** 0.5`` and the
resulting epsilon is ``sqrt(zeta(2 (q - p))) / gamma``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import DomainError, InvalidScheduleError

__all__ = [
    "zeta",
    "NoiseSchedule",
    "PrivacyLevel",
    "PerturbedFunction",
    "ScheduleReport",
    "epsilon_of",
    "gamma_for",
    "laplace_noise",
    "perturb",
    "vq_norm",
    "validate_schedule",
    "boundedness_probability",
    "derive_seed",
    "expected_noise_norm",
    "holder_exponent",
    "empirical_dp_audit",
]

ZETA_TERMS = 1_000_000
_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=256)
def zeta(s: float) -> float:
    """Riemann zeta for real s > 1.

    Direct sum of the first N - 1 terms plus the Euler-Maclaurin tail
    ``N^(1-s)/(s-1) + N^(-s)/2 + s N^(-s-1)/12`` for the remainder from N on.
    """
    s = float(s)
    if not s > 1.0:
        raise DomainError(f"zeta(s) requires s > 1, got {s}")
    N = ZETA_TERMS
    k = np.arange(N - 1, 0, -1, dtype=np.float64)  # small terms first
    head = math.fsum(k ** (-s))
    tail = N ** (1.0 - s) / (s - 1.0) + 0.5 * N ** (-s) + s * N ** (-s - 1.0) / 12.0
    return head + tail


@dataclass(frozen=True)
class NoiseSchedule:
    """Laplace scales ``b_k = gamma / k**p``.

    ``gamma == 0`` is accepted as the degenerate no-noise schedule (epsilon = inf).
    """

    gamma: float
    p: float

    def __post_init__(self):
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise InvalidScheduleError(f"gamma must be finite and >= 0, got {self.gamma}")
        if not self.p > 0.5:
            raise InvalidScheduleError(f"noise decay needs p > 1/2 for l2 membership, got p={self.p}")

    @property
    def degenerate(self) -> bool:
        return self.gamma == 0

    def scales(self, K: int) -> np.ndarray:
        k = np.arange(1, K + 1, dtype=float)
        return self.gamma / k**self.p


@dataclass(frozen=True)
class PrivacyLevel:
    epsilon: float
    q: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidScheduleError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.q > 1:
            raise InvalidScheduleError(f"adjacency exponent needs q > 1, got {self.q}")


def _check_window(p: float, q: float) -> None:
    if not q > 1:
        raise InvalidScheduleError(f"q > 1 violated (q={q})")
    if not p > 0.5:
        raise InvalidScheduleError(f"p > 1/2 violated (p={p})")
    if not p < q - 0.5:
        raise InvalidScheduleError(f"p < q - 1/2 violated (p={p}, q={q})")


def holder_exponent(p: float, q: float) -> float:
    """``sqrt(zeta(2 (q - p)))``, the constant tying gamma to epsilon."""
    _check_window(p, q)
    return math.sqrt(zeta(2.0 * (q - p)))


def epsilon_of(schedule: NoiseSchedule, q: float) -> float:
    """Privacy level of a schedule for adjacency exponent ``q``."""
    c = holder_exponent(schedule.p, q)
    if schedule.degenerate:
        return math.inf
    return c / schedule.gamma


def gamma_for(epsilon: float, p: float, q: float) -> NoiseSchedule:
    """Schedule achieving ``epsilon`` (``epsilon = inf`` gives gamma = 0)."""
    if not epsilon > 0:
        raise InvalidScheduleError(f"epsilon must be > 0, got {epsilon}")
    c = holder_exponent(p, q)
    return NoiseSchedule(0.0 if math.isinf(epsilon) else c / epsilon, p)


# -- seeds and sampling --------------------------------------------------------


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Counter-based child seed: fold each key into the state with splitmix64.

    ``derive_seed(master, agent, rep)`` is independent of evaluation order, so
    sweep cells can run in any order and reproduce the same noise.
    """
    state = _splitmix64(int(master) & _MASK64)
    for key in keys:
        state = _splitmix64(state ^ _splitmix64(int(key) & _MASK64))
    return state


def laplace_noise(scales, seed: int) -> np.ndarray:
    """Independent ``Lap(scales[k])`` draws by inverse CDF.

    ``u ~ U(-1/2, 1/2)``, ``x = -b sign(u) ln(1 - 2|u|)``.
    """
    b = np.asarray(scales, dtype=float)
    rng = np.random.default_rng(seed)
    u = rng.random(b.shape) - 0.5
    mag = np.minimum(2.0 * np.abs(u), 1.0 - 2.0**-53)
    return -b * np.sign(u) * np.log1p(-mag)


@dataclass(frozen=True)
class PerturbedFunction:
    original: np.ndarray
    noise: np.ndarray
    perturbed: np.ndarray
    schedule: NoiseSchedule
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "original": self.original.tolist(),
                "noise": self.noise.tolist(),
                "perturbed": self.perturbed.tolist(),
                "schedule": {"gamma": self.schedule.gamma, "p": self.schedule.p},
                "seed": self.seed,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PerturbedFunction":
        d = json.loads(text)
        return cls(
            np.array(d["original"], dtype=float),
            np.array(d["noise"], dtype=float),
            np.array(d["perturbed"], dtype=float),
            NoiseSchedule(**d["schedule"]),
            int(d["seed"]),
        )


def perturb(coeffs, schedule: NoiseSchedule, seed: int) -> PerturbedFunction:
    """Add ``Lap(gamma / k**p)`` noise to each of the K given coefficients.

    Only indices 1..K are drawn; the tail beyond the basis would be discarded by
    truncation anyway.
    """
    c = np.asarray(coeffs, dtype=float)
    if schedule.degenerate:
        eta = np.zeros_like(c)
    else:
        eta = laplace_noise(schedule.scales(c.shape[0]), seed)
    return PerturbedFunction(c.copy(), eta, c + eta, schedule, int(seed))


def vq_norm(delta, q: float) -> float:
    """Weighted norm ``(sum_k (k**q delta_k)**2) ** 0.5`` with k starting at 1."""
    if not q > 1:
        raise DomainError(f"q must exceed 1, got {q}")
    d = np.asarray(delta, dtype=float)
    k = np.arange(1, d.shape[0] + 1, dtype=float)
    return float(np.linalg.norm(k**q * d))


@dataclass
class ScheduleReport:
    gamma: float
    p: float
    q: float | None
    l2_valid: bool
    privacy_valid: bool | None
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.l2_valid and self.privacy_valid is not False


def validate_schedule(gamma: float, p: float, q: float | None = None) -> ScheduleReport:
    """Check p > 1/2 (square-summable noise) and, given q, the window p < q - 1/2."""
    failures = []
    l2_ok = p > 0.5
    if not l2_ok:
        failures.append(f"p > 1/2 violated (p={p})")
    if gamma < 0:
        failures.append(f"gamma >= 0 violated (gamma={gamma})")
        l2_ok = False
    priv = None
    if q is not None:
        priv = True
        if not q > 1:
            priv = False
            failures.append(f"q > 1 violated (q={q})")
        if not p < q - 0.5:
            priv = False
            failures.append(f"p < q - 1/2 violated (p={p}, q - 1/2={q - 0.5})")
        if not p > 0.5:
            priv = False
    return ScheduleReport(gamma, p, q, l2_ok, priv, failures)


def boundedness_probability(
    r: float,
    scales: Sequence[float] | Callable[[np.ndarray], np.ndarray],
    K: int | None = None,
    family: str = "laplace",
) -> float:
    """Probability that every one of K independent noise terms satisfies ``|eta(k)| <= r``.

    Laplace terms have scale ``b(k)``; Gaussian terms are ``N(0, b(k))`` with
    ``b(k)`` the variance, so each factor is ``erf(r / sqrt(2 b(k)))``.
    """
    if not r > 0:
        raise DomainError("r must be positive")
    if callable(scales):
        if K is None:
            raise ValueError("K is required when scales is a callable")
        b = np.asarray(scales(np.arange(1, K + 1, dtype=float)), dtype=float)
    else:
        b = np.asarray(scales, dtype=float)[:K]
    if np.any(b <= 0):
        raise DomainError("all scales must be positive")
    if family == "laplace":
        log_terms = np.log1p(-np.exp(-r / b))
    elif family == "gaussian":
        with np.errstate(divide="ignore"):
            log_terms = np.log(erf(r / np.sqrt(2.0 * b)))
    else:
        raise ValueError(f"unknown family {family!r}")
    return float(np.exp(np.sum(log_terms)))


def expected_noise_norm(schedule: NoiseSchedule, corrected: bool = False) -> float:
    """Square root of the expected squared noise norm over the infinite sequence.

    The default takes ``E|eta|^2 = sum_k b_k^2 = gamma^2 zeta(2p)``, the value
    the accuracy bound is stated with.  ``corrected=True`` uses the Laplace
    variance ``2 b_k^2`` instead.
    """
    if schedule.degenerate:
        return 0.0
    val = schedule.gamma * math.sqrt(zeta(2.0 * schedule.p))
    return val * math.sqrt(2.0) if corrected else val


@dataclass
class AuditResult:
    bound: float
    bins_checked: int
    violations: int
    worst_excess_sigma: float


def empirical_dp_audit(
    c,
    c_prime,
    schedule: NoiseSchedule,
    q: float,
    coordinate: int,
    n_draws: int = 100_000,
    seed: int = 0,
    bins: int = 40,
    min_count: int = 200,
    n_sigma: float = 3.0,
) -> AuditResult:
    """Histogram ratio test of the released coordinate for two adjacent inputs.

    ``coordinate`` is 0-based.  Each bin with more than ``min_count`` hits in
    both histograms must satisfy ``n' <= exp(eps * dist) n`` (both ways) up to
    ``n_sigma`` standard deviations of the count difference.
    """
    c = np.asarray(c, dtype=float)
    cp = np.asarray(c_prime, dtype=float)
    diff = c - cp
    if np.count_nonzero(np.delete(diff, coordinate)):
        raise ValueError("adjacent pair must differ only in the audited coordinate")
    bound = math.exp(epsilon_of(schedule, q) * vq_norm(diff, q))
    b = schedule.gamma / (coordinate + 1) ** schedule.p
    ss = np.random.SeedSequence(seed).spawn(2)
    x = c[coordinate] + laplace_noise(np.full(n_draws, b), int(ss[0].generate_state(1, np.uint64)[0]))
    y = cp[coordinate] + laplace_noise(np.full(n_draws, b), int(ss[1].generate_state(1, np.uint64)[0]))
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    edges = np.linspace(lo, hi, bins + 1)
    n1, _ = np.histogram(x, edges)
    n2, _ = np.histogram(y, edges)
    mask = (n1 > min_count) & (n2 > min_count)
    violations = 0
    worst = -math.inf
    for a, bb in ((n1[mask], n2[mask]), (n2[mask], n1[mask])):
        sd = np.sqrt(bb * (1 - bb / n_draws) + bound**2 * a * (1 - a / n_draws))
        z = (bb - bound * a) / sd
        violations += int(np.count_nonzero(z > n_sigma))
        if z.size:
            worst = max(worst, float(z.max()))
    return AuditResult(bound, int(mask.sum()), violations, worst)
