"""Closed-form accuracy bounds for argmin perturbation.

``kappa`` is the class-K-infinity modulus with
``|argmin f - argmin g| <= kappa(||f - g||)`` for f, g in the regularity class;
only its inverse has a closed form, so ``kappa`` itself is obtained by
bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import quad

from .basis import BoxDomain
from .errors import DomainError
from .privacy import NoiseSchedule, expected_noise_norm, zeta
from .regularity import RegularityClass

__all__ = [
    "DomainGeometry",
    "solid_angle",
    "lambda_D",
    "mu",
    "kappa_inv",
    "kappa",
    "accuracy_bound",
    "tradeoff_bound",
    "large_domain_constant",
    "large_domain_bound",
    "large_domain_tradeoff",
    "interior_radius",
]


@dataclass(frozen=True)
class DomainGeometry:
    d: int
    r_D: float  # inradius
    R_D: float  # circumradius about the incenter
    d_D: float  # diameter

    def __post_init__(self):
        if not (0 < self.r_D <= self.R_D <= self.d_D):
            raise ValueError(f"need 0 < r_D <= R_D <= d_D, got {self.r_D}, {self.R_D}, {self.d_D}")

    @classmethod
    def from_box(cls, domain: BoxDomain) -> "DomainGeometry":
        return cls(domain.d, domain.inradius, domain.circumradius, domain.diameter)

    @property
    def lambda_D(self) -> float:
        return lambda_D(self)


def solid_angle(theta: float, d: int) -> float:
    """Solid angle at the apex of a cone with half-angle ``theta`` in R^d."""
    if d < 2:
        raise DomainError("solid angle needs d >= 2")
    if not 0 <= theta <= math.pi:
        raise DomainError("theta must lie in [0, pi]")
    pref = 2 * math.pi ** ((d - 1) / 2) / math.gamma((d - 1) / 2)
    if d == 2:
        integral = theta
    else:
        integral, _ = quad(lambda phi: math.sin(phi) ** (d - 2), 0.0, theta, epsabs=0, epsrel=1e-13)
    return pref * integral


def lambda_D(geom: DomainGeometry) -> float:
    """Guaranteed fraction of any small ball centered in D that lies inside D."""
    total = 2 * math.pi ** (geom.d / 2) / math.gamma(geom.d / 2)
    return solid_angle(math.atan(geom.r_D / geom.R_D), geom.d) / total


def mu(r: float, alpha: float, beta: float, u_bar: float) -> float:
    r = float(r)
    if r < 0:
        raise DomainError("r must be nonnegative")
    if r == 0:
        return 0.0
    den = 2.0 * math.sqrt(alpha * beta * r * r + 2.0 * (beta + alpha) * u_bar * r + 4.0 * u_bar * u_bar)
    return alpha * r * r / den


def kappa_inv(r: float, alpha: float, beta: float, u_bar: float, geom: DomainGeometry) -> float:
    d = geom.d
    const = alpha**2 * math.pi ** (d / 2) / (d * 2 ** (d + 3) * math.gamma(d / 2))
    return const * lambda_D(geom) * (geom.r_D / geom.d_D) ** d * r**4 * mu(r, alpha, beta, u_bar) ** d


def kappa(s: float, alpha: float, beta: float, u_bar: float, geom: DomainGeometry, steps: int = 200) -> float:
    """Inverse of ``kappa_inv`` by bracketing and bisection in log(r)."""
    s = float(s)
    if s < 0:
        raise DomainError("kappa is defined on [0, inf)")
    if s == 0:
        return 0.0
    if math.isinf(s):
        return math.inf
    f = lambda r: kappa_inv(r, alpha, beta, u_bar, geom)
    lo = hi = 1.0
    while f(hi) < s:
        hi *= 2.0
    while f(lo) >= s:
        lo *= 0.5
    a, b = math.log(lo), math.log(hi)
    for _ in range(steps):
        m = 0.5 * (a + b)
        if f(math.exp(m)) < s:
            a = m
        else:
            b = m
        if b - a < 1e-15:
            break
    return math.exp(0.5 * (a + b))


def _kappa_n(cls: RegularityClass, n: int, geom: DomainGeometry):
    # the aggregate of n class members lies in the class scaled by n
    a, b, u = n * cls.alpha, n * cls.beta, n * cls.u_bar
    return lambda s: kappa(s, a, b, u, geom)


def accuracy_bound(
    schedules: Sequence[NoiseSchedule],
    eps_smooth: Sequence[float],
    cls: RegularityClass,
    geom: DomainGeometry | None = None,
    corrected: bool = False,
) -> float:
    """Bound on ``E|x_tilde - x_star|`` for n agents perturbing with ``schedules``.

    ``sum_i kappa_n(gamma_i sqrt(zeta(2 p_i))) + kappa_n(eps_smooth_i)`` where
    ``kappa_n`` uses the class scaled by ``n = len(schedules)``.
    """
    if len(schedules) != len(eps_smooth):
        raise ValueError("one smoothing distance per schedule is required")
    geom = geom or DomainGeometry.from_box(cls.domain)
    k = _kappa_n(cls, len(schedules), geom)
    return sum(k(expected_noise_norm(s, corrected)) + k(e) for s, e in zip(schedules, eps_smooth))


def tradeoff_bound(
    eps: Sequence[float],
    q: Sequence[float],
    eps_smooth: Sequence[float],
    cls: RegularityClass,
    geom: DomainGeometry | None = None,
) -> float:
    """Privacy-accuracy curve ``sum_i kappa_n(zeta(q_i) / eps_i) + kappa_n(eps_smooth_i)``.

    Assumes the decay exponent ``p_i = q_i / 2``.
    """
    if not len(eps) == len(q) == len(eps_smooth):
        raise ValueError("eps, q and eps_smooth must have equal length")
    geom = geom or DomainGeometry.from_box(cls.domain)
    k = _kappa_n(cls, len(eps), geom)
    total = 0.0
    for e, qi, es in zip(eps, q, eps_smooth):
        if not qi > 1:
            raise DomainError(f"q must exceed 1, got {qi}")
        total += k(zeta(qi) / e) + k(es)
    return total


def large_domain_constant(alpha: float, beta: float, d: int) -> float:
    if not alpha < beta:
        raise DomainError("large-domain constant needs alpha < beta")
    num = d * (d + 2) * (d + 4) * (beta - alpha) ** (d + 2) * math.gamma(d / 2)
    den = 4 * (alpha * beta) ** (d / 2 + 2) * math.pi ** (d / 2)
    return num / den


def interior_radius(alpha: float, beta: float, r_D: float) -> float:
    """Radius about the incenter inside which both minimizers must lie."""
    return (beta - alpha) / (alpha + beta + 2 * math.sqrt(alpha * beta)) * r_D


def large_domain_bound(norm_diff: float, alpha: float, beta: float, d: int) -> float:
    """``L ||f - g|| ** (2 / (d + 4))`` for interior minimizers."""
    return large_domain_constant(alpha, beta, d) * float(norm_diff) ** (2.0 / (d + 4))


def large_domain_tradeoff(
    eps: Sequence[float],
    q: Sequence[float],
    eps_smooth: Sequence[float],
    alpha: float,
    beta: float,
    d: int,
) -> float:
    """Aggregate interior-minimizer bound over n agents with ``p_i = q_i / 2``."""
    n = len(eps)
    L = large_domain_constant(alpha, beta, d)
    ex = 2.0 / (d + 4)
    terms = [(zeta(qi) / e) ** ex + es**ex for e, qi, es in zip(eps, q, eps_smooth)]
    return L / n**2 * float(np.sum(terms))
