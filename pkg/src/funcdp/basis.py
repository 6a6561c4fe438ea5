"""Orthonormal polynomial bases of L2 on a box.

The basis is produced by Gram-Schmidt on the monomials ("Taylor functions")
taken in graded-lexicographic order, so that every prefix of the basis spans
the polynomials up to some total degree.  Monomials are expressed in the
affinely rescaled coordinate ``t = (x - center) / half_width`` which lives in
``[-1, 1]^d``; this keeps the moment matrix tractable at degree 14 without
changing the spanned spaces or the resulting orthonormal functions.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from math import comb, prod
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import DomainError, NumericalRankError

__all__ = [
    "BoxDomain",
    "Basis",
    "graded_lex_indices",
    "monomial_moment",
    "build_basis",
    "synthesize",
    "gradient",
    "hessian",
    "analyze",
    "l2_norm",
    "quadrature_rule",
]

# relative slack when deciding whether a point sits on the boundary
_BOUNDARY_RTOL = 1e-12


@dataclass(frozen=True)
class BoxDomain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) == 0 or len(lo) != len(hi):
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(not l < u for l, u in zip(lo, hi)):
            raise ValueError(f"degenerate box: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, half_width: float, d: int = 2) -> "BoxDomain":
        """The box ``[-half_width, half_width]^d``."""
        return cls((-half_width,) * d, (half_width,) * d)

    @property
    def d(self) -> int:
        return len(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.array(self.lower) + np.array(self.upper))

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (np.array(self.upper) - np.array(self.lower))

    @property
    def volume(self) -> float:
        return float(prod(u - l for l, u in zip(self.lower, self.upper)))

    @property
    def inradius(self) -> float:
        return float(self.half_widths.min())

    @property
    def circumradius(self) -> float:
        # about the center, which is an incenter of the box
        return float(np.linalg.norm(self.half_widths))

    @property
    def diameter(self) -> float:
        return 2.0 * self.circumradius

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        slack = _BOUNDARY_RTOL * (1.0 + np.abs(np.array(self.upper)) + np.abs(np.array(self.lower)))
        return np.all((pts >= np.array(self.lower) - slack) & (pts <= np.array(self.upper) + slack), axis=1)

    def project(self, points) -> np.ndarray:
        """Euclidean projection onto the box (coordinate clamp)."""
        return np.clip(points, self.lower, self.upper)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}

    @classmethod
    def from_dict(cls, data: dict) -> "BoxDomain":
        return cls(tuple(data["lower"]), tuple(data["upper"]))


def graded_lex_indices(d: int, max_degree: int) -> list[tuple[int, ...]]:
    """Multi-indices of total degree <= max_degree.

    Sorted by degree, then lexicographically (ascending) on the exponent tuple.
    """
    out = []
    for deg in range(max_degree + 1):
        out.extend(sorted(a for a in itertools.product(range(deg + 1), repeat=d) if sum(a) == deg))
    return out


def monomial_moment(domain: BoxDomain, a: Sequence[int], b: Sequence[int]) -> float:
    """Closed-form integral of ``x**a * x**b`` over the box."""
    total = 1.0
    for lo, hi, ai, bi in zip(domain.lower, domain.upper, a, b):
        k = ai + bi + 1
        total *= (hi**k - lo**k) / k
    return total


def _reference_moment(k: int, one):
    # integral of t**k over [-1, 1], in the arithmetic type of ``one``
    return one * 0 if k % 2 else (one * 2) / (k + 1)


class Basis:
    """Orthonormal polynomial basis on a box.

    ``ortho_matrix[k]`` holds the coefficients of ``e_k`` in the scaled monomials
    listed by ``index_map``; it is lower triangular.
    """

    def __init__(self, domain: BoxDomain, max_degree: int, index_map, ortho_matrix):
        self.domain = domain
        self.max_degree = int(max_degree)
        self.index_map = tuple(tuple(int(e) for e in a) for a in index_map)
        R = np.array(ortho_matrix, dtype=np.float64)
        R.setflags(write=False)
        self.ortho_matrix = R
        self._exponents = np.array(self.index_map, dtype=int).reshape(len(self.index_map), domain.d)
        self.degrees = self._exponents.sum(axis=1)
        self.degrees.setflags(write=False)
        if R.shape != (self.dim, self.dim):
            raise ValueError("ortho_matrix shape does not match index_map")

    @property
    def d(self) -> int:
        return self.domain.d

    @property
    def dim(self) -> int:
        return len(self.index_map)

    def __repr__(self):
        return f"Basis(domain={self.domain}, max_degree={self.max_degree}, dim={self.dim})"

    def truncation_dim(self, degree: int) -> int:
        """Number of leading basis functions of degree <= ``degree``."""
        return int(np.count_nonzero(self.degrees <= degree))

    def _scaled(self, points, check: bool = True) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[-1] != self.d:
            raise ValueError(f"points must have trailing dimension {self.d}")
        if check and not np.all(self.domain.contains(pts)):
            bad = pts[~self.domain.contains(pts)][0]
            raise DomainError(f"point {bad} lies outside {self.domain}")
        return (pts - self.domain.center) / self.domain.half_widths

    def _power_tables(self, t):
        m = self.max_degree
        j = np.arange(m + 1)
        p0 = t[:, :, None] ** j  # (N, d, m+1)
        p1 = np.zeros_like(p0)
        p2 = np.zeros_like(p0)
        if m >= 1:
            p1[:, :, 1:] = j[1:] * p0[:, :, :-1]
        if m >= 2:
            p2[:, :, 2:] = j[2:] * (j[2:] - 1) * p0[:, :, :-2]
        return p0, p1, p2

    def monomials(self, points, order: int = 0, check: bool = True):
        """Scaled monomials and (optionally) their x-derivatives.

        Returns ``V`` of shape (N, dim); with ``order >= 1`` also ``dV`` of shape
        (N, d, dim); with ``order == 2`` also ``d2V`` of shape (N, d, d, dim).
        """
        t = self._scaled(points, check)
        p0, p1, p2 = self._power_tables(t)
        E = self._exponents
        d = self.d
        # factors[i] : (N, dim) table of t_i ** E[:, i] (and derivatives)
        f0 = [p0[:, i, E[:, i]] for i in range(d)]
        V = np.prod(np.stack(f0), axis=0)
        if order == 0:
            return V
        h = self.domain.half_widths
        f1 = [p1[:, i, E[:, i]] / h[i] for i in range(d)]
        dV = np.empty((t.shape[0], d, self.dim))
        for i in range(d):
            dV[:, i] = _prod_except(f0, {i: f1[i]})
        if order == 1:
            return V, dV
        f2 = [p2[:, i, E[:, i]] / h[i] ** 2 for i in range(d)]
        d2V = np.empty((t.shape[0], d, d, self.dim))
        for i in range(d):
            d2V[:, i, i] = _prod_except(f0, {i: f2[i]})
            for j in range(i + 1, d):
                d2V[:, i, j] = d2V[:, j, i] = _prod_except(f0, {i: f1[i], j: f1[j]})
        return V, dV, d2V

    def eval_matrix(self, points, check: bool = True) -> np.ndarray:
        """``E[n, k] = e_k(x_n)``."""
        return self.monomials(points, 0, check) @ self.ortho_matrix.T

    def derivative_matrices(self, points, check: bool = True):
        """Values, gradients and Hessians of every basis function at ``points``.

        Shapes: (N, dim), (N, d, dim), (N, d, d, dim).
        """
        V, dV, d2V = self.monomials(points, 2, check)
        R = self.ortho_matrix.T
        return V @ R, dV @ R, d2V @ R

    def monomial_coefficients(self, coeffs) -> np.ndarray:
        """Coefficients of ``sum_k c_k e_k`` in the scaled monomials."""
        return self.ortho_matrix.T @ np.asarray(coeffs, dtype=float)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.to_dict(),
            "max_degree": self.max_degree,
            "index_map": [list(a) for a in self.index_map],
            "ortho_matrix": [float(v).hex() for v in self.ortho_matrix.ravel()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Basis":
        n = len(data["index_map"])
        R = np.array([float.fromhex(s) for s in data["ortho_matrix"]]).reshape(n, n)
        return cls(BoxDomain.from_dict(data["domain"]), data["max_degree"], data["index_map"], R)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Basis":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _prod_except(factors, replace):
    out = None
    for i, f in enumerate(factors):
        g = replace.get(i, f)
        out = g.copy() if out is None else out * g
    return out


def build_basis(domain: BoxDomain, max_degree: int) -> Basis:
    """Orthonormalize the scaled monomials of degree <= max_degree on ``domain``.

    Modified Gram-Schmidt in the L2(domain) inner product, computed from exact
    moments, with one re-orthogonalization sweep.  The arithmetic is carried in
    extended precision because double precision leaves ~2e-8 of orthogonality
    error at degree 14 in two dimensions.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be >= 0")
    return _build_basis_cached(domain, int(max_degree))


@lru_cache(maxsize=16)
def _build_basis_cached(domain: BoxDomain, max_degree: int) -> Basis:
    index_map = graded_lex_indices(domain.d, max_degree)
    n = len(index_map)
    assert n == comb(max_degree + domain.d, domain.d)
    one = np.longdouble(1)
    E = np.array(index_map, dtype=int).reshape(n, domain.d)
    jac = np.longdouble(1)
    for h in domain.half_widths:
        jac *= np.longdouble(h)
    kmax = 2 * max_degree
    mom = np.array([_reference_moment(k, one) for k in range(kmax + 1)], dtype=np.longdouble)
    G = np.full((n, n), jac, dtype=np.longdouble)
    for i in range(domain.d):
        G *= mom[E[:, i][:, None] + E[:, i][None, :]]

    R = np.zeros((n, n), dtype=np.longdouble)
    for k in range(n):
        v = np.zeros(n, dtype=np.longdouble)
        v[k] = one
        start = v @ G @ v
        for _sweep in range(2):
            for j in range(k):
                v -= (R[j] @ (G @ v)) * R[j]
        nrm2 = v @ G @ v
        if not np.isfinite(nrm2) or nrm2 <= 64 * np.finfo(np.longdouble).eps * start:
            raise NumericalRankError(
                f"monomial {index_map[k]} is numerically dependent on its predecessors "
                f"(residual norm^2 {float(nrm2):.3e}); degree {max_degree} is too high"
            )
        R[k] = v / np.sqrt(nrm2)
    return Basis(domain, max_degree, index_map, R.astype(np.float64))


def _as_points(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_2d(arr), arr.ndim == 1


def synthesize(basis: Basis, coeffs, x):
    """Value of ``sum_k c_k e_k`` at a point (or an (N, d) batch of points)."""
    pts, single = _as_points(x)
    vals = basis.monomials(pts) @ basis.monomial_coefficients(coeffs)
    return float(vals[0]) if single else vals


def gradient(basis: Basis, coeffs, x):
    pts, single = _as_points(x)
    _, dV = basis.monomials(pts, order=1)
    g = dV @ basis.monomial_coefficients(coeffs)
    return g[0] if single else g


def hessian(basis: Basis, coeffs, x):
    pts, single = _as_points(x)
    _, _, d2V = basis.monomials(pts, order=2)
    H = d2V @ basis.monomial_coefficients(coeffs)
    return H[0] if single else H


@lru_cache(maxsize=32)
def _tensor_rule(domain: BoxDomain, order: int):
    x, w = leggauss(order)
    c, h = domain.center, domain.half_widths
    axes = [c[i] + h[i] * x for i in range(domain.d)]
    wts = [h[i] * w for i in range(domain.d)]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    W = np.ones(pts.shape[0])
    for g in np.meshgrid(*wts, indexing="ij"):
        W *= g.ravel()
    pts.setflags(write=False)
    W.setflags(write=False)
    return pts, W


def quadrature_rule(domain: BoxDomain, order: int):
    """Tensor Gauss-Legendre nodes (N, d) and weights (N,) on the box."""
    return _tensor_rule(domain, int(order))


def analyze(basis: Basis, f: Callable, quad_order: int | None = None) -> np.ndarray:
    """Coefficients ``<f, e_k>`` by tensor Gauss-Legendre quadrature.

    ``f`` is called once on an (N, d) array of nodes and must return N values.
    """
    if quad_order is None:
        quad_order = basis.max_degree + 10
    if quad_order < basis.max_degree + 1:
        raise ValueError("quad_order must be at least max_degree + 1")
    pts, W = quadrature_rule(basis.domain, quad_order)
    vals = np.asarray(f(pts), dtype=float).reshape(-1)
    if vals.shape[0] != pts.shape[0]:
        raise ValueError("f must return one value per node")
    if not np.all(np.isfinite(vals)):
        raise ValueError("f returned non-finite values at quadrature nodes")
    return basis.eval_matrix(pts, check=False).T @ (W * vals)


def l2_norm(domain: BoxDomain, f: Callable, quad_order: int = 30) -> float:
    """Quadrature L2(domain) norm of a vectorized callable."""
    pts, W = quadrature_rule(domain, quad_order)
    vals = np.asarray(f(pts), dtype=float)
    return float(np.sqrt(np.sum(W * vals**2)))
