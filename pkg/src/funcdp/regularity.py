"""Post-processing that restores smoothness and strong convexity.

Truncation drops high-degree coefficients.  Projection onto the class

    S = {h : alpha I <= Hess h <= beta I,  |grad h| <= u_bar}

is computed in coefficient space (Parseval makes the coefficient 2-norm the L2
norm) with the pointwise constraints imposed on a tensor grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import Basis, BoxDomain
from .errors import ConvergenceError

__all__ = [
    "RegularityClass",
    "GridSpec",
    "ProjectionConfig",
    "MembershipReport",
    "smoothen_truncate",
    "check_membership",
    "project_to_S",
    "class_params_for_logistic",
    "clip_sym_eigs",
]


@dataclass(frozen=True)
class RegularityClass:
    alpha: float
    beta: float
    u_bar: float
    domain: BoxDomain

    def __post_init__(self):
        if not 0 < self.alpha < self.beta:
            raise ValueError(f"need 0 < alpha < beta, got alpha={self.alpha}, beta={self.beta}")
        if not self.u_bar > 0:
            raise ValueError("u_bar must be positive")

    def scaled(self, n: float) -> "RegularityClass":
        return RegularityClass(n * self.alpha, n * self.beta, n * self.u_bar, self.domain)


@dataclass(frozen=True)
class GridSpec:
    """Tensor grid on which the class constraints are enforced.

    ``margin=None`` means one percent of alpha.
    """

    points_per_axis: int = 15
    margin: float | None = None

    def resolve_margin(self, cls: RegularityClass) -> float:
        m = 0.01 * cls.alpha if self.margin is None else float(self.margin)
        if self.points_per_axis < 2:
            raise ValueError("points_per_axis must be >= 2")
        if not 0 <= m < (cls.beta - cls.alpha) / 2:
            raise ValueError(f"margin {m} must lie in [0, (beta - alpha) / 2)")
        if m >= cls.u_bar:
            raise ValueError("margin must be smaller than u_bar")
        return m

    def points(self, domain: BoxDomain) -> np.ndarray:
        axes = [np.linspace(lo, hi, self.points_per_axis) for lo, hi in zip(domain.lower, domain.upper)]
        return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


@dataclass(frozen=True)
class ProjectionConfig:
    """Projection solver settings.

    Tolerances are relative: the Hessian residual is measured against the
    largest Hessian entry of the input (at least the tightened alpha), the
    gradient residual against the tightened u_bar, and the dual residual
    against the coefficient norm.
    """

    max_iters: int = 3000
    primal_tol: float = 1e-7
    dual_tol: float = 1e-9
    admm_rho: float = 1.0
    relaxation: float = 1.6
    fallback: bool = True

    def __post_init__(self):
        if not (self.primal_tol > 0 and self.dual_tol > 0 and self.admm_rho > 0):
            raise ValueError("tolerances and rho must be positive")
        if not 0 < self.relaxation < 2:
            raise ValueError("relaxation must lie in (0, 2)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def smoothen_truncate(basis: Basis, coeffs, target_degree: int):
    """Zero every coefficient whose basis function has degree > target_degree.

    Returns ``(truncated, distance)`` where distance is the L2 norm of the
    dropped part.
    """
    c = np.asarray(coeffs, dtype=float)
    if target_degree > basis.max_degree:
        raise ValueError("target degree exceeds the basis degree")
    keep = basis.degrees[: c.shape[0]] <= target_degree
    out = np.where(keep, c, 0.0)
    return out, float(np.linalg.norm(c[~keep]))


# -- constraint operators ------------------------------------------------------


class _Operators:
    """Hessian and gradient of the first K basis functions at the grid points."""

    def __init__(self, basis: Basis, K: int, grid: GridSpec):
        pts = grid.points(basis.domain)
        _, dE, d2E = basis.derivative_matrices(pts)
        self.points = pts
        self.d = basis.d
        self.K = K
        self.grad = dE[..., :K]  # (J, d, K)
        self.hess = d2E[..., :K]  # (J, d, d, K)
        iu = np.triu_indices(self.d)
        w = np.where(iu[0] == iu[1], 1.0, math.sqrt(2.0))
        # svec: upper triangle with sqrt(2) on off-diagonals, Frobenius-isometric
        self.iu = iu
        self.svec_w = w
        self.H = (self.hess[:, iu[0], iu[1], :] * w[None, :, None])  # (J, m, K)
        self._system = None


def _operators(basis: Basis, K: int, grid: GridSpec) -> _Operators:
    cache = basis.__dict__.setdefault("_op_cache", {})
    key = (K, grid.points_per_axis)
    if key not in cache:
        cache[key] = _Operators(basis, K, grid)
    return cache[key]


def _smat(v, iu, w, d):
    M = np.zeros(v.shape[:-1] + (d, d))
    vals = v / w
    M[..., iu[0], iu[1]] = vals
    M[..., iu[1], iu[0]] = vals
    return M


def clip_sym_eigs(M, lo: float, hi: float) -> np.ndarray:
    """Frobenius projection of symmetric matrices onto ``lo I <= M <= hi I``.

    Closed form for 2x2 blocks, ``eigh`` otherwise.  ``M`` has shape (..., d, d).
    """
    M = np.asarray(M, dtype=float)
    if M.shape[-1] == 2:
        a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 1, 1]
        m = 0.5 * (a + c)
        r = np.hypot(0.5 * (a - c), b)
        th = 0.5 * np.arctan2(2.0 * b, a - c)
        cs, sn = np.cos(th), np.sin(th)
        lp = np.clip(m + r, lo, hi)
        lm = np.clip(m - r, lo, hi)
        out = np.empty_like(M)
        out[..., 0, 0] = lp * cs * cs + lm * sn * sn
        out[..., 1, 1] = lp * sn * sn + lm * cs * cs
        out[..., 0, 1] = out[..., 1, 0] = (lp - lm) * sn * cs
        return out
    w, V = np.linalg.eigh(M)
    return (V * np.clip(w, lo, hi)[..., None, :]) @ np.swapaxes(V, -1, -2)


def _sym_eig_bounds(M):
    if M.shape[-1] == 2:
        a, b, c = M[..., 0, 0], M[..., 0, 1], M[..., 1, 1]
        m = 0.5 * (a + c)
        r = np.hypot(0.5 * (a - c), b)
        return m - r, m + r
    w = np.linalg.eigvalsh(M)
    return w[..., 0], w[..., -1]


# -- membership -----------------------------------------------------------------


@dataclass
class MembershipReport:
    min_eig: float
    max_eig: float
    max_grad: float
    lower_bound: float
    upper_bound: float
    grad_bound: float
    margin: float
    worst: dict = field(default_factory=dict)
    violations: int = 0

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json(self) -> str:
        d = asdict(self)
        d["passed"] = self.passed
        return json.dumps(d)


def check_membership(basis: Basis, coeffs, cls: RegularityClass, grid: GridSpec = GridSpec(), tol: float = 0.0):
    """Evaluate the tightened class constraints at every grid point."""
    c = np.asarray(coeffs, dtype=float)
    ops = _operators(basis, c.shape[0], grid)
    margin = grid.resolve_margin(cls)
    lo, hi, ub = cls.alpha + margin, cls.beta - margin, cls.u_bar - margin
    H = ops.hess @ c
    g = np.linalg.norm(ops.grad @ c, axis=1)
    emin, emax = _sym_eig_bounds(H)
    lo_v, hi_v, g_v = lo - emin, emax - hi, g - ub
    worst = {}
    for name, v in (("hessian_lower", lo_v), ("hessian_upper", hi_v), ("gradient", g_v)):
        j = int(np.argmax(v))
        worst[name] = {"violation": float(v[j]), "location": ops.points[j].tolist()}
    viol = int(np.count_nonzero(lo_v > tol) + np.count_nonzero(hi_v > tol) + np.count_nonzero(g_v > tol))
    return MembershipReport(
        float(emin.min()), float(emax.max()), float(g.max()), lo, hi, ub, margin, worst, viol
    )


# -- projection -----------------------------------------------------------------


def _scaled_system(ops: _Operators):
    """Stacked constraint operator with every grid-point block scaled to unit size.

    High-degree derivatives grow sharply towards the boundary; without the
    per-point scaling ADMM crawls.  The factorization of ``A^T A`` is cached
    on the operator bundle and reused for every rho.
    """
    if ops._system is None:
        J, d = ops.points.shape
        m = ops.H.shape[1]
        sH = 1.0 / np.maximum(np.sqrt(np.sum(ops.H**2, axis=(1, 2)) / m), 1e-300)
        sG = 1.0 / np.maximum(np.sqrt(np.sum(ops.grad**2, axis=(1, 2)) / d), 1e-300)
        A = np.concatenate(
            [(sH[:, None, None] * ops.H).reshape(J * m, ops.K), (sG[:, None, None] * ops.grad).reshape(J * d, ops.K)]
        )
        lam, V = np.linalg.eigh(A.T @ A)
        ops._system = (A, sH, sG, lam, V)
    return ops._system


def _bounds(cls: RegularityClass, grid: GridSpec):
    margin = grid.resolve_margin(cls)
    return cls.alpha + margin, cls.beta - margin, cls.u_bar - margin


def _violation(ops: _Operators, c, lo, hi, ub) -> float:
    """Largest constraint violation over the grid (<= 0 means feasible)."""
    emin, emax = _sym_eig_bounds(ops.hess @ c)
    g = np.linalg.norm(ops.grad @ c, axis=1)
    return float(max((lo - emin).max(), (emax - hi).max(), (g - ub).max()))


def _interior_point(basis: Basis, K: int, lo, hi, ub) -> np.ndarray:
    """Coefficients of ``kappa/2 |x - center|^2``, strictly inside the tightened class."""
    R = basis.domain.circumradius
    kappa = min(0.5 * (lo + hi), 0.5 * (lo + ub / R))
    if not lo < kappa < hi or not kappa * R < ub:
        raise ConvergenceError("tightened class contains no isotropic quadratic to anchor the projection")
    # exact in the scaled monomials: t = (x - center) / h
    h = basis.domain.half_widths
    mono = np.zeros(basis.dim)
    for j, idx in enumerate(basis.index_map):
        if sum(idx) == 2 and max(idx) == 2:
            mono[j] = 0.5 * kappa * h[int(np.argmax(idx))] ** 2
    # mono = R^T c, R upper-triangular in graded order -> solve for c
    c = np.linalg.solve(basis.ortho_matrix.T, mono)
    return c[:K]


def _repair(ops, c, anchor, lo, hi, ub):
    """Smallest blend ``(1 - t) c + t anchor`` that is feasible on the grid (convexity makes t monotone)."""
    if _violation(ops, c, lo, hi, ub) <= 0:
        return c, 0.0
    a, b = 0.0, 1.0
    for _ in range(60):
        t = 0.5 * (a + b)
        if _violation(ops, (1 - t) * c + t * anchor, lo, hi, ub) <= 0:
            b = t
        else:
            a = t
    return (1 - b) * c + b * anchor, b


def _admm(ops, f, lo, hi, ub, cfg):
    A, sH, sG, lam, V = _scaled_system(ops)
    J, d = ops.points.shape
    m = ops.H.shape[1]
    nH = J * m
    h_scale = max(lo, float(np.abs(ops.H @ f).max()))
    tol_h = cfg.primal_tol * h_scale
    tol_g = cfg.primal_tol * ub

    def proj(v):
        Mh = _smat(v[:nH].reshape(J, m) / sH[:, None], ops.iu, ops.svec_w, d)
        Mh = clip_sym_eigs(Mh, lo, hi)
        zh = Mh[:, ops.iu[0], ops.iu[1]] * ops.svec_w * sH[:, None]
        g = v[nH:].reshape(J, d) / sG[:, None]
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        g = g * np.minimum(1.0, ub / np.maximum(nrm, 1e-300))
        return np.concatenate([zh.ravel(), (g * sG[:, None]).ravel()])

    def block_res(r):
        rh = (np.linalg.norm(r[:nH].reshape(J, m), axis=1) / sH).max()
        rg = (np.linalg.norm(r[nH:].reshape(J, d), axis=1) / sG).max()
        return max(rh / tol_h, rg / tol_g)

    rho, relax = cfg.admm_rho, cfg.relaxation
    c = f.copy()
    z = proj(A @ c)
    u = np.zeros_like(z)
    Vtf = V.T @ f
    r_rel = s_norm = math.inf
    for it in range(1, cfg.max_iters + 1):
        c = V @ ((Vtf + rho * (V.T @ (A.T @ (z - u)))) / (1.0 + rho * lam))
        Ac = A @ c
        Ah = relax * Ac + (1.0 - relax) * z
        z_old = z
        z = proj(Ah + u)
        u += Ah - z
        r = Ac - z
        s_norm = rho * np.linalg.norm(A.T @ (z - z_old))
        r_rel = block_res(r)
        if r_rel <= 1.0 and s_norm <= cfg.dual_tol * max(1.0, np.linalg.norm(c)):
            return c, {"method": "admm", "iterations": it, "rho": rho, "primal": float(r_rel), "dual": float(s_norm)}
        if it % 10 == 0:
            r_norm = np.linalg.norm(r)
            if r_norm > 10 * s_norm:
                rho *= 2.0
                u /= 2.0
            elif s_norm > 10 * r_norm:
                rho /= 2.0
                u *= 2.0
    return None, {"method": "admm", "iterations": cfg.max_iters, "primal": float(r_rel), "dual": float(s_norm)}


def _conic(ops, f, lo, hi, ub):
    """The same projection as a conic program, solved by an interior-point method."""
    import clarabel
    from scipy import sparse

    J, d = ops.points.shape
    K = ops.K
    rows, rhs, cones = [], [], []

    def add(block, b, cone):
        # positive scaling of a cone block leaves the cone constraint unchanged
        s = 1.0 / max(np.linalg.norm(block), 1e-300)
        rows.append(block * s)
        rhs.append(np.asarray(b, dtype=float) * s)
        cones.append(cone)

    if d == 2:
        a, b, e = ops.hess[:, 0, 0], ops.hess[:, 0, 1], ops.hess[:, 1, 1]
        for j in range(J):
            w = np.stack([a[j] - e[j], 2.0 * b[j]])
            # lo I <= H  <=>  tr H - 2 lo >= |(a - e, 2b)|
            add(np.vstack([-(a[j] + e[j]), -w]), [-2.0 * lo, 0.0, 0.0], clarabel.SecondOrderConeT(3))
            add(np.vstack([a[j] + e[j], -w]), [2.0 * hi, 0.0, 0.0], clarabel.SecondOrderConeT(3))
    else:
        # column-major upper triangle with sqrt(2) off-diagonal weights
        tri = [(i, k) for k in range(d) for i in range(k + 1)]
        wts = np.array([1.0 if i == k else math.sqrt(2.0) for i, k in tri])
        eye = np.array([1.0 if i == k else 0.0 for i, k in tri])
        for j in range(J):
            Hs = np.stack([ops.hess[j, i, k] for i, k in tri]) * wts[:, None]
            add(-Hs, -lo * eye, clarabel.PSDTriangleConeT(d))
            add(Hs, hi * eye, clarabel.PSDTriangleConeT(d))
    for j in range(J):
        add(np.vstack([np.zeros(K), -ops.grad[j]]), np.r_[ub, np.zeros(d)], clarabel.SecondOrderConeT(d + 1))
    A = sparse.csc_matrix(np.vstack(rows))
    b = np.concatenate(rhs)
    # solve for the displacement c - f: far better conditioned when |f| is large
    b_shift = b - A @ f
    attempts = (("displacement", 1e-10), ("epigraph", 1e-8))
    status = ""
    for form, tol in attempts:
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = settings.tol_gap_rel = settings.tol_feas = tol
        if form == "displacement":
            sol = clarabel.DefaultSolver(sparse.identity(K, format="csc"), np.zeros(K), A, b_shift, cones, settings).solve()
            x = f + np.asarray(sol.x, dtype=float)
        else:
            # minimize tau subject to |delta| <= tau
            A2 = sparse.vstack(
                [
                    sparse.hstack([A, sparse.csc_matrix((A.shape[0], 1))]),
                    sparse.hstack([sparse.csc_matrix((1, K)), -sparse.identity(1)]),
                    sparse.hstack([-sparse.identity(K), sparse.csc_matrix((K, 1))]),
                ],
                format="csc",
            )
            q = np.zeros(K + 1)
            q[-1] = 1.0
            b2 = np.concatenate([b_shift, np.zeros(K + 1)])
            sol = clarabel.DefaultSolver(
                sparse.csc_matrix((K + 1, K + 1)), q, A2, b2, cones + [clarabel.SecondOrderConeT(K + 1)], settings
            ).solve()
            x = f + np.asarray(sol.x, dtype=float)[:K]
        status = str(sol.status)
        if status in ("Solved", "AlmostSolved") and np.all(np.isfinite(x)):
            return x, {"method": "interior-point", "iterations": int(sol.iterations), "status": status, "form": form}
    raise ConvergenceError(f"interior-point fallback failed ({status})", status=status)


def project_to_S(
    basis: Basis,
    coeffs,
    cls: RegularityClass,
    grid: GridSpec = GridSpec(),
    cfg: ProjectionConfig = ProjectionConfig(),
    return_info: bool = False,
):
    """Closest coefficient vector (2-norm) satisfying the tightened class on the grid.

    ADMM on ``min 1/2 |c - f|^2`` subject to ``A c in C``, where A stacks the
    Hessian (svec form) and gradient at each grid point and C is the product
    of eigenvalue intervals and balls.  If ADMM has not converged after
    ``cfg.max_iters`` iterations the same problem goes to an interior-point
    conic solver (unless ``cfg.fallback`` is off, in which case
    :class:`ConvergenceError` is raised).  Either way the result is finally
    pulled towards a strictly feasible quadratic by the smallest amount that
    removes any residual grid violation, so the output always passes
    :func:`check_membership`.
    """
    f = np.asarray(coeffs, dtype=float)
    K = f.shape[0]
    ops = _operators(basis, K, grid)
    lo, hi, ub = _bounds(cls, grid)
    c, info = _admm(ops, f, lo, hi, ub, cfg)
    if c is None:
        if not cfg.fallback:
            raise ConvergenceError(
                f"projection did not converge in {cfg.max_iters} iterations", primal=info["primal"], dual=info["dual"]
            )
        admm_info = info
        c, info = _conic(ops, f, lo, hi, ub)
        info["admm"] = admm_info
    anchor = _interior_point(basis, K, lo, hi, ub)
    c, t = _repair(ops, c, anchor, lo, hi, ub)
    info["repair"] = t
    if return_info:
        return c, info
    return c


def class_params_for_logistic(n_samples: int, lam: float, r_D: float, d: int = 2) -> RegularityClass:
    """Class constants covering an agent's regularized logistic objective on ``[-r_D, r_D]^d``."""
    alpha = n_samples * lam
    beta = n_samples * lam + n_samples * r_D * math.sqrt(2) + math.exp(2 * r_D)
    u_bar = math.sqrt(2) * n_samples * (lam * r_D + math.exp(2 * r_D))
    return RegularityClass(alpha, beta, u_bar, BoxDomain.cube(r_D, d))
