"""Differentially private distributed optimization by perturbing objective functions.

Each agent expands its local objective in an orthonormal polynomial basis,
adds decaying Laplace noise to the coefficients, truncates, and projects the
result back onto a class of strongly convex, smooth functions before the
network minimizes the sum.
"""

from .basis import BoxDomain, Basis, build_basis, analyze, synthesize, l2_norm
from .privacy import NoiseSchedule, gamma_for, epsilon_of, perturb, zeta
from .regularity import RegularityClass, GridSpec, ProjectionConfig, project_to_S, check_membership
from .bounds import DomainGeometry, kappa, accuracy_bound, tradeoff_bound
from .errors import ConfigError, ConvergenceError, DomainError, InvalidScheduleError, NumericalRankError

__version__ = "0.1.0"

__all__ = [
    "BoxDomain",
    "Basis",
    "build_basis",
    "analyze",
    "synthesize",
    "l2_norm",
    "NoiseSchedule",
    "gamma_for",
    "epsilon_of",
    "perturb",
    "zeta",
    "RegularityClass",
    "GridSpec",
    "ProjectionConfig",
    "project_to_S",
    "check_membership",
    "DomainGeometry",
    "kappa",
    "accuracy_bound",
    "tradeoff_bound",
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "InvalidScheduleError",
    "NumericalRankError",
]
