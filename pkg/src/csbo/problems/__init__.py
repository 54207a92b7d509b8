"""Contextual bilevel instances and their oracle interface."""

from .base import CsboProblem, JointSamples, NumericalDomainError, as_batch
from .constants import RegularityConstants, expressiveness_constant, regularity_constants
from .hyperclean import HypercleanProblem, build_hyperclean, load_labeled_matrix
from .lower import NonConvergenceError, minimize_lower
from .quadratic import QuadraticProblem, build_quadratic
from .traffic import TrafficProblem, build_traffic

__all__ = [
    "CsboProblem", "JointSamples", "NumericalDomainError", "as_batch",
    "RegularityConstants", "expressiveness_constant", "regularity_constants",
    "HypercleanProblem", "build_hyperclean", "load_labeled_matrix",
    "NonConvergenceError", "minimize_lower",
    "QuadraticProblem", "build_quadratic", "TrafficProblem", "build_traffic",
]
