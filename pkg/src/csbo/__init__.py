"""Contextual stochastic bilevel optimization by linear basis reduction.

The lower-level solution ``y*(x, xi)`` is replaced by ``W Phi(xi)`` for a feature
map ``Phi``; the resulting standard bilevel problem in ``(x, W)`` is solved with a
double-loop stochastic method.
"""

from .basis import (DomainBox, FeatureMap, build_chebyshev, build_feature_map, build_fourier,
                    build_indicator, build_monomial, evaluate)
from .problems import (CsboProblem, JointSamples, RegularityConstants, build_hyperclean,
                       build_quadratic, build_traffic, regularity_constants)
from .reduction import ReducedSbo
from .solver import RunResult, SolverConfig, hypergradient, inner_loop, neumann_inverse_apply, run, run_partition_baseline

__version__ = "0.1.0"
