"""Lipschitz and strong-convexity constants of an instance, and the expressiveness constant K."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import CsboProblem
from .quadratic import QuadraticProblem


def expressiveness_constant(L_f0: float, L_f1: float, L_g1: float, L_g2: float, mu: float) -> float:
    """``K = L_f1 + L_g2 L_f0 / mu + L_g2 L_g1 L_f0 / mu^2 + L_f1 L_g1 / mu``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if min(L_f0, L_f1, L_g1, L_g2) < 0:
        raise ValueError("Lipschitz constants must be nonnegative")
    return L_f1 + L_g2 * L_f0 / mu + L_g2 * L_g1 * L_f0 / mu**2 + L_f1 * L_g1 / mu


@dataclass(frozen=True)
class RegularityConstants:
    """Constants of the standing assumptions; ``estimated`` marks probe-based lower bounds.

    Attributes
    ----------
    L_f0, L_f1, L_g1, L_g2 : float
        Lipschitz constants of ``f``, ``grad f``, ``grad g`` and ``hess g`` in ``(x, y)``.
    mu : float
        Strong-convexity modulus of ``g`` in ``y``.
    estimated : bool
        True when any constant comes from probing rather than a closed form.
    probe : dict
        Description of the probing grid, empty for exact constants.
    """

    L_f0: float
    L_f1: float
    L_g1: float
    L_g2: float
    mu: float
    estimated: bool = False
    probe: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        for name in ("L_f0", "L_f1", "L_g1", "L_g2"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ValueError(f"{name} must be finite and nonnegative")

    @property
    def K(self) -> float:
        return expressiveness_constant(self.L_f0, self.L_f1, self.L_g1, self.L_g2, self.mu)


def _probe_points(problem: CsboProblem, n_probes: int, radius: float, rng):
    samples = problem.sample_joint(n_probes, rng)
    x0 = problem.initial_x()
    xs = [problem.project_x(x0 + radius * rng.standard_normal(problem.d_x)) for _ in range(n_probes)]
    ys = problem.solve_lower(x0, samples.xi, tol=1e-8)
    ys = ys + radius * rng.standard_normal(ys.shape)
    return xs, ys, samples


def _joint_grad(problem, x, y, xi, eta):
    return np.concatenate([problem.grad_f_x(x, y, xi, eta)[0], problem.grad_f_y(x, y, xi, eta)[0]])


def regularity_constants(problem: CsboProblem, n_probes: int = 50, radius: float = 0.1,
                         seed=0) -> RegularityConstants:
    """Exact constants for the quadratic instance, probe estimates otherwise.

    Probe estimates take maxima (minima for ``mu``) of local quantities and
    difference quotients over ``n_probes`` points around ``y*(x0, xi)``; they
    are lower bounds on global constants, valid only on the probed region.
    """
    if isinstance(problem, QuadraticProblem):
        return _quadratic_constants(problem, n_probes, radius, seed)
    rng = np.random.default_rng(seed)
    xs, ys, samples = _probe_points(problem, n_probes, radius, rng)
    mu, L_f0, L_g1 = np.inf, 0.0, 0.0
    L_f1, L_g2 = 0.0, 0.0
    for k in range(n_probes):
        x, y, xi, eta = xs[k], ys[k : k + 1], samples.xi[k : k + 1], samples.eta[k : k + 1]
        H = problem.hess_g_yy(x, y, xi, eta)[0]
        Hxy = problem.hess_g_xy(x, y, xi, eta)[0]
        mu = min(mu, float(np.linalg.eigvalsh(0.5 * (H + H.T))[0]))
        L_g1 = max(L_g1, float(np.linalg.norm(np.vstack([Hxy, H]), 2)))
        gf = _joint_grad(problem, x, y, xi, eta)
        L_f0 = max(L_f0, float(np.linalg.norm(gf)))
        # difference quotients along a random direction at fixed (xi, eta)
        dx = 1e-4 * rng.standard_normal(problem.d_x)
        dy = 1e-4 * rng.standard_normal((1, problem.d_y))
        step = np.sqrt(dx @ dx + np.sum(dy * dy))
        x2, y2 = x + dx, y + dy
        gf2 = _joint_grad(problem, x2, y2, xi, eta)
        L_f1 = max(L_f1, float(np.linalg.norm(gf2 - gf) / step))
        H2 = problem.hess_g_yy(x2, y2, xi, eta)[0]
        L_g2 = max(L_g2, float(np.linalg.norm(H2 - H, 2) / step))
    if problem.strong_convexity is not None:
        mu = problem.strong_convexity
    if not np.isfinite(mu) or mu <= 0:
        raise ValueError("could not certify positive strong convexity on the probe set")
    return RegularityConstants(L_f0, L_f1, L_g1, L_g2, mu, estimated=True,
                               probe={"n_probes": n_probes, "radius": radius, "seed": seed})


def _quadratic_constants(problem: QuadraticProblem, n_probes, radius, seed) -> RegularityConstants:
    # Jacobian of (grad_x g, grad_y g) in (x, y) is [[0, -A^T], [-A, Q]]
    J = np.block([[np.zeros((problem.d_x, problem.d_x)), -problem.A.T], [-problem.A, problem.Q]])
    L_g1 = float(np.linalg.norm(J, 2))
    L_f1 = max(1.0, problem.lam_x)
    # f is only locally Lipschitz; bound its gradient on the probe region
    rng = np.random.default_rng(seed)
    samples = problem.sample_joint(n_probes, rng)
    L_f0 = 0.0
    for k in range(n_probes):
        x = radius * rng.standard_normal(problem.d_x)
        y = problem.lower_solution(x, samples.xi[k : k + 1])
        g = np.concatenate([problem.lam_x * x, (y - samples.eta[k : k + 1])[0]])
        L_f0 = max(L_f0, float(np.linalg.norm(g)))
    return RegularityConstants(L_f0, L_f1, L_g1, 0.0, problem.strong_convexity, estimated=True,
                               probe={"n_probes": n_probes, "radius": radius, "seed": seed,
                                      "exact": ["L_f1", "L_g1", "L_g2", "mu"]})
