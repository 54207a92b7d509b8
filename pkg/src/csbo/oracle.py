"""Brute-force references: exact lower solves, implicit-function hypergradients,
finite differences and dense reduced-problem constructions."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .problems.base import CsboProblem, JointSamples
from .problems.lower import descend
from .problems.quadratic import QuadraticProblem
from .reduction import DENSE_LIMIT, ReducedSbo

SINGULAR_TOL = 1e-12


class ConditioningError(ValueError):
    """A matrix that must be inverted is (numerically) singular."""


_STENCILS = {2: ((1, 0.5), (-1, -0.5)),
             4: ((2, -1.0 / 12.0), (1, 8.0 / 12.0), (-1, -8.0 / 12.0), (-2, 1.0 / 12.0))}


def _stencil(order: int):
    if order not in _STENCILS:
        raise ValueError("order must be 2 or 4")
    return _STENCILS[order]


def finite_diff_gradient(fn: Callable[[np.ndarray], float], point, h: float = 1e-5,
                         order: int = 2) -> np.ndarray:
    """Central-difference gradient of a scalar field (second- or fourth-order stencil)."""
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=float)
    grad = np.zeros(point.size)
    flat = point.ravel()
    for i in range(flat.size):
        for shift, weight in _stencil(order):
            e = np.zeros_like(flat)
            e[i] = shift * h
            value = float(fn((flat + e).reshape(point.shape)))
            if not np.isfinite(value):
                raise ValueError(f"non-finite evaluation along coordinate {i}")
            grad[i] += weight * value
    return grad.reshape(point.shape) / h


def finite_diff_jacobian(fn: Callable[[np.ndarray], np.ndarray], point, h: float = 1e-5,
                         order: int = 2) -> np.ndarray:
    """Central-difference Jacobian, shape ``out.shape + point.shape``."""
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=float)
    flat = point.ravel()
    cols = []
    for i in range(flat.size):
        col = 0.0
        for shift, weight in _stencil(order):
            e = np.zeros_like(flat)
            e[i] = shift * h
            col = col + weight * np.asarray(fn((flat + e).reshape(point.shape)), dtype=float)
        cols.append(col / h)
    out = np.stack(cols, axis=-1)
    return out.reshape(out.shape[:-1] + point.shape)


# ---- original problem ---------------------------------------------------------------

def solve_lower_exact(problem: CsboProblem, x, xi, tol: float = 1e-10) -> np.ndarray:
    """``y*(x, xi)`` for a batch of contexts, ``(n, d_y)``.

    Closed form where the instance has one, otherwise a descent on
    ``E_{eta|xi} g`` to ``||grad|| <= tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    xi = np.asarray(xi, dtype=float).reshape(-1, problem.d_xi)
    y = problem.lower_solution(x, xi)
    if y is not None:
        return y
    return problem.solve_lower(np.asarray(x, dtype=float), xi, tol=tol)


def _conditional_hessians(problem: CsboProblem, x, y, xi):
    """``E_{eta|xi} grad^2_yy g`` for each context row."""
    support, w = problem.conditional_eta(xi)
    m = support.shape[1]
    H = problem.hess_g_yy(x, np.repeat(y, m, axis=0), np.repeat(xi, m, axis=0),
                          support.reshape(-1, problem.d_eta))
    return np.einsum("nmij,m->nij", H.reshape(-1, m, problem.d_y, problem.d_y), w), support, w


def exact_hypergradient(problem: CsboProblem, x, samples: JointSamples, tol: float = 1e-10) -> np.ndarray:
    """Gradient of the empirical ``F(x) = mean_i f(x, y*(x, xi_i), xi_i, eta_i)``.

    Uses the implicit-function formula with the conditional Hessians
    ``E_{eta|xi} grad^2 g`` and dense symmetric solves.
    """
    if len(samples) == 0:
        raise ValueError("empty sample set")
    x = np.asarray(x, dtype=float)
    ctx, inverse = np.unique(samples.xi, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    y_ctx = solve_lower_exact(problem, x, ctx, tol)
    y = y_ctx[inverse]
    gfy = problem.grad_f_y(x, y, samples.xi, samples.eta)
    grad = problem.grad_f_x(x, y, samples.xi, samples.eta).mean(axis=0)
    H, support, w = _conditional_hessians(problem, x, y_ctx, ctx)
    lam = np.linalg.eigvalsh(0.5 * (H + np.swapaxes(H, 1, 2)))[:, 0]
    if lam.min() < SINGULAR_TOL:
        raise ConditioningError(f"lower Hessian has lambda_min = {lam.min():.3e}")
    # sum the right-hand sides per context first, then one solve per context
    rhs = np.zeros_like(y_ctx)
    np.add.at(rhs, inverse, gfy)
    q = np.linalg.solve(H, rhs[..., None])[..., 0] / len(samples)
    m = support.shape[1]
    mixed = problem.hess_g_xy_apply(x, np.repeat(y_ctx, m, axis=0), np.repeat(ctx, m, axis=0),
                                    support.reshape(-1, problem.d_eta), np.repeat(q, m, axis=0))
    return grad - np.einsum("nmd,m->d", mixed.reshape(len(ctx), m, -1), w)


def empirical_value(problem: CsboProblem, x, samples: JointSamples, tol: float = 1e-10) -> float:
    """``mean_i f(x, y*(x, xi_i), xi_i, eta_i)`` with exact lower solves."""
    x = np.asarray(x, dtype=float)
    ctx, inverse = np.unique(samples.xi, axis=0, return_inverse=True)
    y = solve_lower_exact(problem, x, ctx, tol)[inverse.ravel()]
    return float(np.mean(problem.f(x, y, samples.xi, samples.eta)))


# ---- reduced problem ----------------------------------------------------------------------

def _gram(reduced: ReducedSbo, phi: np.ndarray) -> np.ndarray:
    gram = phi.T @ phi / phi.shape[0]
    lam = np.linalg.eigvalsh(gram)[0]
    if lam <= SINGULAR_TOL:
        raise ConditioningError(
            f"feature Gram matrix is singular on the sample (lambda_min = {lam:.3e}); "
            "some feature is not excited by the training contexts")
    return gram


class _ReducedObjective:
    """Full-batch ``W -> mean_i g_Phi`` on ``vec(W)``, a single stacked row."""

    def __init__(self, reduced: ReducedSbo, x, samples: JointSamples):
        self.r = reduced
        self.x = x
        self.b = reduced.batch(samples)

    def _W(self, y):
        return y[0].reshape(self.r.w_shape)

    def value(self, y, rows):
        return np.array([np.mean(self.r.g_phi(self.x, self._W(y), *self.b.args, phi=self.b.phi))])

    def grad(self, y, rows):
        return self.r.grad_gphi_W(self.x, self._W(y), *self.b.args, phi=self.b.phi).reshape(1, -1)

    def hess(self, y, rows):
        return self.r.dense_hess_WW(self.x, self._W(y), *self.b.args, phi=self.b.phi)[None]


def solve_reduced_lower_exact(reduced: ReducedSbo, x, samples: JointSamples, tol: float = 1e-10,
                              W0=None) -> np.ndarray:
    """``W*(x)`` minimizing the empirical reduced lower objective over ``samples``.

    Normal equations ``Q W Sigma = R`` for the quadratic instance, damped Newton on
    ``vec(W)`` with the dense reduced Hessian otherwise.
    """
    x = np.asarray(x, dtype=float)
    phi = reduced.phi(samples.xi)
    gram = _gram(reduced, phi)
    problem = reduced.problem
    if isinstance(problem, QuadraticProblem):
        r = problem._rhs(x, samples.xi, samples.eta)
        R = r.T @ phi / phi.shape[0]
        return problem.Q_inv @ np.linalg.solve(gram, R.T).T
    if problem.d_y * reduced.n_features > DENSE_LIMIT:
        raise ValueError("reduced problem too large for the dense reference solver")
    W0 = reduced.zeros() if W0 is None else np.asarray(W0, dtype=float)
    z = descend(_ReducedObjective(reduced, x, samples), W0.reshape(1, -1), tol)
    return z[0].reshape(reduced.w_shape)


def dense_reduced_hypergradient(reduced: ReducedSbo, x, W, samples: JointSamples) -> np.ndarray:
    """``grad_x f_Phi - grad^2_xW g_Phi [grad^2_WW g_Phi]^{-1} grad_W f_Phi`` with dense solves."""
    b = reduced.batch(samples)
    H = reduced.dense_hess_WW(x, W, *b.args, phi=b.phi)
    if np.linalg.eigvalsh(0.5 * (H + H.T))[0] < SINGULAR_TOL:
        raise ConditioningError("reduced Hessian is singular")
    v = reduced.grad_fphi_W(x, W, *b.args, phi=b.phi).ravel()
    q = np.linalg.solve(H, v)
    return reduced.grad_fphi_x(x, W, *b.args, phi=b.phi) - reduced.dense_hess_xW(x, W, *b.args, phi=b.phi) @ q


def dense_inverse(reduced: ReducedSbo, x, W, samples: JointSamples) -> Callable[[np.ndarray], np.ndarray]:
    """Exact ``V -> [grad^2_WW g_Phi]^{-1} V`` on ``samples``, for substitution into the solver."""
    b = reduced.batch(samples)
    H = reduced.dense_hess_WW(x, W, *b.args, phi=b.phi)
    return lambda V: np.linalg.solve(H, np.asarray(V).ravel()).reshape(reduced.w_shape)


def quadratic_reduced_gradient(reduced: ReducedSbo, x, samples: JointSamples) -> np.ndarray:
    """Closed-form gradient of ``F_Phi(x) = mean_i f(x, W*(x) phi_i, xi_i, eta_i)``.

    With ``W* = Q^{-1} R Sigma^{-1}``: ``grad F_Phi = lam x + A^T Q^{-1} E Sigma^{-1} phi_bar``
    where ``E = mean_i (W* phi_i - eta_i) phi_i^T``.
    """
    problem = reduced.problem
    if not isinstance(problem, QuadraticProblem):
        raise TypeError("closed form exists only for the quadratic instance")
    x = np.asarray(x, dtype=float)
    phi = reduced.phi(samples.xi)
    gram = _gram(reduced, phi)
    W = solve_reduced_lower_exact(reduced, x, samples)
    E = (phi @ W.T - samples.eta).T @ phi / phi.shape[0]
    return problem.lam_x * x + problem.A.T @ (problem.Q_inv @ (E @ np.linalg.solve(gram, phi.mean(axis=0))))


def quadratic_reduced_value(reduced: ReducedSbo, x, samples: JointSamples) -> float:
    W = solve_reduced_lower_exact(reduced, x, samples)
    return float(np.mean(reduced.f_phi(np.asarray(x, float), W, samples.xi, samples.eta)))


def least_squares_coefficients(reduced: ReducedSbo, x, xi, tol: float = 1e-10) -> np.ndarray:
    """``W_ls = argmin_W mean_i ||W phi_i - y*(x, xi_i)||^2``."""
    phi = reduced.phi(xi)
    gram = _gram(reduced, phi)
    y = solve_lower_exact(reduced.problem, x, xi, tol)
    return np.linalg.solve(gram, (phi.T @ y / phi.shape[0])).T


def lower_error(reduced: ReducedSbo, x, W, xi, tol: float = 1e-10) -> float:
    """``mean_i ||W phi(xi_i) - y*(x, xi_i)||^2``."""
    y = solve_lower_exact(reduced.problem, x, xi, tol)
    return float(np.mean(np.sum((reduced.y_of(W, np.asarray(xi).reshape(-1, reduced.problem.d_xi)) - y) ** 2, axis=1)))


# ---- derivative audits ----------------------------------------------------------------------

def _rel_err(analytic, reference, floor: float = 1e-6) -> float:
    analytic, reference = np.ravel(analytic), np.ravel(reference)
    return float(np.linalg.norm(analytic - reference) / max(np.linalg.norm(reference), floor))


HESS_STEP = 1e-3


def problem_derivative_errors(problem: CsboProblem, n_probes: int = 100, seed: int = 0,
                              h: float = 1e-5) -> dict[str, float]:
    """Worst relative error of each analytic oracle against central differences.

    Gradients are differenced from the values with step ``h``. Hessians are
    differenced from the analytic gradient with the fourth-order stencil and step
    ``HESS_STEP``: gradient entries can carry large terms that do not move with the
    differenced variable, and the wider stencil keeps their round-off small. The
    matrix-free ``*_apply`` oracles are compared with the dense ones.
    """
    rng = np.random.default_rng(seed)
    xs, ys, xis, etas = problem.random_probes(n_probes, rng)
    worst = dict.fromkeys(("grad_f_x", "grad_f_y", "grad_g_y", "hess_g_yy", "hess_g_xy",
                           "hess_g_yy_apply", "hess_g_xy_apply"), 0.0)
    for x, y, xi, eta in zip(xs, ys, xis, etas):
        y, xi, eta = y[None], xi[None], eta[None]
        u = rng.standard_normal(y.shape)
        checks = {
            "grad_f_x": (problem.grad_f_x(x, y, xi, eta)[0],
                         finite_diff_gradient(lambda v: problem.f(v, y, xi, eta)[0], x, h)),
            "grad_f_y": (problem.grad_f_y(x, y, xi, eta)[0],
                         finite_diff_gradient(lambda v: problem.f(x, v[None], xi, eta)[0], y[0], h)),
            "grad_g_y": (problem.grad_g_y(x, y, xi, eta)[0],
                         finite_diff_gradient(lambda v: problem.g(x, v[None], xi, eta)[0], y[0], h)),
            "hess_g_yy": (problem.hess_g_yy(x, y, xi, eta)[0],
                          finite_diff_jacobian(lambda v: problem.grad_g_y(x, v[None], xi, eta)[0], y[0],
                                               HESS_STEP, order=4)),
            "hess_g_xy": (problem.hess_g_xy(x, y, xi, eta)[0],
                          finite_diff_jacobian(lambda v: problem.grad_g_y(v, y, xi, eta)[0], x,
                                               HESS_STEP, order=4).T),
            "hess_g_yy_apply": (problem.hess_g_yy_apply(x, y, xi, eta, u),
                                np.einsum("nij,nj->ni", problem.hess_g_yy(x, y, xi, eta), u)),
            "hess_g_xy_apply": (problem.hess_g_xy_apply(x, y, xi, eta, u),
                                np.einsum("nij,nj->ni", problem.hess_g_xy(x, y, xi, eta), u)),
        }
        for name, (a, b) in checks.items():
            worst[name] = max(worst[name], _rel_err(a, b))
    return worst


def reduced_derivative_errors(reduced: ReducedSbo, n_probes: int = 100, seed: int = 0,
                              h: float = 1e-5) -> dict[str, float]:
    """Worst relative error of the chain-rule derivatives of ``f_Phi`` and ``g_Phi``.

    Each probe is one sample with random ``W``; second derivatives are checked as
    directional differences of the analytic gradient along a random direction
    (scaled to a unit move of ``W phi`` for the ``W`` stencil), with the
    fourth-order stencil as in :func:`problem_derivative_errors`.
    """
    problem = reduced.problem
    rng = np.random.default_rng(seed)
    xs, ys, xis, etas = problem.random_probes(n_probes, rng)
    worst = dict.fromkeys(("grad_fphi_x", "grad_fphi_W", "grad_gphi_W", "hess_gphi_WW_apply",
                           "hess_gphi_xW_apply"), 0.0)
    for x, y, xi, eta in zip(xs, ys, xis, etas):
        xi, eta = xi[None], eta[None]
        phi = reduced.phi(xi)
        # draw W so that W phi lands on the probe point y, which is valid jointly with xi
        W = np.outer(y, phi[0]) / float(phi[0] @ phi[0]) + 0.01 * rng.standard_normal(reduced.w_shape)
        W -= np.outer(W @ phi[0] - y, phi[0]) / float(phi[0] @ phi[0])
        V = rng.standard_normal(reduced.w_shape)
        # unit move of W phi per unit t, so the stencil stays clear of kinks in y
        U = V / max(float(np.linalg.norm(V @ phi[0])), 1e-12)
        fphi = lambda x_, W_: reduced.f_phi(x_, W_, xi, eta)[0]
        gphi = lambda x_, W_: reduced.g_phi(x_, W_, xi, eta)[0]
        dgrad = finite_diff_jacobian(lambda t: reduced.grad_gphi_W(x, W + t[0] * U, xi, eta), np.zeros(1),
                                     HESS_STEP, order=4)[..., 0]
        checks = {
            "grad_fphi_x": (reduced.grad_fphi_x(x, W, xi, eta), finite_diff_gradient(lambda v: fphi(v, W), x, h)),
            "grad_fphi_W": (reduced.grad_fphi_W(x, W, xi, eta), finite_diff_gradient(lambda v: fphi(x, v), W, h)),
            "grad_gphi_W": (reduced.grad_gphi_W(x, W, xi, eta), finite_diff_gradient(lambda v: gphi(x, v), W, h)),
            "hess_gphi_WW_apply": (reduced.hess_gphi_WW_apply(x, W, xi, eta, U), dgrad),
            "hess_gphi_xW_apply": (
                reduced.hess_gphi_xW_apply(x, W, xi, eta, V),
                np.tensordot(V, finite_diff_jacobian(lambda v: reduced.grad_gphi_W(v, W, xi, eta), x,
                                                     HESS_STEP, order=4), 2)),
        }
        for name, (a, b) in checks.items():
            worst[name] = max(worst[name], _rel_err(a, b))
    return worst
