"""Batched deterministic minimization of ``G(x, ., xi) = E_{eta|xi} g(x, ., xi, eta)``."""

from __future__ import annotations

import numpy as np

from .base import CsboProblem

MAX_ITER = 10**6


class NonConvergenceError(RuntimeError):
    pass


class _Conditional:
    """``G`` and its derivatives for a batch of contexts, each with a weighted eta support."""

    def __init__(self, problem: CsboProblem, x, xi, eta, weights):
        self.problem = problem
        self.x = x
        self.xi = xi
        self.eta = eta
        self.m = eta.shape[1]
        self.w = np.asarray(weights, dtype=float)

    def _expand(self, y, rows):
        return (np.repeat(y, self.m, axis=0), np.repeat(self.xi[rows], self.m, axis=0),
                self.eta[rows].reshape(-1, self.eta.shape[2]))

    def value(self, y, rows):
        return self.problem.g(self.x, *self._expand(y, rows)).reshape(-1, self.m) @ self.w

    def grad(self, y, rows):
        gy = self.problem.grad_g_y(self.x, *self._expand(y, rows))
        return np.einsum("nmd,m->nd", gy.reshape(-1, self.m, y.shape[1]), self.w)

    def hess(self, y, rows):
        h = self.problem.hess_g_yy(self.x, *self._expand(y, rows))
        d = y.shape[1]
        return np.einsum("nmij,m->nij", h.reshape(-1, self.m, d, d), self.w)


def minimize_lower(problem: CsboProblem, x, xi, tol: float = 1e-10, eta=None, weights=None,
                   y0=None, method: str = "newton", max_iter: int = MAX_ITER,
                   objective=None) -> np.ndarray:
    """Minimize ``G(x, ., xi)`` for every context in ``xi`` until ``||grad|| <= tol``.

    ``method="newton"`` uses the Newton direction, ``"gd"`` the negative gradient;
    both use Armijo backtracking, per context. ``objective`` may replace the
    default eta-support average with any object exposing ``value``, ``grad`` and
    ``hess`` over ``(y, rows)``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float).reshape(-1, problem.d_xi)
    if eta is None and objective is None:
        eta, weights = problem.conditional_eta(xi)
    if objective is None:
        eta = np.asarray(eta, dtype=float)
        if eta.ndim == 2:
            eta = eta[:, None, :]
        if weights is None:
            weights = np.full(eta.shape[1], 1.0 / eta.shape[1])
    cond = _Conditional(problem, x, xi, eta, weights) if objective is None else objective
    n = xi.shape[0]
    y = problem.initial_y(xi) if y0 is None else np.array(y0, dtype=float).reshape(n, problem.d_y)
    return descend(cond, y, tol, method=method, max_iter=max_iter)


def descend(objective, y0, tol: float, method: str = "newton", max_iter: int = MAX_ITER) -> np.ndarray:
    """Row-wise descent with Armijo backtracking until every row has ``||grad|| <= tol``.

    ``objective`` exposes ``value(y, rows)``, ``grad(y, rows)`` and, for Newton,
    ``hess(y, rows)``, where ``rows`` indexes the problems stacked in ``y``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cond = objective
    y = np.array(y0, dtype=float)
    n = y.shape[0]
    step = np.ones(n)  # carried step size for gradient descent

    rows = np.arange(n)
    grad = cond.grad(y, rows)
    active = np.linalg.norm(grad, axis=1) > tol
    it = 0
    while np.any(active):
        if it >= max_iter:
            raise NonConvergenceError(
                f"lower-level solve stalled after {max_iter} iterations; "
                f"max gradient norm {np.linalg.norm(grad, axis=1).max():.3e} > {tol:.1e}")
        it += 1
        idx = rows[active]
        ya, ga = y[idx], grad[idx]
        if method == "newton":
            direction = np.linalg.solve(cond.hess(ya, idx), ga[..., None])[..., 0]
            t = np.ones(idx.size)
        elif method == "gd":
            direction = ga
            t = np.minimum(2.0 * step[idx], 1e6)
        else:
            raise ValueError(f"unknown method {method!r}")
        g0 = cond.value(ya, idx)
        slope = np.einsum("nd,nd->n", ga, direction)
        pending = np.ones(idx.size, dtype=bool)
        y_new = ya.copy()
        for _ in range(60):
            p = np.flatnonzero(pending)
            trial = ya[p] - t[p, None] * direction[p]
            val = cond.value(trial, idx[p])
            ok = val <= g0[p] - 1e-4 * t[p] * slope[p]
            # below round-off the values cannot rank steps; fall back to the gradient norm
            flat = ~ok & (val <= g0[p] + 1e-13 * (1.0 + np.abs(g0[p])))
            if flat.any():
                gn = np.linalg.norm(cond.grad(trial[flat], idx[p[flat]]), axis=1)
                ok[flat] = gn < np.linalg.norm(ga[p[flat]], axis=1)
            y_new[p[ok]] = trial[ok]
            pending[p[ok]] = False
            t[p[~ok]] *= 0.5
            if not pending.any():
                break
        if pending.all():
            raise NonConvergenceError(
                f"line search failed with gradient norm {np.linalg.norm(ga, axis=1).max():.3e} > {tol:.1e}; "
                "the tolerance is below the attainable precision")
        y[idx] = y_new
        step[idx] = t
        grad[idx] = cond.grad(y[idx], idx)
        active[idx] = np.linalg.norm(grad[idx], axis=1) > tol
    return y
