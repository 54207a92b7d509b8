"""Closed-form quadratic instance used to check every estimator against exact answers.

    g(x, y, xi, eta) = 1/2 y^T Q y - y^T (A x + b(xi) + eta)
    f(x, y, xi, eta) = 1/2 ||y - eta||^2 + lam_x/2 ||x||^2

with ``b(xi) = c sin(omega xi) + d`` and ``eta = m(xi) 1 + noise``, ``m(xi) = slope xi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..basis import DomainBox
from .base import CsboProblem, JointSamples, check_finite


@dataclass
class QuadraticProblem(CsboProblem):
    Q: np.ndarray = None
    A: np.ndarray = None
    c: np.ndarray = None
    d: np.ndarray = None
    omega: float = 3.0
    slope: float = 0.5
    noise: float = 0.1
    lam_x: float = 0.1
    name: str = field(default="quadratic", init=False)

    def __post_init__(self):
        self._Qinv = np.linalg.inv(self.Q)

    # ---- context-dependent pieces ------------------------------------------
    def b(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1, 1)
        return np.sin(self.omega * xi) * self.c + self.d

    def eta_mean(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1, 1)
        return self.slope * xi * np.ones(self.d_y)

    def _rhs(self, x, xi, eta):
        return x @ self.A.T + self.b(xi) + eta

    # ---- oracles -------------------------------------------------------------
    def f(self, x, y, xi, eta):
        r = y - eta
        return check_finite("f", 0.5 * np.sum(r * r, axis=1) + 0.5 * self.lam_x * (x @ x))

    def grad_f_x(self, x, y, xi, eta):
        return np.tile(self.lam_x * x, (y.shape[0], 1))

    def grad_f_y(self, x, y, xi, eta):
        return check_finite("grad_f_y", y - eta)

    def g(self, x, y, xi, eta):
        val = 0.5 * np.einsum("ni,ij,nj->n", y, self.Q, y) - np.sum(y * self._rhs(x, xi, eta), axis=1)
        return check_finite("g", val)

    def grad_g_y(self, x, y, xi, eta):
        return check_finite("grad_g_y", y @ self.Q - self._rhs(x, xi, eta))

    def hess_g_yy(self, x, y, xi, eta):
        return np.broadcast_to(self.Q, (y.shape[0],) + self.Q.shape).copy()

    def hess_g_xy(self, x, y, xi, eta):
        return np.broadcast_to(-self.A.T, (y.shape[0],) + self.A.T.shape).copy()

    def hess_g_yy_apply(self, x, y, xi, eta, u):
        return u @ self.Q

    def hess_g_xy_apply(self, x, y, xi, eta, u):
        return -u @ self.A

    # ---- sampling / closed forms ---------------------------------------------
    def sample_joint(self, n: int, seed) -> JointSamples:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        xi = rng.uniform(self.domain.lower[0], self.domain.upper[0], size=(n, 1))
        eta = self.eta_mean(xi) + self.noise * rng.standard_normal((n, self.d_y))
        return JointSamples(xi, eta)

    def conditional_eta(self, xi):
        # g is linear in eta, so the conditional mean is an exact stand-in
        return self.eta_mean(xi)[:, None, :], np.ones(1)

    def lower_solution(self, x, xi) -> np.ndarray:
        return (np.asarray(x) @ self.A.T + self.b(xi) + self.eta_mean(xi)) @ self._Qinv

    @property
    def exact_lower_solution(self) -> bool:
        return True

    @property
    def strong_convexity(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[0])

    @property
    def Q_inv(self) -> np.ndarray:
        return self._Qinv

    def exact_hypergradient(self, x, samples: JointSamples) -> np.ndarray:
        """Gradient of ``x -> mean_i f(x, y*(x, xi_i), xi_i, eta_i)`` in closed form."""
        y = self.lower_solution(x, samples.xi)
        return self.lam_x * np.asarray(x) + self.A.T @ (self._Qinv @ np.mean(y - samples.eta, axis=0))

    def exact_value(self, x, samples: JointSamples) -> float:
        y = self.lower_solution(x, samples.xi)
        return float(np.mean(self.f(np.asarray(x, dtype=float), y, samples.xi, samples.eta)))


def build_quadratic(d_x: int, d_y: int, seed, *, omega: float = 3.0, slope: float = 0.5,
                    noise: float = 0.1, lam_x: float = 0.1) -> QuadraticProblem:
    """Random quadratic instance with ``Q = I + 0.5 S^T S`` (so ``mu >= 1``)."""
    if d_x < 1 or d_y < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((d_y, d_y)) / np.sqrt(d_y)
    Q = np.eye(d_y) + 0.5 * S.T @ S
    Q = 0.5 * (Q + Q.T)
    A = rng.standard_normal((d_y, d_x)) / np.sqrt(d_x)
    c = rng.standard_normal(d_y)
    d = 0.5 * rng.standard_normal(d_y)
    return QuadraticProblem(d_x=d_x, d_y=d_y, d_xi=1, d_eta=d_y,
                            domain=DomainBox.interval(-1.0, 1.0), Q=Q, A=A, c=c, d=d,
                            omega=omega, slope=slope, noise=noise, lam_x=lam_x)
