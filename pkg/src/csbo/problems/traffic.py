"""Inverse capacity estimation on a two-edge, single-OD network.

Lower level (penalized Beckmann potential, per context ``xi`` = demand)::

    g = sum_e t0_e (y_e + alpha (y_e^+)^(beta+1) / ((beta+1) x_e^beta))
        + lam_d ((xi - sum_e y_e)^+)^2 + lam_p sum_e (y_e^-)^2 + mu0/2 ||y||^2

Upper level: smoothed distance ``sqrt(||y - eta||^2 + delta^2)`` to the observed flow.
The integral term uses ``y^+`` so that it stays convex for negative flows, where the
``lam_p`` penalty takes over; for ``y >= 0`` it is the usual BPR integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..basis import DomainBox
from .base import CsboProblem, JointSamples, check_finite
from .lower import minimize_lower

X_MIN, X_MAX = 0.05, 10.0


@dataclass
class TrafficProblem(CsboProblem):
    t0: np.ndarray = None
    capacity: np.ndarray = None  # ground-truth x*
    alpha: float = 1.0
    beta: float = 4.0
    lam_demand: float = 100.0
    lam_plus: float = 50.0
    mu0: float = 1e-6
    delta: float = 1e-8
    sigma0: float = 0.05
    gen_tol: float = 1e-10
    name: str = field(default="traffic", init=False)

    # ---- link model -----------------------------------------------------------
    def travel_time(self, x, y) -> np.ndarray:
        """BPR cost ``t0 (1 + alpha (y/x)^beta)`` for nonnegative flows."""
        yp = np.maximum(y, 0.0)
        return self.t0 * (1.0 + self.alpha * (yp / x) ** self.beta)

    # ---- upper level ------------------------------------------------------------
    def f(self, x, y, xi, eta):
        r = y - eta
        return check_finite("f", np.sqrt(np.sum(r * r, axis=1) + self.delta**2))

    def grad_f_x(self, x, y, xi, eta):
        return np.zeros((y.shape[0], self.d_x))

    def grad_f_y(self, x, y, xi, eta):
        r = y - eta
        return check_finite("grad_f_y", r / np.sqrt(np.sum(r * r, axis=1) + self.delta**2)[:, None])

    # ---- lower level ------------------------------------------------------------
    def _slack(self, y, xi):
        return np.maximum(xi[:, 0] - y.sum(axis=1), 0.0)

    def g(self, x, y, xi, eta):
        b1 = self.beta + 1.0
        yp = np.maximum(y, 0.0)
        ym = np.maximum(-y, 0.0)
        bpr = self.t0 * (y + self.alpha * yp**b1 / (b1 * x**self.beta))
        val = (bpr.sum(axis=1) + self.lam_demand * self._slack(y, xi) ** 2
               + self.lam_plus * np.sum(ym * ym, axis=1) + 0.5 * self.mu0 * np.sum(y * y, axis=1))
        return check_finite("g", val)

    def grad_g_y(self, x, y, xi, eta):
        ym = np.maximum(-y, 0.0)
        grad = (self.travel_time(x, y) - 2.0 * self.lam_demand * self._slack(y, xi)[:, None]
                - 2.0 * self.lam_plus * ym + self.mu0 * y)
        return check_finite("grad_g_y", grad)

    def hess_g_yy(self, x, y, xi, eta):
        n = y.shape[0]
        yp = np.maximum(y, 0.0)
        diag = (self.t0 * self.alpha * self.beta * yp ** (self.beta - 1.0) / x**self.beta
                + 2.0 * self.lam_plus * (y < 0) + self.mu0)
        H = diag[:, :, None] * np.eye(self.d_y)
        active = (xi[:, 0] - y.sum(axis=1)) > 0
        H += (2.0 * self.lam_demand * active)[:, None, None] * np.ones((n, self.d_y, self.d_y))
        return check_finite("hess_g_yy", H)

    def hess_g_xy(self, x, y, xi, eta):
        yp = np.maximum(y, 0.0)
        diag = -self.t0 * self.alpha * self.beta * yp**self.beta / x ** (self.beta + 1.0)
        return check_finite("hess_g_xy", diag[:, :, None] * np.eye(self.d_x))

    def hess_g_xy_apply(self, x, y, xi, eta, u):
        yp = np.maximum(y, 0.0)
        return -self.t0 * self.alpha * self.beta * yp**self.beta / x ** (self.beta + 1.0) * u

    # ---- data --------------------------------------------------------------------
    def conditional_eta(self, xi):
        # g does not depend on eta
        n = np.atleast_2d(xi).shape[0]
        return np.zeros((n, 1, self.d_eta)), np.ones(1)

    def equilibrium(self, x, xi, tol: float | None = None) -> np.ndarray:
        tol = self.gen_tol if tol is None else tol
        return minimize_lower(self, np.asarray(x, dtype=float), xi, tol=tol)

    def sample_joint(self, n: int, seed) -> JointSamples:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        xi = rng.uniform(0.0, 1.0, size=(n, 1))
        y_star = self.equilibrium(self.capacity, xi)
        eta = y_star + self.sigma0 * rng.standard_normal((n, self.d_y))
        bad = np.any(eta < 0, axis=1)
        while bad.any():
            eta[bad] = y_star[bad] + self.sigma0 * rng.standard_normal((int(bad.sum()), self.d_y))
            bad = np.any(eta < 0, axis=1)
        return JointSamples(xi, eta)

    def initial_x(self) -> np.ndarray:
        return np.full(self.d_x, 0.5)

    def random_probes(self, n: int, rng: np.random.Generator, margin: float = 1e-2):
        """Random points at least ``margin`` away from the kinks ``y_e = 0`` and ``sum y = xi``."""
        xs, ys, xis = [], [], []
        while len(xs) < n:
            x = rng.uniform(0.2, 1.0, self.d_x)
            y = rng.uniform(-0.2, 1.0, self.d_y)
            xi = rng.uniform(0.0, 1.0, 1)
            if np.min(np.abs(y)) > margin and abs(xi[0] - y.sum()) > margin:
                xs.append(x), ys.append(y), xis.append(xi)
        eta = np.abs(rng.normal(0.3, 0.2, (n, self.d_y)))
        return np.array(xs), np.array(ys), np.array(xis), eta

    def project_x(self, x) -> np.ndarray:
        return np.clip(x, X_MIN, X_MAX)

    @property
    def strong_convexity(self) -> float:
        # the BPR and demand terms can both be flat, leaving only the ridge
        return self.mu0

    @property
    def x_star(self) -> np.ndarray:
        return self.capacity

    def describe(self) -> dict:
        out = super().describe()
        out.update(t0=self.t0.tolist(), x_star=self.capacity.tolist(), sigma0=self.sigma0)
        return out


def build_traffic(seed, *, sigma0: float = 0.05, mu0: float = 1e-6) -> TrafficProblem:
    """Two-edge instance with ``t0 ~ U[1,2]^2`` and ``x* ~ U[0.2,0.8]^2``."""
    rng = np.random.default_rng(seed)
    t0 = rng.uniform(1.0, 2.0, size=2)
    x_star = rng.uniform(0.2, 0.8, size=2)
    return TrafficProblem(d_x=2, d_y=2, d_xi=1, d_eta=2, domain=DomainBox.interval(0.0, 1.0),
                          t0=t0, capacity=x_star, sigma0=sigma0, mu0=mu0)
