"""Oracle interface shared by every contextual bilevel instance.

All derivative oracles are batched: ``x`` is a single upper-level point of
shape ``(d_x,)`` while ``y``, ``xi`` and ``eta`` carry a leading sample axis,
``(n, d_y)``, ``(n, d_xi)`` and ``(n, d_eta)``. Each returns per-sample values
with the same leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..basis import DomainBox


class NumericalDomainError(ArithmeticError):
    """An oracle produced a non-finite value."""


def check_finite(name: str, value: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericalDomainError(f"{name} returned non-finite values")
    return value


@dataclass(frozen=True)
class JointSamples:
    """A batch of joint draws ``(xi_i, eta_i)``; indexing returns a sub-batch."""

    xi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if xi.ndim == 1:
            xi = xi[:, None]
        if eta.ndim == 1:
            eta = eta[:, None]
        if xi.shape[0] != eta.shape[0]:
            raise ValueError("xi and eta must have the same number of rows")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "eta", eta)

    def __len__(self) -> int:
        return self.xi.shape[0]

    def __getitem__(self, idx) -> "JointSamples":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return JointSamples(self.xi[idx], self.eta[idx])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @staticmethod
    def concat(parts) -> "JointSamples":
        parts = list(parts)
        return JointSamples(np.concatenate([p.xi for p in parts]),
                            np.concatenate([p.eta for p in parts]))

    def repeat(self, times: int) -> "JointSamples":
        return JointSamples(np.repeat(self.xi, times, axis=0), np.repeat(self.eta, times, axis=0))


@dataclass
class CsboProblem:
    """Base class for a contextual stochastic bilevel instance.

    Subclasses implement ``f``, ``g`` and their derivatives, a joint sampler and
    :meth:`conditional_eta`, which describes ``P(eta | xi)`` well enough to
    minimize ``E_{eta|xi} g`` exactly (a weighted support; for objectives linear
    in ``eta`` a single point at the conditional mean suffices).
    """

    d_x: int
    d_y: int
    d_xi: int
    d_eta: int
    domain: DomainBox
    name: str = field(default="problem", init=False)

    # ---- upper level --------------------------------------------------------
    def f(self, x, y, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def grad_f_x(self, x, y, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def grad_f_y(self, x, y, xi, eta) -> np.ndarray:
        raise NotImplementedError

    # ---- lower level --------------------------------------------------------
    def g(self, x, y, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def grad_g_y(self, x, y, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def hess_g_yy(self, x, y, xi, eta) -> np.ndarray:
        raise NotImplementedError

    def hess_g_xy(self, x, y, xi, eta) -> np.ndarray:
        """Mixed second derivative, shape ``(n, d_x, d_y)``."""
        raise NotImplementedError

    def hess_g_yy_apply(self, x, y, xi, eta, u) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.hess_g_yy(x, y, xi, eta), u)

    def hess_g_xy_apply(self, x, y, xi, eta, u) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.hess_g_xy(x, y, xi, eta), u)

    # ---- sampling and bookkeeping -------------------------------------------
    def sample_joint(self, n: int, seed) -> JointSamples:
        raise NotImplementedError

    def conditional_eta(self, xi) -> tuple[np.ndarray, np.ndarray]:
        """Support ``(n_ctx, m, d_eta)`` and weights ``(m,)`` standing in for ``P(eta | xi)``."""
        raise NotImplementedError

    def initial_x(self) -> np.ndarray:
        return np.zeros(self.d_x)

    def project_x(self, x) -> np.ndarray:
        return x

    def initial_y(self, xi) -> np.ndarray:
        return np.zeros((np.atleast_2d(xi).shape[0], self.d_y))

    def lower_solution(self, x, xi) -> np.ndarray | None:
        """Closed-form ``y*(x, xi)`` when the instance has one, else ``None``."""
        return None

    def solve_lower(self, x, xi, tol: float = 1e-10) -> np.ndarray:
        """``y*(x, xi)`` per context, minimizing ``E_{eta|xi} g`` until ``||grad|| <= tol``."""
        from .lower import minimize_lower

        return minimize_lower(self, x, xi, tol=tol)

    def random_probes(self, n: int, rng: np.random.Generator):
        """``n`` random points ``(x, y, xi, eta)`` for derivative checks.

        ``x`` is ``(n, d_x)``; the oracles are smooth at every returned point.
        """
        x = np.array([self.project_x(self.initial_x() + 0.5 * rng.standard_normal(self.d_x))
                      for _ in range(n)])
        s = self.sample_joint(n, int(rng.integers(2**32)))
        return x, rng.standard_normal((n, self.d_y)), s.xi, s.eta

    @property
    def x_star(self) -> np.ndarray | None:
        return None

    @property
    def exact_lower_solution(self) -> bool:
        return False

    @property
    def strong_convexity(self) -> float | None:
        """Global modulus ``mu`` of ``g`` in ``y`` when known analytically."""
        return None

    def describe(self) -> dict:
        return {"name": self.name, "d_x": self.d_x, "d_y": self.d_y,
                "d_xi": self.d_xi, "d_eta": self.d_eta}


def as_batch(problem: CsboProblem, y, xi, eta):
    y = np.atleast_2d(np.asarray(y, dtype=float))
    xi = np.asarray(xi, dtype=float).reshape(-1, problem.d_xi)
    eta = np.asarray(eta, dtype=float).reshape(-1, problem.d_eta)
    return y, xi, eta
