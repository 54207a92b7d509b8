"""Reduced bilevel problem obtained by the linear decision rule ``y = W Phi(xi)``.

Every derivative operation takes a batch ``(xi, eta)`` with a leading sample axis
and returns the batch mean; a one-sample batch gives the pointwise derivative.
``W`` is a ``d_y x N`` matrix and all operations on it are entrywise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import FeatureMap, evaluate
from .problems.base import CsboProblem, JointSamples

DENSE_LIMIT = 512


@dataclass(frozen=True)
class Batch:
    """Joint samples with their features precomputed."""

    xi: np.ndarray
    eta: np.ndarray
    phi: np.ndarray

    def __len__(self) -> int:
        return self.xi.shape[0]

    def take(self, idx) -> "Batch":
        return Batch(self.xi[idx], self.eta[idx], self.phi[idx])

    @property
    def args(self) -> tuple[np.ndarray, np.ndarray]:
        return self.xi, self.eta


def _outer_mean(a: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``mean_i a_i phi_i^T`` for ``a`` (n, d) and ``phi`` (n, N)."""
    return (a[:, :, None] * phi[:, None, :]).sum(axis=0) / a.shape[0]


@dataclass(frozen=True)
class ReducedSbo:
    """A contextual instance paired with a feature map.

    Parameters
    ----------
    problem : CsboProblem
        Instance providing the oracles of ``f`` and ``g``.
    fmap : FeatureMap
        Feature map on the context domain.
    """

    problem: CsboProblem
    fmap: FeatureMap

    @property
    def n_features(self) -> int:
        return self.fmap.n_features

    @property
    def w_shape(self) -> tuple[int, int]:
        return (self.problem.d_y, self.fmap.n_features)

    def zeros(self) -> np.ndarray:
        return np.zeros(self.w_shape)

    def phi(self, xi) -> np.ndarray:
        """Features of a context batch, shape ``(n, N)``."""
        return evaluate(self.fmap, np.asarray(xi, dtype=float).reshape(-1, self.problem.d_xi))

    def batch(self, samples: JointSamples) -> Batch:
        return Batch(samples.xi, samples.eta, self.phi(samples.xi))

    def _phi(self, xi, phi):
        return self.phi(xi) if phi is None else phi

    def _check_w(self, W):
        W = np.asarray(W, dtype=float)
        if W.shape != self.w_shape:
            raise ValueError(f"W has shape {W.shape}, expected {self.w_shape}")
        return W

    def y_of(self, W, xi, phi=None) -> np.ndarray:
        """``W Phi(xi)``; a single context gives shape ``(d_y,)``, a batch ``(n, d_y)``."""
        W = self._check_w(W)
        single = np.ndim(xi) == 0 or (np.ndim(xi) == 1 and np.size(xi) == self.problem.d_xi)
        y = self._phi(xi, phi) @ W.T
        return y[0] if single else y

    # ---- values ---------------------------------------------------------------
    def f_phi(self, x, W, xi, eta, phi=None) -> np.ndarray:
        """Per-sample ``f(x, W Phi(xi), xi, eta)``."""
        return self.problem.f(x, self._phi(xi, phi) @ self._check_w(W).T, xi, eta)

    def g_phi(self, x, W, xi, eta, phi=None) -> np.ndarray:
        """Per-sample ``g(x, W Phi(xi), xi, eta)``."""
        return self.problem.g(x, self._phi(xi, phi) @ self._check_w(W).T, xi, eta)

    # ---- first derivatives ----------------------------------------------------------
    def grad_fphi_x(self, x, W, xi, eta, phi=None) -> np.ndarray:
        y = self._phi(xi, phi) @ self._check_w(W).T
        return self.problem.grad_f_x(x, y, xi, eta).sum(axis=0) / y.shape[0]

    def grad_fphi_W(self, x, W, xi, eta, phi=None) -> np.ndarray:
        phi = self._phi(xi, phi)
        y = phi @ self._check_w(W).T
        return _outer_mean(self.problem.grad_f_y(x, y, xi, eta), phi)

    def grad_gphi_W(self, x, W, xi, eta, phi=None) -> np.ndarray:
        phi = self._phi(xi, phi)
        y = phi @ self._check_w(W).T
        return _outer_mean(self.problem.grad_g_y(x, y, xi, eta), phi)

    # ---- second derivatives, matrix-free ----------------------------------------------
    def hess_gphi_WW_apply(self, x, W, xi, eta, V, phi=None) -> np.ndarray:
        """``mean_i (H_i V phi_i) phi_i^T``, i.e. ``kron(H, phi phi^T) vec(V)`` without forming it."""
        phi = self._phi(xi, phi)
        y = phi @ self._check_w(W).T
        u = phi @ np.asarray(V, dtype=float).T
        return _outer_mean(self.problem.hess_g_yy_apply(x, y, xi, eta, u), phi)

    def hess_gphi_xW_apply(self, x, W, xi, eta, V, phi=None) -> np.ndarray:
        """``mean_i grad^2_xy g_i (V phi_i)``, shape ``(d_x,)``."""
        phi = self._phi(xi, phi)
        y = phi @ self._check_w(W).T
        u = phi @ np.asarray(V, dtype=float).T
        out = self.problem.hess_g_xy_apply(x, y, xi, eta, u)
        return out.sum(axis=0) / out.shape[0]

    # ---- dense forms, toy sizes only ----------------------------------------------------
    def _check_dense(self):
        size = self.problem.d_y * self.n_features
        if size > DENSE_LIMIT:
            raise ValueError(f"dense reduced operator of size {size} exceeds {DENSE_LIMIT}")

    def dense_hess_WW(self, x, W, xi, eta, phi=None) -> np.ndarray:
        """Mean of ``kron(H_i, phi_i phi_i^T)`` acting on row-major ``vec(W)``."""
        self._check_dense()
        phi = self._phi(xi, phi)
        y = phi @ self._check_w(W).T
        H = self.problem.hess_g_yy(x, y, xi, eta)
        return np.mean([np.kron(Hi, np.outer(p, p)) for Hi, p in zip(H, phi)], axis=0)

    def dense_hess_xW(self, x, W, xi, eta, phi=None) -> np.ndarray:
        """Mean of ``kron(grad^2_xy g_i, phi_i^T)``, shape ``(d_x, d_y N)``."""
        self._check_dense()
        phi = self._phi(xi, phi)
        y = phi @ self._check_w(W).T
        H = self.problem.hess_g_xy(x, y, xi, eta)
        return np.mean([np.kron(Hi, p[None, :]) for Hi, p in zip(H, phi)], axis=0)
