"""Data hyper-cleaning with temperature-scaled linear classifiers.

Upper variable ``x`` holds one logit weight per training example, lower variable
``y`` is a ``C x F`` weight matrix stored row-major as a vector of length ``C*F``.
A joint sample is ``(xi, eta)`` with ``xi`` the temperature and ``eta = (i, j)`` the
indices of one training and one validation example::

    g = sigmoid(x_i) CE(y X_i / xi, Y_i) + lam ||y||^2
    f = CE(y X_j / xi, Y_j)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ..basis import DomainBox
from .base import CsboProblem, JointSamples, check_finite
from .lower import minimize_lower

XI_LOW, XI_HIGH = 0.1, 10.0


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy of ``logits`` (n, C) against integer ``labels`` (n,)."""
    return -log_softmax(logits, axis=1)[np.arange(labels.size), labels]


@dataclass
class HypercleanProblem(CsboProblem):
    X_train: np.ndarray = None
    Y_train: np.ndarray = None
    X_val: np.ndarray = None
    Y_val: np.ndarray = None
    n_classes: int = 2
    lam: float = 1e-3
    corrupted: np.ndarray | None = None
    name: str = field(default="hyperclean", init=False)

    @property
    def n_features(self) -> int:
        return self.X_train.shape[1]

    @property
    def strong_convexity(self) -> float:
        return 2.0 * self.lam

    def _unpack(self, y, xi, eta, split: str):
        Y = y.reshape(-1, self.n_classes, self.n_features)
        col = 0 if split == "train" else 1
        idx = np.asarray(eta[:, col]).astype(np.int64)
        X, labels = ((self.X_train, self.Y_train) if split == "train" else (self.X_val, self.Y_val))
        Xi = X[idx] / xi[:, :1]
        logits = np.einsum("ncf,nf->nc", Y, Xi)
        return idx, Xi, logits, labels[idx]

    def _residual(self, logits, labels):
        r = softmax(logits, axis=1)
        r[np.arange(labels.size), labels] -= 1.0
        return r

    # ---- upper level --------------------------------------------------------------
    def f(self, x, y, xi, eta):
        _, _, logits, labels = self._unpack(y, xi, eta, "val")
        return check_finite("f", cross_entropy(logits, labels))

    def grad_f_x(self, x, y, xi, eta):
        return np.zeros((y.shape[0], self.d_x))

    def grad_f_y(self, x, y, xi, eta):
        _, Xi, logits, labels = self._unpack(y, xi, eta, "val")
        r = self._residual(logits, labels)
        return check_finite("grad_f_y", np.einsum("nc,nf->ncf", r, Xi).reshape(y.shape[0], -1))

    # ---- lower level --------------------------------------------------------------
    def g(self, x, y, xi, eta):
        idx, _, logits, labels = self._unpack(y, xi, eta, "train")
        val = expit(x[idx]) * cross_entropy(logits, labels) + self.lam * np.sum(y * y, axis=1)
        return check_finite("g", val)

    def grad_g_y(self, x, y, xi, eta):
        idx, Xi, logits, labels = self._unpack(y, xi, eta, "train")
        r = expit(x[idx])[:, None] * self._residual(logits, labels)
        out = np.einsum("nc,nf->ncf", r, Xi).reshape(y.shape[0], -1) + 2.0 * self.lam * y
        return check_finite("grad_g_y", out)

    def hess_g_yy(self, x, y, xi, eta):
        idx, Xi, logits, _ = self._unpack(y, xi, eta, "train")
        p = softmax(logits, axis=1)
        J = expit(x[idx])[:, None, None] * (p[:, :, None] * np.eye(self.n_classes) - p[:, :, None] * p[:, None, :])
        H = np.einsum("ncd,nf,ng->ncfdg", J, Xi, Xi).reshape(y.shape[0], self.d_y, self.d_y)
        return check_finite("hess_g_yy", H + 2.0 * self.lam * np.eye(self.d_y))

    def hess_g_yy_apply(self, x, y, xi, eta, u):
        idx, Xi, logits, _ = self._unpack(y, xi, eta, "train")
        p = softmax(logits, axis=1)
        z = np.einsum("ncf,nf->nc", u.reshape(-1, self.n_classes, self.n_features), Xi)
        Jz = expit(x[idx])[:, None] * (p * z - p * np.sum(p * z, axis=1, keepdims=True))
        return np.einsum("nc,nf->ncf", Jz, Xi).reshape(u.shape) + 2.0 * self.lam * u

    def _mixed_rows(self, x, y, xi, eta):
        idx, Xi, logits, labels = self._unpack(y, xi, eta, "train")
        s = expit(x[idx])
        r = (s * (1.0 - s))[:, None] * self._residual(logits, labels)
        return idx, np.einsum("nc,nf->ncf", r, Xi).reshape(y.shape[0], -1)

    def hess_g_xy(self, x, y, xi, eta):
        idx, rows = self._mixed_rows(x, y, xi, eta)
        H = np.zeros((y.shape[0], self.d_x, self.d_y))
        H[np.arange(y.shape[0]), idx] = rows
        return H

    def hess_g_xy_apply(self, x, y, xi, eta, u):
        idx, rows = self._mixed_rows(x, y, xi, eta)
        out = np.zeros((y.shape[0], self.d_x))
        out[np.arange(y.shape[0]), idx] = np.sum(rows * u, axis=1)
        return out

    # ---- sampling and exact solves ---------------------------------------------------
    def sample_joint(self, n: int, seed) -> JointSamples:
        if n < 1:
            raise ValueError("n must be >= 1")
        rng = np.random.default_rng(seed)
        xi = rng.uniform(XI_LOW, XI_HIGH, size=(n, 1))
        eta = np.stack([rng.integers(0, self.Y_train.size, n), rng.integers(0, self.Y_val.size, n)], axis=1)
        return JointSamples(xi, eta.astype(float))

    def random_probes(self, n: int, rng: np.random.Generator):
        x, y, xi, eta = super().random_probes(n, rng)
        return x, 0.3 * y, xi, eta

    def conditional_eta(self, xi):
        n = np.atleast_2d(xi).shape[0]
        m = self.Y_train.size
        eta = np.zeros((n, m, 2))
        eta[:, :, 0] = np.arange(m)
        return eta, np.full(m, 1.0 / m)

    def solve_lower(self, x, xi, tol: float = 1e-10) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(-1, 1)
        return minimize_lower(self, x, xi, tol=tol, objective=_FullBatch(self, np.asarray(x, float), xi))

    def eval_contexts(self, n: int = 16) -> np.ndarray:
        """Midpoint grid over the temperature range, shape ``(n, 1)``."""
        edges = np.linspace(XI_LOW, XI_HIGH, n + 1)
        return (0.5 * (edges[:-1] + edges[1:]))[:, None]

    def validation_loss(self, ys: np.ndarray, xis: np.ndarray) -> float:
        """Mean validation cross-entropy over contexts ``xis`` with weights ``ys`` (n_ctx, d_y)."""
        total = 0.0
        for y, xi in zip(ys, xis[:, 0]):
            logits = self.X_val @ y.reshape(self.n_classes, self.n_features).T / xi
            total += float(np.mean(cross_entropy(logits, self.Y_val)))
        return total / len(xis)

    def validation_samples(self, n_contexts: int = 16) -> JointSamples:
        """Every validation point crossed with the context grid."""
        xis = self.eval_contexts(n_contexts)
        m = self.Y_val.size
        xi = np.repeat(xis, m, axis=0)
        eta = np.zeros((xi.shape[0], 2))
        eta[:, 1] = np.tile(np.arange(m), n_contexts)
        return JointSamples(xi, eta)

    def describe(self) -> dict:
        out = super().describe()
        out.update(n_train=int(self.Y_train.size), n_val=int(self.Y_val.size),
                   n_classes=self.n_classes, n_features=self.n_features, lam=self.lam)
        return out


class _FullBatch:
    """Full training-set lower objective for a batch of temperatures."""

    def __init__(self, problem: HypercleanProblem, x, xi):
        self.p = problem
        self.w = expit(x) / problem.Y_train.size
        self.xi = xi[:, 0]
        self.onehot = np.eye(problem.n_classes)[problem.Y_train]

    def _logits(self, y, rows):
        Y = y.reshape(-1, self.p.n_classes, self.p.n_features)
        return np.einsum("if,ncf->nic", self.p.X_train, Y) / self.xi[rows, None, None]

    def value(self, y, rows):
        lse = -log_softmax(self._logits(y, rows), axis=2)
        ce = np.sum(lse * self.onehot, axis=2)
        return ce @ self.w + self.p.lam * np.sum(y * y, axis=1)

    def grad(self, y, rows):
        r = softmax(self._logits(y, rows), axis=2) - self.onehot
        G = np.einsum("i,nic,if->ncf", self.w, r, self.p.X_train) / self.xi[rows, None, None]
        return G.reshape(y.shape) + 2.0 * self.p.lam * y

    def hess(self, y, rows):
        P = softmax(self._logits(y, rows), axis=2)
        X = self.p.X_train
        C, F = self.p.n_classes, self.p.n_features
        wP = self.w[None, :, None] * P
        diag = np.einsum("nic,if,ig->ncfg", wP, X, X)
        outer = np.einsum("nic,nid,if,ig->ncfdg", wP, P, X, X)
        H = -outer
        idx = np.arange(C)
        H[:, idx, :, idx, :] += diag.transpose(1, 0, 2, 3)
        H = H.reshape(-1, C * F, C * F) / (self.xi[rows] ** 2)[:, None, None]
        return H + 2.0 * self.p.lam * np.eye(C * F)


def gaussian_blobs(n: int, n_features: int, n_classes: int, rng, separation: float = 1.0):
    """Isotropic unit-variance blobs around random class centres of scale ``separation``."""
    centres = separation * rng.standard_normal((n_classes, n_features))
    labels = rng.integers(0, n_classes, n)
    return centres[labels] + rng.standard_normal((n, n_features)), labels


def corrupt_labels(labels: np.ndarray, n_classes: int, p: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Replace each label by a uniformly random class with probability ``p``."""
    flip = rng.random(labels.size) < p
    out = labels.copy()
    out[flip] = rng.integers(0, n_classes, int(flip.sum()))
    return out, flip


def load_labeled_matrix(path, fmt: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read a features-plus-label matrix (last column = integer label) from ``.npy`` or text."""
    path = Path(path)
    fmt = fmt or ("npy" if path.suffix == ".npy" else "csv")
    if fmt == "npy":
        data = np.load(path)
    elif fmt in ("csv", "txt"):
        data = np.loadtxt(path, delimiter="," if fmt == "csv" else None, ndmin=2)
    else:
        raise ValueError(f"unknown data format {fmt!r}")
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError("data file must be a 2-d matrix with at least one feature column")
    labels = data[:, -1]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise ValueError("last column must hold nonnegative integer labels")
    return data[:, :-1].astype(float), labels.astype(np.int64)


def build_hyperclean(n_train: int = 1000, n_val: int = 200, n_features: int = 10, n_classes: int = 4,
                     p_corrupt: float = 0.3, seed=0, *, lam: float = 1e-3, separation: float = 1.0,
                     data: tuple[np.ndarray, np.ndarray] | None = None) -> HypercleanProblem:
    """Hyper-cleaning instance on synthetic blobs, or on ``data = (features, labels)`` if given.

    Training labels are corrupted with probability ``p_corrupt``; validation labels are clean.
    """
    if min(n_train, n_val, n_features, n_classes) < 1:
        raise ValueError("dimensions must be >= 1")
    if not 0.0 <= p_corrupt < 1.0:
        raise ValueError("p_corrupt must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    if data is None:
        X, labels = gaussian_blobs(n_train + n_val, n_features, n_classes, rng, separation)
    else:
        X, labels = (np.asarray(a) for a in data)
        if X.ndim != 2 or X.shape[0] != labels.shape[0]:
            raise ValueError("features and labels disagree in length")
        if X.shape[0] < n_train + n_val:
            raise ValueError(f"need {n_train + n_val} rows, data has {X.shape[0]}")
        if labels.max() >= n_classes:
            raise ValueError("labels exceed n_classes")
        n_features = X.shape[1]
        perm = rng.permutation(X.shape[0])[: n_train + n_val]
        X, labels = X[perm], labels[perm]
    Y_train, flipped = corrupt_labels(labels[:n_train], n_classes, p_corrupt, rng)
    return HypercleanProblem(d_x=n_train, d_y=n_classes * n_features, d_xi=1, d_eta=2,
                             domain=DomainBox.interval(XI_LOW, XI_HIGH),
                             X_train=X[:n_train], Y_train=Y_train, X_val=X[n_train:],
                             Y_val=labels[n_train:], n_classes=n_classes, lam=lam,
                             corrupted=flipped & (Y_train != labels[:n_train]))
