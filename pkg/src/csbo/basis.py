"""Feature maps over a bounded context domain and their conditioning metrics.

A feature map evaluates ``N`` basis atoms at a context ``xi``. Every kind except
``indicator`` is a tensor product of 1-d atoms on the box rescaled to
``[-1, 1]^d``, with multi-indices in graded lexicographic order so that any
prefix of the basis spans a principal block of the full tensor basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

KINDS = ("chebyshev", "fourier", "monomial", "indicator")

# boundary rounding allowed when checking that a context lies in the box
DOMAIN_TOL = 1e-12


class DomainError(ValueError):
    """A context lies outside the feature map's domain box."""


class RankDeficiencyError(ValueError):
    """Too few samples to estimate a covariance of full rank."""


class InfeasibleToleranceError(ValueError):
    """A requested approximation tolerance leaves the degree formula undefined."""


@dataclass(frozen=True)
class DomainBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("domain bounds must be finite")
        if np.any(lower >= upper):
            raise ValueError(f"empty domain: lower={lower}, upper={upper}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "DomainBox":
        return cls(np.array([lo]), np.array([hi]))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, xi, tol: float = DOMAIN_TOL) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.all((xi >= self.lower - tol) & (xi <= self.upper + tol), axis=-1)

    def rescale(self, xi) -> np.ndarray:
        """Affine map of the box onto ``[-1, 1]^d`` (clipped after the check)."""
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise ValueError(f"context has dimension {xi.shape[-1]}, domain has {self.dim}")
        inside = self.contains(xi)
        if not np.all(inside):
            bad = xi[~inside] if xi.ndim > 1 else xi
            raise DomainError(f"context {np.asarray(bad).tolist()} outside "
                              f"[{self.lower.tolist()}, {self.upper.tolist()}]")
        z = 2.0 * (xi - self.lower) / (self.upper - self.lower) - 1.0
        return np.clip(z, -1.0, 1.0)


def graded_lex_indices(d: int, count: int) -> list[tuple[int, ...]]:
    """First ``count`` multi-indices of ``N^d`` by total degree, ties lexicographic."""
    out: list[tuple[int, ...]] = []
    total = 0
    while len(out) < count:
        for idx in _compositions(total, d):
            out.append(idx)
            if len(out) == count:
                break
        total += 1
    return out


def _compositions(total: int, d: int) -> Iterator[tuple[int, ...]]:
    # lexicographic ascending order of d-tuples summing to `total`
    if d == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, d - 1):
            yield (first,) + rest


def chebyshev_atoms(z: np.ndarray, degree: int) -> np.ndarray:
    """T_0..T_degree at points ``z`` by the three-term recurrence, shape (..., degree+1)."""
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (degree + 1,))
    out[..., 0] = 1.0
    if degree >= 1:
        out[..., 1] = z
    for k in range(1, degree):
        out[..., k + 1] = 2.0 * z * out[..., k] - out[..., k - 1]
    return out


def fourier_atoms(z: np.ndarray, degree: int) -> np.ndarray:
    # atom 0 is 1, atom 2k-1 is cos(pi k z), atom 2k is sin(pi k z)
    z = np.asarray(z, dtype=float)
    out = np.empty(z.shape + (degree + 1,))
    out[..., 0] = 1.0
    for j in range(1, degree + 1):
        k = (j + 1) // 2
        out[..., j] = np.cos(math.pi * k * z) if j % 2 else np.sin(math.pi * k * z)
    return out


def monomial_atoms(z: np.ndarray, degree: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[..., None] ** np.arange(degree + 1)


_ATOMS: dict[str, Callable[[np.ndarray, int], np.ndarray]] = {
    "chebyshev": chebyshev_atoms,
    "fourier": fourier_atoms,
    "monomial": monomial_atoms,
}


@dataclass(frozen=True)
class FeatureMap:
    """Immutable basis family plus domain box.

    For ``kind="indicator"`` the multi-indices are the cell ids ``(0,), ..., (N-1,)``
    of an equal-width partition of a 1-d domain.
    """

    kind: str
    multi_indices: tuple[tuple[int, ...], ...]
    domain: DomainBox
    _index_array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}; expected one of {KINDS}")
        indices = tuple(tuple(int(k) for k in idx) for idx in self.multi_indices)
        if len(indices) < 1:
            raise ValueError("a feature map needs at least one atom")
        if len(set(indices)) != len(indices):
            raise ValueError("duplicate multi-indices")
        if any(len(idx) != self.domain.dim for idx in indices):
            raise ValueError("multi-index length must equal the domain dimension")
        if self.kind == "indicator":
            if self.domain.dim != 1:
                raise ValueError("indicator basis requires a 1-d context")
            if indices != tuple((j,) for j in range(len(indices))):
                raise ValueError("indicator indices must be cell ids 0..N-1")
        elif any(indices[0]):
            raise ValueError("the first atom must be the constant (all-zeros index)")
        arr = np.array(indices, dtype=int)
        arr.flags.writeable = False
        object.__setattr__(self, "multi_indices", indices)
        object.__setattr__(self, "_index_array", arr)

    @property
    def n_features(self) -> int:
        return len(self.multi_indices)

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, xi) -> np.ndarray:
        return evaluate(self, xi)


def _check_build_args(d_xi: int, count: int, domain: DomainBox):
    if d_xi < 1:
        raise ValueError("d_xi must be >= 1")
    if count < 1:
        raise ValueError("the basis needs at least one atom (N >= 1)")
    if domain.dim != d_xi:
        raise ValueError(f"domain has dimension {domain.dim}, expected {d_xi}")


def build_chebyshev(d_xi: int, max_total_entries: int, domain: DomainBox) -> FeatureMap:
    _check_build_args(d_xi, max_total_entries, domain)
    return FeatureMap("chebyshev", tuple(graded_lex_indices(d_xi, max_total_entries)), domain)


def build_fourier(d_xi: int, max_total_entries: int, domain: DomainBox) -> FeatureMap:
    _check_build_args(d_xi, max_total_entries, domain)
    return FeatureMap("fourier", tuple(graded_lex_indices(d_xi, max_total_entries)), domain)


def build_monomial(d_xi: int, max_total_entries: int, domain: DomainBox) -> FeatureMap:
    _check_build_args(d_xi, max_total_entries, domain)
    return FeatureMap("monomial", tuple(graded_lex_indices(d_xi, max_total_entries)), domain)


def build_indicator(n_cells: int, domain: DomainBox) -> FeatureMap:
    if domain.dim != 1:
        raise ValueError("indicator basis requires a 1-d context (d_xi = 1)")
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    return FeatureMap("indicator", tuple((j,) for j in range(n_cells)), domain)


def build_feature_map(kind: str, n_features: int, domain: DomainBox) -> FeatureMap:
    if kind == "indicator":
        return build_indicator(n_features, domain)
    builders = {"chebyshev": build_chebyshev, "fourier": build_fourier,
                "monomial": build_monomial}
    if kind not in builders:
        raise ValueError(f"unknown basis kind {kind!r}")
    return builders[kind](domain.dim, n_features, domain)


def evaluate(fmap: FeatureMap, xi) -> np.ndarray:
    """Evaluate the feature vector at one context (shape ``(d,)``) or a batch ``(n, d)``.

    Returns ``(N,)`` or ``(n, N)``. Raises :class:`DomainError` for contexts
    outside the domain box.
    """
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim <= 1
    xi = np.atleast_2d(xi.reshape(1, -1) if single else xi)
    z = fmap.domain.rescale(xi)
    if fmap.kind == "indicator":
        n = fmap.n_features
        cells = np.floor((z[:, 0] + 1.0) * 0.5 * n).astype(int)
        cells = np.clip(cells, 0, n - 1)  # right-closed last cell
        out = np.zeros((z.shape[0], n))
        out[np.arange(z.shape[0]), cells] = 1.0
    else:
        idx = fmap._index_array
        atoms = _ATOMS[fmap.kind](z, int(idx.max()))  # (n, d, degree+1)
        out = np.ones((z.shape[0], fmap.n_features))
        for j in range(fmap.dim):
            out *= atoms[:, j, idx[:, j]]
    return out[0] if single else out


def cell_of(fmap: FeatureMap, xi) -> np.ndarray:
    """Cell ids of contexts under an indicator map."""
    if fmap.kind != "indicator":
        raise ValueError("cell_of needs an indicator feature map")
    return np.argmax(np.atleast_2d(evaluate(fmap, np.atleast_2d(xi))), axis=1)


@dataclass(frozen=True)
class BasisMetrics:
    sup_norm: float
    min_eig: float
    n_samples: int
    analytic_sup_bound: float | None = None


def _as_samples(fmap: FeatureMap, samples) -> np.ndarray:
    xi = np.asarray(samples, dtype=float)
    if xi.ndim == 1:
        xi = xi.reshape(-1, fmap.dim)
    if xi.shape[0] == 0:
        raise ValueError("empty sample list")
    return xi


def analytic_sup_bound(fmap: FeatureMap) -> float | None:
    """Closed-form bound on sup ||Phi||: sqrt(N) for Chebyshev atoms (|T_k| <= 1), 1 for indicators."""
    if fmap.kind == "chebyshev":
        return math.sqrt(fmap.n_features)
    if fmap.kind == "indicator":
        return 1.0
    return None


def estimate_sup_norm(fmap: FeatureMap, samples) -> float:
    """``max(1, max_i ||Phi(xi_i)||)`` over the given contexts."""
    phi = evaluate(fmap, _as_samples(fmap, samples))
    return max(1.0, float(np.max(np.linalg.norm(phi, axis=1))))


def empirical_covariance(fmap: FeatureMap, samples) -> np.ndarray:
    phi = evaluate(fmap, _as_samples(fmap, samples))
    return phi.T @ phi / phi.shape[0]


def estimate_min_eigenvalue(fmap: FeatureMap, samples) -> float:
    """``min(1, lambda_min(Sigma_hat))`` with ``Sigma_hat = mean Phi Phi^T``."""
    xi = _as_samples(fmap, samples)
    if xi.shape[0] < fmap.n_features:
        raise RankDeficiencyError(
            f"{xi.shape[0]} samples cannot give a full-rank estimate for N={fmap.n_features}")
    lam = float(np.linalg.eigvalsh(empirical_covariance(fmap, xi))[0])
    if -1e-12 < lam < 0.0:
        lam = 0.0
    return min(1.0, max(lam, 0.0))


def basis_metrics(fmap: FeatureMap, samples) -> BasisMetrics:
    xi = _as_samples(fmap, samples)
    return BasisMetrics(
        sup_norm=estimate_sup_norm(fmap, xi),
        min_eig=estimate_min_eigenvalue(fmap, xi),
        n_samples=xi.shape[0],
        analytic_sup_bound=analytic_sup_bound(fmap),
    )


# ---------------------------------------------------------------------------
# 1-d Chebyshev series utilities


def chebyshev_coefficients(f: Callable[[np.ndarray], np.ndarray], degree: int,
                           n_nodes: int | None = None) -> np.ndarray:
    """Coefficients ``a_0..a_degree`` of ``f = sum_k a_k T_k`` on ``[-1, 1]``.

    Chebyshev-Gauss quadrature with ``4 (degree + 1)`` nodes unless ``n_nodes``
    is given; ``a_0`` carries the usual factor 1/2.
    """
    if degree < 0:
        raise ValueError("degree must be >= 0")
    m = 4 * (degree + 1) if n_nodes is None else int(n_nodes)
    if m < degree + 1:
        raise ValueError("need at least degree + 1 quadrature nodes")
    theta = math.pi * (np.arange(m) + 0.5) / m
    values = np.asarray(f(np.cos(theta)), dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("f returned non-finite values at the quadrature nodes")
    k = np.arange(degree + 1)
    coeffs = (2.0 / m) * np.cos(np.outer(k, theta)) @ values
    coeffs[0] *= 0.5
    return coeffs


def chebyshev_series(coeffs: Sequence[float], z) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    return chebyshev_atoms(np.asarray(z, dtype=float), len(coeffs) - 1) @ coeffs


def bernstein_ellipse(rho: float, n_points: int = 2048) -> np.ndarray:
    """Points on the ellipse with foci +-1 and semi-axis sum ``rho``."""
    if rho <= 1.0:
        raise ValueError("rho must exceed 1")
    w = rho * np.exp(2j * math.pi * np.arange(n_points) / n_points)
    return 0.5 * (w + 1.0 / w)


def bernstein_sup(f: Callable[[np.ndarray], np.ndarray], rho: float,
                  n_points: int = 2048) -> float:
    """Max of ``|f|`` on the Bernstein ellipse (bounds the open region by maximum modulus)."""
    return float(np.max(np.abs(f(bernstein_ellipse(rho, n_points)))))


def fit_geometric_decay(coeffs: Sequence[float], k_min: int = 2, k_max: int | None = None,
                        floor: float = 1e-14) -> tuple[float, float]:
    """Fit ``|a_k| <= 2 M rho^-k``.

    ``rho`` is exp(-slope) of a least-squares line through ``log|a_k|`` on
    ``[k_min, k_max]`` (terms under ``floor`` dropped); ``M`` is the smallest
    constant making the bound hold for every coefficient.
    """
    a = np.abs(np.asarray(coeffs, dtype=float))
    k_max = len(a) - 1 if k_max is None else min(k_max, len(a) - 1)
    ks = np.arange(k_min, k_max + 1)
    keep = a[ks] > floor
    if keep.sum() < 2:
        raise ValueError("not enough coefficients above the floor to fit a decay rate")
    slope, _ = np.polyfit(ks[keep], np.log(a[ks][keep]), 1)
    rho = float(np.exp(-slope))
    k_all = np.arange(len(a))
    M = float(np.max(a * rho ** k_all) / 2.0)
    return M, rho


def truncation_residual_bound(M: float, rho: float, n: int, d: int = 1) -> float:
    """Uniform error bound of the degree-``n`` tensor Chebyshev truncation."""
    if rho <= 1.0:
        raise ValueError("rho must exceed 1")
    return M * (2.0 / (rho - 1.0)) ** d * (1.0 - (1.0 - rho ** (-n)) ** d)


def chebyshev_degree_for_tolerance(eps_tilde: float, M: float, rho: float, d_xi: int,
                                   d_y: int) -> int:
    """Basis size ``n^d_xi`` guaranteeing uniform error ``eps_tilde`` for the coefficient bound (M, rho)."""
    if eps_tilde <= 0 or M <= 0:
        raise ValueError("eps_tilde and M must be positive")
    if not 1.0 < rho <= math.exp(0.5):
        raise ValueError("rho must lie in (1, e^(1/2)]")
    if d_xi < 1 or d_y < 1:
        raise ValueError("dimensions must be >= 1")
    u = eps_tilde / (M * math.sqrt(d_y)) * ((rho - 1.0) / 2.0) ** d_xi
    if not 0.0 < u < 1.0:
        raise InfeasibleToleranceError(
            f"eps_tilde={eps_tilde} gives (eps/(M sqrt(d_y)))((rho-1)/2)^d = {u:.4g}, "
            "which must lie in (0, 1); the tolerance exceeds the bound M (2/(rho-1))^d "
            "already met by the constant term")
    inner = 1.0 - (1.0 - u) ** (1.0 / d_xi)
    n = math.ceil(-math.log(inner) / math.log(rho))
    return max(n, 1) ** d_xi


def gram_matrix_1d(n: int) -> np.ndarray:
    """``B_ij = 1/2 int_{-1}^{1} T_i T_j dx`` for i, j < n, exact by Gauss-Legendre."""
    nodes, weights = np.polynomial.legendre.leggauss(max(n, 1) + 1)
    t = chebyshev_atoms(nodes, n - 1)
    return 0.5 * (t * weights[:, None]).T @ t


C_B = (math.pi - 1.0) / 32.0
