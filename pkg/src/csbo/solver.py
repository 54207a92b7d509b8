"""Double-loop stochastic solver for the reduced problem.

Each outer step runs ``t_inner`` SGD steps on ``W`` (warm-started from the
previous step), estimates the hypergradient with a truncated Neumann series for
the inverse reduced Hessian, and takes a projected gradient step on ``x``.
With the indicator feature map this is the partition baseline.
"""

from __future__ import annotations

import hashlib
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .basis import build_indicator
from .problems.base import CsboProblem, JointSamples, NumericalDomainError
from .problems.quadratic import QuadraticProblem
from .reduction import Batch, ReducedSbo

W_LIMIT = 1e8


class DivergenceError(RuntimeError):
    """The inner iterate left the ball ``||W|| <= 1e8``."""


class NeumannScalingWarning(UserWarning):
    """``s * lambda_max >= 1``: the Neumann series does not contract."""


@dataclass(frozen=True)
class SolverConfig:
    """Tunables of the double-loop solver.

    Attributes
    ----------
    alpha, beta : float
        Outer (``x``) and inner (``W``) step sizes.
    t_inner : int
        Inner SGD steps per outer step.
    k_neumann : int
        Number of Neumann terms, each with its own fresh minibatch.
    s_neumann : float
        Neumann scaling.
    batch : int
        Minibatch size for outer steps and inner steps.
    epochs : int
        Passes over the training set.
    seed : int
        Root seed of the run's random streams.
    tail_fraction : float
        Fraction of final epochs averaged into the reported solution.
    neumann_batch : int or None
        Minibatch size of each Neumann draw, defaults to ``batch``.
    """

    alpha: float = 0.1
    beta: float = 0.1
    t_inner: int = 10
    k_neumann: int = 10
    s_neumann: float = 1e-2
    batch: int = 64
    epochs: int = 10
    seed: int = 0
    tail_fraction: float = 0.1
    neumann_batch: int | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0 or self.s_neumann <= 0:
            raise ValueError("alpha must be >= 0; beta and s_neumann must be > 0")
        for name in ("t_inner", "k_neumann", "batch", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.tail_fraction <= 1.0:
            raise ValueError("tail_fraction must lie in (0, 1]")
        if self.neumann_batch is not None and self.neumann_batch < 1:
            raise ValueError("neumann_batch must be >= 1")

    @property
    def n_tail(self) -> int:
        return max(1, math.ceil(self.tail_fraction * self.epochs))

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    grad_norm: float
    wall_time: float


@dataclass
class RunResult:
    """Trajectory summary of one run; ``failed`` runs keep the records gathered so far."""

    x_final: np.ndarray
    W_final: np.ndarray
    x_tail_avg: np.ndarray
    W_tail_avg: np.ndarray
    records: list[EpochRecord]
    seed: int
    failed: bool = False
    message: str = ""
    warnings: list[str] = field(default_factory=list)

    def fingerprint(self) -> str:
        """Hash of everything except wall-clock times."""
        h = hashlib.sha256()
        for a in (self.x_final, self.W_final, self.x_tail_avg, self.W_tail_avg):
            h.update(np.ascontiguousarray(a, dtype=float).tobytes())
        for r in self.records:
            h.update(np.array([r.epoch, r.train_loss, r.val_loss, r.grad_norm]).tobytes())
        h.update(f"{self.seed}|{self.failed}|{self.message}".encode())
        return h.hexdigest()


def _check_w(W: np.ndarray, beta: float, step: int) -> None:
    norm = float(np.linalg.norm(W))
    if not np.isfinite(norm) or norm > W_LIMIT:
        raise DivergenceError(
            f"inner iterate diverged at inner step {step}: ||W|| = {norm:.3e} > {W_LIMIT:.0e}; "
            f"reduce the inner step size beta = {beta:g}")


def _draw(pool: Batch, size: int, rng: np.random.Generator) -> Batch:
    if size >= len(pool):
        return pool
    return pool.take(np.sort(rng.choice(len(pool), size=size, replace=False)))


def inner_loop(reduced: ReducedSbo, x, W_in, samples: Batch, config: SolverConfig,
               rng: np.random.Generator | None = None) -> np.ndarray:
    """``t_inner`` SGD steps ``W <- W - beta * grad_W g_Phi`` on minibatches from ``samples``.

    Each step draws ``config.batch`` samples without replacement (the whole pool if
    it is smaller).
    """
    if len(samples) == 0:
        raise ValueError("empty sample pool")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    W = np.array(W_in, dtype=float)
    for step in range(config.t_inner):
        b = _draw(samples, config.batch, rng)
        W -= config.beta * reduced.grad_gphi_W(x, W, b.xi, b.eta, phi=b.phi)
        _check_w(W, config.beta, step + 1)
    return W


def _neumann_lambda_max(reduced: ReducedSbo, draw: Batch) -> float | None:
    problem = reduced.problem
    if not isinstance(problem, QuadraticProblem):
        return None
    gram = draw.phi.T @ draw.phi / len(draw)
    return float(np.linalg.eigvalsh(problem.Q)[-1] * np.linalg.eigvalsh(gram)[-1])


def neumann_inverse_apply(reduced: ReducedSbo, x, W, v, draws: Sequence[Batch], s: float,
                          log: list[str] | None = None) -> np.ndarray:
    """Truncated Neumann estimate ``s * sum_{j=0}^{K} prod_{k<=j} (I - s H_k) v``.

    ``H_k`` is the reduced Hessian on the ``k``-th draw, applied matrix-free;
    ``K = len(draws)``.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    p = np.array(v, dtype=float)
    acc = p.copy()
    for k, draw in enumerate(draws):
        lam = _neumann_lambda_max(reduced, draw)
        if lam is not None and s * lam >= 1.0:
            msg = f"Neumann draw {k}: s * lambda_max = {s * lam:.3g} >= 1, series does not contract"
            warnings.warn(msg, NeumannScalingWarning, stacklevel=2)
            if log is not None:
                log.append(msg)
        p = p - s * reduced.hess_gphi_WW_apply(x, W, draw.xi, draw.eta, p, phi=draw.phi)
        acc += p
    return s * acc


def hypergradient(reduced: ReducedSbo, x, W, batch: Batch, config: SolverConfig,
                  draws: Sequence[Batch] | None = None, rng: np.random.Generator | None = None,
                  inverse_apply: Callable[[np.ndarray], np.ndarray] | None = None,
                  log: list[str] | None = None) -> np.ndarray:
    """Batch estimate of ``grad_x f_Phi - grad^2_xW g_Phi [grad^2_WW g_Phi]^{-1} grad_W f_Phi``.

    The inverse is the Neumann estimate over ``draws`` (``k_neumann`` fresh
    minibatches drawn from ``batch`` with ``rng`` when omitted), unless
    ``inverse_apply`` supplies an exact one.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    v = reduced.grad_fphi_W(x, W, batch.xi, batch.eta, phi=batch.phi)
    if inverse_apply is not None:
        q = inverse_apply(v)
    else:
        if draws is None:
            rng = np.random.default_rng(config.seed) if rng is None else rng
            size = config.neumann_batch or config.batch
            draws = [_draw(batch, size, rng) for _ in range(config.k_neumann)]
        q = neumann_inverse_apply(reduced, x, W, v, draws, config.s_neumann, log)
    grad = (reduced.grad_fphi_x(x, W, batch.xi, batch.eta, phi=batch.phi)
            - reduced.hess_gphi_xW_apply(x, W, batch.xi, batch.eta, q, phi=batch.phi))
    if not np.all(np.isfinite(grad)):
        raise NumericalDomainError("hypergradient is not finite")
    return grad


def run(reduced: ReducedSbo, train: JointSamples, config: SolverConfig, *, x0=None, W0=None,
        val_fn: Callable[[np.ndarray, np.ndarray], float] | None = None) -> RunResult:
    """Seeded double-loop run; per epoch the training set is shuffled and split into minibatches.

    ``val_fn(x, W)`` is evaluated at the end of every epoch when given.
    """
    if len(train) == 0:
        raise ValueError("empty training set")
    problem = reduced.problem
    shuffle_ss, inner_ss, neumann_ss = np.random.SeedSequence(config.seed).spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    inner_rng = np.random.default_rng(inner_ss)
    neumann_rng = np.random.default_rng(neumann_ss)

    pool = reduced.batch(train)
    n = len(pool)
    batch = min(config.batch, n)
    steps = max(1, n // batch)
    nb = config.neumann_batch or config.batch
    x = problem.project_x(np.array(problem.initial_x() if x0 is None else x0, dtype=float))
    W = np.array(reduced.zeros() if W0 is None else W0, dtype=float)

    records: list[EpochRecord] = []
    snapshots: list[tuple[np.ndarray, np.ndarray]] = []
    log: list[str] = []
    failed, message = False, ""
    start = time.perf_counter()
    try:
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            h_sum = np.zeros(problem.d_x)
            for k in range(steps):
                b = pool.take(order[k * batch : (k + 1) * batch])
                W = inner_loop(reduced, x, W, pool, config, inner_rng)
                draws = [_draw(pool, nb, neumann_rng) for _ in range(config.k_neumann)]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NeumannScalingWarning)
                    h = hypergradient(reduced, x, W, b, config, draws=draws, log=log)
                h_sum += h
                x = problem.project_x(x - config.alpha * h)
            train_loss = float(np.mean(reduced.f_phi(x, W, pool.xi, pool.eta, phi=pool.phi)))
            val = float(val_fn(x, W)) if val_fn is not None else float("nan")
            records.append(EpochRecord(epoch, train_loss, val, float(np.linalg.norm(h_sum / steps)),
                                       time.perf_counter() - start))
            snapshots.append((x.copy(), W.copy()))
    except (DivergenceError, NumericalDomainError, FloatingPointError) as err:
        failed, message = True, str(err)

    if snapshots:
        tail = snapshots[-config.n_tail :]
        x_bar = np.mean([s[0] for s in tail], axis=0)
        W_bar = np.mean([s[1] for s in tail], axis=0)
    else:
        x_bar, W_bar = x.copy(), W.copy()
    if failed:
        x_final, W_final = (snapshots[-1] if snapshots else (x, W))
    else:
        x_final, W_final = x, W
    return RunResult(x_final=np.array(x_final), W_final=np.array(W_final), x_tail_avg=x_bar,
                     W_tail_avg=W_bar, records=records, seed=config.seed, failed=failed,
                     message=message, warnings=sorted(set(log)))


def run_partition_baseline(problem: CsboProblem, n_cells: int, train: JointSamples,
                           config: SolverConfig, **kw) -> RunResult:
    """Partition baseline: ``run`` with the indicator map of ``n_cells`` equal cells.

    Each column of ``W`` is the lower-level variable of one cell and only samples
    in that cell move it, so this is the per-cell subproblem scheme with memory
    ``d_x + n_cells * d_y``.
    """
    if problem.d_xi != 1:
        raise ValueError("the partition baseline needs a one-dimensional context")
    return run(ReducedSbo(problem, build_indicator(n_cells, problem.domain)), train, config, **kw)
