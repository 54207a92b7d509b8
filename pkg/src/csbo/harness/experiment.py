"""Seeded trials, grid search, metrics and CSV/JSON output."""

from __future__ import annotations

import csv
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import oracle
from ..basis import build_feature_map
from ..problems import build_hyperclean, build_quadratic, build_traffic, load_labeled_matrix
from ..problems.base import CsboProblem, JointSamples
from ..problems.hyperclean import HypercleanProblem
from ..reduction import ReducedSbo
from ..solver import EpochRecord, RunResult, SolverConfig, run
from .config import ExperimentConfig

METRICS = ("test_loss", "reference_loss", "delta_y", "delta_x", "train_loss", "val_loss", "wall_time")
SUMMARY_HEADER = ["problem", "basis", "n_basis", "metric", "mean", "ci95_low", "ci95_high", "n_trials"]
EPOCH_HEADER = ["trial", "epoch", "train_loss", "val_loss", "grad_norm", "wall_time"]
CURVE_HEADER = ["trial", "epoch", "train_loss_ma", "val_loss_ma"]
GRID_HEADER = ["alpha", "beta", "t_inner", "criterion", "failed", "message"]
Z95 = 1.96


class GridSearchError(RuntimeError):
    pass


@dataclass
class TrialMetrics:
    """Evaluation of one trial's tail-averaged solution ``(x_bar, W_bar)``.

    ``test_loss`` is ``F(x_bar)`` with exact lower solves on the test set,
    ``delta_y`` the mean squared gap between ``y*(x_bar, xi)`` and
    ``W_bar Phi(xi)`` over test contexts, ``delta_x = ||x_bar - x*||^2``.
    ``train_loss`` and ``val_loss`` use the parameterized lower solution.
    """

    test_loss: float
    reference_loss: float
    delta_y: float
    delta_x: float
    train_loss: float
    val_loss: float
    wall_time: float


@dataclass
class TrialOutcome:
    trial: int
    seed: int
    metrics: TrialMetrics | None
    records: list[EpochRecord]
    failed: bool
    message: str = ""


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    trials: list[TrialOutcome] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return any(t.failed for t in self.trials)

    def summary(self) -> list[dict]:
        rows = []
        ok = [t.metrics for t in self.trials if t.metrics is not None]
        names = METRICS if self.config.timing else tuple(m for m in METRICS if m != "wall_time")
        for name in names:
            values = np.array([getattr(m, name) for m in ok], dtype=float)
            values = values[np.isfinite(values)]
            mean, lo, hi = summarize(values)
            rows.append({"problem": self.config.problem, "basis": self.config.basis,
                         "n_basis": self.config.n_basis, "metric": name, "mean": mean,
                         "ci95_low": lo, "ci95_high": hi, "n_trials": int(values.size)})
        return rows

    def metric(self, name: str) -> float:
        return next(r["mean"] for r in self.summary() if r["metric"] == name)


@dataclass
class GridReport:
    config: ExperimentConfig
    best: SolverConfig
    rows: list[dict]


def summarize(values: np.ndarray) -> tuple[float, float, float]:
    """Mean and normal-theory 95% interval ``mean -/+ 1.96 s / sqrt(n)``."""
    if values.size == 0:
        return (math.nan, math.nan, math.nan)
    mean = float(np.mean(values))
    if values.size < 2:
        return (mean, math.nan, math.nan)
    half = Z95 * float(np.std(values, ddof=1)) / math.sqrt(values.size)
    return (mean, mean - half, mean + half)


# ---- construction -----------------------------------------------------------------------

def build_problem(config: ExperimentConfig, seed: int) -> CsboProblem:
    opts = dict(config.options)
    if config.problem == "quadratic":
        return build_quadratic(int(opts.pop("d_x", 3)), int(opts.pop("d_y", 2)),
                               int(opts.pop("instance_seed", config.seed)), **opts)
    if config.problem == "traffic":
        return build_traffic(seed, **opts)
    data = None
    if config.data_path:
        data = load_labeled_matrix(config.data_path, config.data_format)
    return build_hyperclean(seed=seed, data=data, **opts)


EVAL_CONTEXTS = 16


def _datasets(problem: CsboProblem, config: ExperimentConfig, seed: int):
    train = problem.sample_joint(config.n_train, [seed, 1])
    if isinstance(problem, HypercleanProblem):
        return train, problem.validation_samples(EVAL_CONTEXTS)
    return train, problem.sample_joint(config.n_test, [seed, 2])


def _val_fn(problem: CsboProblem, reduced: ReducedSbo, test: JointSamples):
    if isinstance(problem, HypercleanProblem):
        xis = problem.eval_contexts(EVAL_CONTEXTS)
        phi = reduced.phi(xis)
        return lambda x, W: problem.validation_loss(phi @ W.T, xis)
    b = reduced.batch(test)
    return lambda x, W: float(np.mean(reduced.f_phi(x, W, *b.args, phi=b.phi)))


@dataclass
class _Setup:
    problem: CsboProblem
    reduced: ReducedSbo
    train: JointSamples
    test: JointSamples
    val_fn: object

    def train_loss(self, x, W) -> float:
        b = self.reduced.batch(self.train)
        return float(np.mean(self.reduced.f_phi(x, W, *b.args, phi=b.phi)))


def setup_trial(config: ExperimentConfig, seed: int) -> _Setup:
    problem = build_problem(config, seed)
    reduced = ReducedSbo(problem, build_feature_map(config.basis, config.n_basis, problem.domain))
    train, test = _datasets(problem, config, seed)
    return _Setup(problem, reduced, train, test, _val_fn(problem, reduced, test))


def evaluate_trial(setup: _Setup, result: RunResult, elapsed: float) -> TrialMetrics:
    problem, reduced, test = setup.problem, setup.reduced, setup.test
    x_bar, W_bar = result.x_tail_avg, result.W_tail_avg
    test_loss = oracle.empirical_value(problem, x_bar, test)
    ctx = np.unique(test.xi, axis=0)
    y_star = oracle.solve_lower_exact(problem, x_bar, ctx)
    delta_y = float(np.mean(np.sum((y_star - reduced.y_of(W_bar, ctx)) ** 2, axis=1)))
    if problem.x_star is not None:
        delta_x = float(np.sum((x_bar - problem.x_star) ** 2))
        reference = oracle.empirical_value(problem, problem.x_star, test)
    else:
        delta_x = reference = math.nan
    return TrialMetrics(test_loss, reference, delta_y, delta_x, setup.train_loss(x_bar, W_bar),
                        float(setup.val_fn(x_bar, W_bar)), elapsed)


def run_trial(config: ExperimentConfig, trial: int, solver_cfg: SolverConfig | None = None,
              evaluate: bool = True) -> tuple[TrialOutcome, RunResult, _Setup]:
    """One seeded trial: fresh instance and data, a solver run, and its metrics."""
    seed = config.seed + trial
    cfg = (solver_cfg or config.solver).with_(seed=seed)
    setup = setup_trial(config, seed)
    start = time.perf_counter()
    result = run(setup.reduced, setup.train, cfg, val_fn=setup.val_fn)
    elapsed = time.perf_counter() - start
    metrics = None
    if evaluate and not result.failed:
        metrics = evaluate_trial(setup, result, elapsed)
    return TrialOutcome(trial, seed, metrics, result.records, result.failed, result.message), result, setup


def _trial_job(args):
    config, trial = args
    try:
        return run_trial(config, trial)[0]
    except Exception as err:  # a broken trial must not sink the whole report
        return TrialOutcome(trial, config.seed + trial, None, [], True, f"{type(err).__name__}: {err}")


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def run_experiment(config: ExperimentConfig, jobs: int | None = None) -> ExperimentReport:
    """All ``n_trials`` trials, with per-trial seeds ``seed + trial``."""
    jobs = config.jobs if jobs is None else jobs
    outcomes = _map(_trial_job, [(config, t) for t in range(config.n_trials)], jobs)
    return ExperimentReport(config, sorted(outcomes, key=lambda o: o.trial))


# ---- grid search ------------------------------------------------------------------------------

def _grid_job(args):
    config, cell = args
    alpha, beta, t_inner = cell
    cfg = config.solver.with_(alpha=alpha, beta=beta, t_inner=int(t_inner))
    row = {"alpha": alpha, "beta": beta, "t_inner": int(t_inner), "criterion": math.nan,
           "failed": False, "message": ""}
    try:
        _, result, setup = run_trial(config, 0, cfg, evaluate=False)
    except Exception as err:
        row.update(failed=True, message=f"{type(err).__name__}: {err}")
        return row
    if result.failed:
        row.update(failed=True, message=result.message)
        return row
    x_bar, W_bar = result.x_tail_avg, result.W_tail_avg
    if isinstance(setup.problem, HypercleanProblem):
        row["criterion"] = float(setup.val_fn(x_bar, W_bar))
    else:
        row["criterion"] = setup.train_loss(x_bar, W_bar)
    if not np.isfinite(row["criterion"]):
        row.update(failed=True, message="non-finite selection criterion")
    return row


def run_grid_search(config: ExperimentConfig, jobs: int | None = None) -> GridReport:
    """Evaluate every ``(alpha, beta, t_inner)`` cell on trial 0 and return the best.

    The criterion is the tail-averaged training upper loss, or the validation loss
    for hyper-cleaning. Diverged cells are excluded; ties go to the smaller
    ``alpha``, then ``beta``, then ``t_inner``.
    """
    if not config.grid_search:
        raise GridSearchError("config has no grid_search lists")
    jobs = config.jobs if jobs is None else jobs
    grid = config.grid_search
    axes = [sorted(grid.get(k, [getattr(config.solver, k)])) for k in ("alpha", "beta", "t_inner")]
    cells = list(itertools.product(*axes))
    rows = _map(_grid_job, [(config, c) for c in cells], jobs)
    ok = [r for r in rows if not r["failed"]]
    if not ok:
        detail = "; ".join(f"(alpha={r['alpha']}, beta={r['beta']}, t_inner={r['t_inner']}): {r['message']}"
                           for r in rows)
        raise GridSearchError(f"every grid cell failed: {detail}")
    best = min(ok, key=lambda r: (r["criterion"], r["alpha"], r["beta"], r["t_inner"]))
    cfg = config.solver.with_(alpha=best["alpha"], beta=best["beta"], t_inner=best["t_inner"])
    return GridReport(config, cfg, rows)


# ---- output ----------------------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else repr(float(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean over at most ``window`` points."""
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    for i in range(values.size):
        out[i] = values[max(0, i - window + 1) : i + 1].mean()
    return out


def emit_results(report: ExperimentReport | GridReport, path) -> Path:
    """Write ``summary.csv``, ``epochs.csv``, ``curves.csv`` and ``config.json`` (``grid.csv`` for grids)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    config = report.config
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    if isinstance(report, GridReport):
        _write_csv(out / "grid.csv", GRID_HEADER, report.rows)
        (out / "best_solver.json").write_text(json.dumps(asdict(report.best), indent=2, sort_keys=True) + "\n")
        return out
    _write_csv(out / "summary.csv", SUMMARY_HEADER, report.summary() if report.trials else [])
    epochs, curves = [], []
    for t in report.trials:
        for r in t.records:
            epochs.append({"trial": t.trial, "epoch": r.epoch, "train_loss": r.train_loss,
                           "val_loss": r.val_loss, "grad_norm": r.grad_norm,
                           "wall_time": r.wall_time if config.timing else 0.0})
        if t.records:
            tr = moving_average([r.train_loss for r in t.records], config.window)
            va = moving_average([r.val_loss for r in t.records], config.window)
            curves += [{"trial": t.trial, "epoch": r.epoch, "train_loss_ma": a, "val_loss_ma": b}
                       for r, a, b in zip(t.records, tr, va)]
    _write_csv(out / "epochs.csv", EPOCH_HEADER, epochs)
    _write_csv(out / "curves.csv", CURVE_HEADER, curves)
    failures = [{"trial": t.trial, "message": t.message} for t in report.trials if t.failed]
    if failures:
        (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    return out
