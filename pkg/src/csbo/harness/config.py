"""Experiment configuration: flat ``key = value`` text with dot-nested keys.

Example::

    problem = traffic
    basis = chebyshev
    n_basis = 5
    n_trials = 5
    solver.alpha = 0.1
    grid_search.beta = 0.001, 0.01
    options.sigma0 = 0.05

Lists are comma-separated; ``#`` starts a comment. A ``config.json`` echo written
by the harness loads back through :func:`load_config` unchanged.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..basis import KINDS
from ..solver import SolverConfig

PROBLEMS = ("quadratic", "traffic", "hyperclean")
GRID_KEYS = ("alpha", "beta", "t_inner")
SOLVER_KEYS = tuple(f.name for f in fields(SolverConfig))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``options`` carries instance-specific settings (``d_x``, ``sigma0``,
    ``n_features`` and so on). ``timing`` switches real wall-clock times on in
    ``epochs.csv``; it is off by default so outputs are byte-reproducible.
    """

    problem: str = "quadratic"
    basis: str = "chebyshev"
    n_basis: int = 5
    solver: SolverConfig = field(default_factory=SolverConfig)
    n_trials: int = 1
    n_train: int = 1000
    n_test: int = 1000
    seed: int = 0
    grid_search: dict[str, list] | None = None
    output_path: str = "results"
    data_path: str | None = None
    data_format: str | None = None
    options: dict[str, Any] = field(default_factory=dict)
    ma_window: int | None = None
    timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.basis not in KINDS:
            raise ConfigError(f"basis must be one of {KINDS}, got {self.basis!r}")
        if self.n_basis < 1 or self.n_trials < 1 or self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_basis, n_trials, n_train and n_test must be >= 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.grid_search is not None:
            for key, values in self.grid_search.items():
                if key not in GRID_KEYS:
                    raise ConfigError(f"unknown grid key {key!r}; expected one of {GRID_KEYS}")
                if not values:
                    raise ConfigError(f"grid list {key!r} is empty")

    @property
    def window(self) -> int:
        return self.ma_window or max(1, self.solver.epochs // 20)

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["solver"] = asdict(self.solver)
        return out


def _parse_scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_parse_scalar(p.strip()) for p in text.split(",") if p.strip()]
    return _parse_scalar(text)


def parse_text(text: str) -> dict:
    """Nested dict from ``key = value`` lines."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        node = out
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"line {lineno}: {key!r} nests under a scalar")
        node[leaf] = parse_value(value)
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    solver = dict(data.pop("solver", None) or {})
    bad = set(solver) - set(SOLVER_KEYS)
    if bad:
        raise ConfigError(f"unknown solver keys: {sorted(bad)}")
    for key in ("t_inner", "k_neumann", "batch", "epochs", "seed"):
        if key in solver:
            solver[key] = int(solver[key])
    grid = data.pop("grid_search", None)
    if grid:
        grid = {k: (v if isinstance(v, list) else [v]) for k, v in grid.items()}
    try:
        return ExperimentConfig(solver=SolverConfig(**solver), grid_search=grid or None, **data)
    except TypeError as err:
        raise ConfigError(str(err)) from err


def load_config(path) -> ExperimentConfig:
    """Read a ``key = value`` file, or a JSON echo written by the harness."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        return config_from_dict(json.loads(text))
    return config_from_dict(parse_text(text))
