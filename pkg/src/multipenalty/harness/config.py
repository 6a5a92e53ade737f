"""Experiment configuration: defaults per experiment, a flat ``key = value``
file format and command-line overrides."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EXPERIMENTS",
    "default_config",
    "parse_config_text",
    "load_config",
]

EXPERIMENTS = ("param_sweep", "ensemble_compare", "phase_transition", "injectivity")
SOLVER_TAGS = ("am", "palm", "baseline")
TUNING_TAGS = ("oracle", "discrepancy")
MODE_TAGS = ("equal", "locked")
ENSEMBLE_TAGS = ("gaussian", "lognormal", "rank1", "identity")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    n1: int = 20
    n2: int = 300
    R: int = 1
    s1: float = 20.0
    s2: float = 20.0
    ensembles: tuple[str, ...] = ("gaussian",)
    m_grid: tuple[int, ...] = (160,)
    noise_rel: float = 0.05
    trials: int = 20
    seed: int = 0
    solver: str = "am"
    tuning: str = "oracle"
    out: str = "results.csv"
    threshold: float | None = None
    init_error: float = 0.6
    dense_fraction: float = 0.1
    # param sweep
    modes: tuple[str, ...] = ("equal", "locked")
    mu0: float = 4.0
    halvings: int = 16
    # ensemble comparison: square problem for rank-one measurements
    rank1_n: int = 50
    rank1_s: float = 10.0
    rank1_m_grid: tuple[int, ...] = (50, 75, 100, 150, 200, 300)
    # phase transition
    grid: int = 4
    s_fracs: tuple[float, ...] = ()
    m_fracs: tuple[float, ...] = ()
    # injectivity
    samples: int = 200
    max_outer_iters: int = 500

    def __post_init__(self):
        # unset phase-transition axes follow the grid resolution
        if self.grid >= 1:
            k = self.grid
            if not self.s_fracs:
                object.__setattr__(self, "s_fracs", tuple(0.3 * i / k for i in range(1, k + 1)))
            if not self.m_fracs:
                m = tuple(0.05 + 0.25 * i / (k - 1) for i in range(k)) if k > 1 else (0.3,)
                object.__setattr__(self, "m_fracs", m)
        try:
            self._validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def _validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if min(self.n1, self.n2, self.R) < 1:
            raise ValueError("n1, n2 and R must be positive")
        if not (1 <= self.s1 <= self.n1 and 1 <= self.s2 <= self.n2):
            raise ValueError("need 1 <= s1 <= n1 and 1 <= s2 <= n2")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a nonnegative 64-bit integer")
        if self.solver not in SOLVER_TAGS:
            raise ValueError(f"solver must be one of {SOLVER_TAGS}")
        if self.tuning not in TUNING_TAGS:
            raise ValueError(f"tuning must be one of {TUNING_TAGS}")
        for name in ("ensembles", "m_grid", "modes", "s_fracs", "m_fracs", "rank1_m_grid"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")
        for e in self.ensembles:
            if e not in ENSEMBLE_TAGS:
                raise ValueError(f"unknown ensemble {e!r}")
        for mode in self.modes:
            if mode not in MODE_TAGS:
                raise ValueError(f"unknown parameter mode {mode!r}")
        if min(self.m_grid) < 1 or min(self.rank1_m_grid) < 1:
            raise ValueError("measurement counts must be positive")
        if self.noise_rel < 0:
            raise ValueError("noise_rel must be nonnegative")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if not (self.init_error > 0 and self.mu0 > 0):
            raise ValueError("init_error and mu0 must be positive")
        if self.grid < 1:
            raise ValueError("grid must be >= 1")
        if self.halvings < 0 or self.samples < 1 or self.max_outer_iters < 1:
            raise ValueError("halvings >= 0, samples >= 1 and max_outer_iters >= 1 required")
        if not all(0 < f <= 1 for f in self.s_fracs + self.m_fracs):
            raise ValueError("grid fractions must lie in (0, 1]")
        if self.experiment == "param_sweep" and self.solver == "baseline":
            raise ValueError("the parameter sweep needs a regularized solver")
        if self.experiment == "ensemble_compare" and "rank1" in self.ensembles:
            if not 1 <= self.rank1_s <= self.rank1_n:
                raise ValueError("need 1 <= rank1_s <= rank1_n")
        if self.experiment == "injectivity" and "identity" in self.ensembles:
            if any(m != self.n1 * self.n2 for m in self.m_grid):
                raise ValueError("identity ensemble needs every m equal to n1*n2")
        if self.experiment in ("param_sweep", "phase_transition"):
            if len(self.ensembles) != 1 or self.ensembles[0] not in ("gaussian", "lognormal"):
                raise ValueError(f"{self.experiment} takes a single gaussian or lognormal ensemble")

    def digest(self) -> str:
        """Short hash of everything that affects results."""
        d = dataclasses.asdict(self)
        d.pop("out")
        return hashlib.sha256(repr(sorted(d.items())).encode()).hexdigest()[:12]


_DEFAULTS: dict[str, dict[str, Any]] = {
    "param_sweep": {},
    "ensemble_compare": {
        "ensembles": ("gaussian", "lognormal", "rank1"),
        "m_grid": (100, 160, 220, 300, 400),
        "noise_rel": 0.1,
    },
    "phase_transition": {
        "n1": 16, "n2": 100, "R": 3, "s1": 16.0,
        "noise_rel": 0.2, "trials": 5, "threshold": 0.4,
    },
    "injectivity": {
        "n1": 20, "n2": 50, "s1": 5.0, "s2": 5.0,
        "ensembles": ("gaussian", "lognormal"),
        "m_grid": (256, 1024, 4096), "noise_rel": 0.0, "trials": 1,
    },
}


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    if experiment not in _DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    values = {**_DEFAULTS[experiment], **overrides}
    return _build(experiment, values)


def _build(experiment, values):
    try:
        return ExperimentConfig(experiment=experiment, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind.startswith("tuple"):
            item = str if "str" in kind else int if "int" in kind else float
            return tuple(item(v.strip()) for v in raw.split(",") if v.strip())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind.startswith("float | None"):
            return None if raw.lower() in ("", "none") else float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment, lists are
    comma-separated."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = raw if key == "experiment" else _convert(key, raw)
    return out


def load_config(experiment: str, path: str | Path | None = None,
                overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults for ``experiment``, then the config file, then ``overrides``."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = parse_config_text(text)
        named = values.pop("experiment", experiment)
        if named != experiment:
            raise ConfigError(f"config is for {named!r}, not {experiment!r}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return default_config(experiment, **values)
