"""Experiment configuration: one YAML file, validated, with every default filled in.

Example::

    cohort:
      preset: strong        # strong | weak | none
      dir: cohort
      n_per_group: 40
      seed: 0
    n_test_per_group: 15
    train: {learning_rate: 3.0, epochs: 500, l2: 1.0e-4, seed: 0}
    al: {n_initial: 10, batch_size: 4, n_cycles: 5}
    grid:
      compositions: [50/50, 80/20, 20/80]
      strategies: [random, mean_entropy, localized_entropy, weighted_localized_entropy]
      seeds: [0, 1, 2, 3, 4]
    out: results

Relative paths are resolved against the directory holding the config file.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .acquisition import StrategyKind
from .surrogate import PRESETS, CohortConfig, TrainConfig, preset

DEFAULT_COMPOSITIONS = ("50/50", "80/20", "20/80")


class ConfigError(ValueError):
    pass


def parse_composition(text: str, n_initial: int) -> dict[str, int]:
    """``"80/20"`` -> ``{"G1": 8, "G2": 2}`` for ``n_initial=10``."""
    try:
        a, b = (float(x) for x in str(text).split("/"))
    except ValueError:
        raise ConfigError(f"composition must look like '50/50', got {text!r}") from None
    if a < 0 or b < 0 or a + b <= 0:
        raise ConfigError(f"composition {text!r} must have nonnegative parts and a positive total")
    g1 = int(round(n_initial * a / (a + b)))
    return {"G1": g1, "G2": n_initial - g1}


@dataclass(frozen=True)
class ALSettings:
    n_initial: int = 10
    batch_size: int = 4
    n_cycles: int = 5
    dilation_radius: int = 2
    threshold: float = 0.5
    seg_threshold: float = 0.95


@dataclass(frozen=True)
class ExperimentGrid:
    compositions: tuple[str, ...] = DEFAULT_COMPOSITIONS
    strategies: tuple[StrategyKind, ...] = tuple(StrategyKind)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    include_labeled: bool = False

    def __post_init__(self):
        for name in ("compositions", "strategies", "seeds"):
            if not getattr(self, name):
                raise ConfigError(f"grid.{name} must be nonempty")
        for s in self.seeds:
            if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2**64:
                raise ConfigError(f"seeds must be 64-bit nonnegative integers, got {s!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    preset_name: str
    cohort: CohortConfig
    cohort_dir: Path
    n_test_per_group: int = 15
    train: TrainConfig = TrainConfig()
    al: ALSettings = ALSettings()
    grid: ExperimentGrid = ExperimentGrid()
    out: Path = Path("results")
    jobs: int | None = None
    source: Path | None = field(default=None, compare=False)

    def resolved(self) -> dict[str, Any]:
        """Plain-data view of every setting, defaults included."""
        return {
            "cohort": {"preset": self.preset_name, "dir": str(self.cohort_dir), **self.cohort.to_dict()},
            "n_test_per_group": self.n_test_per_group,
            "train": dataclasses.asdict(self.train),
            "al": dataclasses.asdict(self.al),
            "grid": {
                "compositions": list(self.grid.compositions),
                "strategies": [s.value for s in self.grid.strategies],
                "seeds": list(self.grid.seeds),
                "include_labeled": self.grid.include_labeled,
            },
            "out": str(self.out),
            "jobs": self.jobs,
        }


_TOP_KEYS = {"cohort", "n_test_per_group", "train", "al", "grid", "out", "jobs"}


def _section(raw: dict, key: str) -> dict:
    val = raw.get(key) or {}
    if not isinstance(val, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return dict(val)


def _build(cls, values: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from None


def config_from_dict(raw: dict | None, base_dir: Path | None = None) -> ExperimentConfig:
    raw = dict(raw or {})
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    base_dir = base_dir or Path.cwd()

    cohort_raw = _section(raw, "cohort")
    preset_name = cohort_raw.pop("preset", "strong")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; expected one of {sorted(PRESETS)}")
    cohort_dir = base_dir / cohort_raw.pop("dir", "cohort")
    known = {f.name for f in dataclasses.fields(CohortConfig)}
    if set(cohort_raw) - known:
        raise ConfigError(f"unknown keys in cohort: {sorted(set(cohort_raw) - known)}")
    try:
        cohort = preset(preset_name, **cohort_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid cohort: {exc}") from None

    train = _build(TrainConfig, _section(raw, "train"), "train")
    al = _build(ALSettings, _section(raw, "al"), "al")

    grid_raw = _section(raw, "grid")
    if "strategies" in grid_raw:
        try:
            grid_raw["strategies"] = tuple(StrategyKind.parse(s) for s in grid_raw["strategies"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    for key in ("compositions", "seeds"):
        if key in grid_raw:
            grid_raw[key] = tuple(grid_raw[key])
    grid = _build(ExperimentGrid, grid_raw, "grid")
    for comp in grid.compositions:
        parse_composition(comp, al.n_initial)

    n_test = raw.get("n_test_per_group", 15)
    if not isinstance(n_test, int) or n_test < 1:
        raise ConfigError("n_test_per_group must be a positive integer")
    if n_test >= cohort.n_per_group:
        raise ConfigError(f"n_test_per_group={n_test} leaves no training cases out of {cohort.n_per_group}")
    jobs = raw.get("jobs")
    if jobs is not None and (not isinstance(jobs, int) or jobs < 1):
        raise ConfigError("jobs must be a positive integer")

    return ExperimentConfig(
        preset_name=preset_name,
        cohort=cohort,
        cohort_dir=cohort_dir,
        n_test_per_group=n_test,
        train=train,
        al=al,
        grid=grid,
        out=base_dir / raw.get("out", "results"),
        jobs=jobs,
    )


def load_config(path: str | Path | None) -> ExperimentConfig:
    """Load a YAML config; ``None`` gives the all-defaults configuration."""
    if path is None:
        return config_from_dict({})
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a mapping at top level")
    cfg = config_from_dict(raw, path.resolve().parent)
    return dataclasses.replace(cfg, source=path)
