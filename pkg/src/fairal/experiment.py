"""Grid execution, results CSV, baseline table and run manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .acquisition import StrategyKind, write_score_dump
from .config import ExperimentConfig, parse_composition
from .loop import ALConfig, CycleRecord, derive_seed, evaluate, run_experiment
from .metrics import G1, G2, DEFAULT_GROUPS, FairnessReport, fairness_report
from .surrogate import Case, load_cohort, read_manifest, split_cohort, train, TrainConfig

log = logging.getLogger(__name__)

RESULTS_SCHEMA_VERSION = 1
RESULT_COLUMNS = (
    "run_id", "bias_preset", "composition", "strategy", "seed", "cycle", "n_labeled",
    "dsc_overall", "dsc_g1", "dsc_g2", "delta", "essp", "group1_ratio",
    "weights_g1", "weights_g2", "eval_split",
)
BASELINE_COLUMNS = (
    "bias_preset", "training_set", "n_train_g1", "n_train_g2",
    "dsc_overall", "dsc_g1", "dsc_g2", "delta", "essp",
)
RESULTS_NAME = "results.csv"
RUN_MANIFEST_NAME = "run_manifest.json"
BASELINE_NAME = "baseline.csv"

_BASELINE_STREAM = 4


class MissingCohort(FileNotFoundError):
    pass


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _num(x: float) -> str:
    # repr round-trips doubles exactly
    return repr(float(x))


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class Cell:
    bias_preset: str
    composition: str
    strategy: StrategyKind
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.bias_preset}-{self.composition.replace('/', '_')}-{self.strategy.value}-s{self.seed}"


@dataclass(frozen=True)
class CellResult:
    cell: Cell
    rows: tuple[dict, ...]
    dumps: tuple[str, ...] = ()
    error: str | None = None


def grid_cells(cfg: ExperimentConfig, bias_preset: str) -> list[Cell]:
    """Cells in output order: composition, then strategy, then seed."""
    return [
        Cell(bias_preset, comp, strat, seed)
        for comp in cfg.grid.compositions
        for strat in cfg.grid.strategies
        for seed in cfg.grid.seeds
    ]


def al_config(cfg: ExperimentConfig, cell: Cell) -> ALConfig:
    return ALConfig(
        strategy=cell.strategy,
        n_initial=cfg.al.n_initial,
        batch_size=cfg.al.batch_size,
        n_cycles=cfg.al.n_cycles,
        initial_group_counts=parse_composition(cell.composition, cfg.al.n_initial),
        dilation_radius=cfg.al.dilation_radius,
        threshold=cfg.al.threshold,
        seg_threshold=cfg.al.seg_threshold,
        train=cfg.train,
        run_seed=cell.seed,
    )


def _report_cols(rep: FairnessReport) -> dict:
    return {
        "dsc_overall": _num(rep.overall_dice),
        "dsc_g1": _num(rep.group_dice(G1)),
        "dsc_g2": _num(rep.group_dice(G2)),
        "delta": _num(rep.delta),
        "essp": _num(rep.essp),
    }


def record_rows(cell: Cell, rec: CycleRecord, include_labeled: bool = False) -> list[dict]:
    base = {
        "run_id": cell.run_id,
        "bias_preset": cell.bias_preset,
        "composition": cell.composition,
        "strategy": cell.strategy.value,
        "seed": str(cell.seed),
        "cycle": str(rec.cycle),
        "group1_ratio": _num(rec.group1_ratio),
        "weights_g1": _num(rec.weights.weight(G1)) if rec.weights else "",
        "weights_g2": _num(rec.weights.weight(G2)) if rec.weights else "",
    }
    rows = [{**base, "n_labeled": str(rec.n_labeled), **_report_cols(rec.test_report), "eval_split": "test"}]
    if include_labeled and rec.cycle > 0:
        # the labeled-set report belongs to the set the weights were computed on
        n_before = rec.n_labeled - len(rec.selected)
        rows.append({**base, "n_labeled": str(n_before), **_report_cols(rec.labeled_report), "eval_split": "labeled"})
    return rows


# worker-process state, filled once per process by _init_worker
_COHORT: dict = {}


def _init_worker(cohort_dir: str, n_test_per_group: int) -> None:
    cases, _ = load_cohort(cohort_dir)
    train_cases, test_cases = split_cohort(cases, n_test_per_group)
    _COHORT.update(train=train_cases, test=test_cases)


def run_cell(
    cfg: ExperimentConfig,
    cell: Cell,
    train_cases: Sequence[Case],
    test_cases: Sequence[Case],
    dump_dir: Path | None = None,
) -> CellResult:
    records = run_experiment(al_config(cfg, cell), train_cases, test_cases)
    rows = []
    for rec in records:
        rows.extend(record_rows(cell, rec, cfg.grid.include_labeled))
    dumps = []
    if dump_dir is not None:
        cell_dir = dump_dir / cell.run_id
        cell_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            if rec.scores:
                path = cell_dir / f"cycle_{rec.cycle:02d}.csv"
                write_score_dump(path, rec.scores)
                dumps.append(str(path))
    return CellResult(cell, tuple(rows), tuple(dumps))


def _run_cell_guarded(cfg, cell, dump_dir) -> CellResult:
    try:
        return run_cell(cfg, cell, _COHORT["train"], _COHORT["test"], dump_dir)
    except Exception as exc:  # a failed cell must not take the grid down
        log.exception("cell %s failed", cell.run_id)
        return CellResult(cell, (), (), f"{type(exc).__name__}: {exc}")


def resolve_jobs(requested: int | None) -> int:
    env = os.environ.get("FAIRAL_JOBS")
    if env:
        try:
            jobs = int(env)
        except ValueError:
            raise ValueError(f"FAIRAL_JOBS must be an integer, got {env!r}") from None
    else:
        jobs = requested if requested is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise ValueError(f"jobs must be positive, got {jobs}")
    return jobs


def execute_cells(
    cfg: ExperimentConfig, cells: Sequence[Cell], jobs: int, dump_dir: Path | None = None
) -> Iterable[CellResult]:
    """Yield results in cell order regardless of completion order."""
    if jobs == 1 or len(cells) == 1:
        _init_worker(str(cfg.cohort_dir), cfg.n_test_per_group)
        for cell in cells:
            yield _run_cell_guarded(cfg, cell, dump_dir)
        return
    with ProcessPoolExecutor(
        max_workers=min(jobs, len(cells)),
        initializer=_init_worker,
        initargs=(str(cfg.cohort_dir), cfg.n_test_per_group),
    ) as pool:
        futures = [pool.submit(_run_cell_guarded, cfg, cell, dump_dir) for cell in cells]
        for fut in futures:
            yield fut.result()


def cohort_info(cohort_dir: Path) -> dict:
    try:
        manifest = read_manifest(cohort_dir)
    except FileNotFoundError:
        raise MissingCohort(f"no cohort at {cohort_dir}; run 'fairal generate' first") from None
    return {
        "dir": str(cohort_dir),
        "preset": manifest.get("preset"),
        "seed": manifest.get("seed"),
        "manifest_sha256": sha256_file(Path(cohort_dir) / "manifest.json"),
        "n_cases": len(manifest.get("cases", [])),
    }


@dataclass
class RunSummary:
    results_path: Path
    manifest_path: Path
    n_rows: int
    failed: list[str]


def run_grid(
    cfg: ExperimentConfig,
    out_dir: Path | None = None,
    jobs: int | None = None,
    dump_scores: bool = False,
) -> RunSummary:
    out = Path(out_dir) if out_dir is not None else cfg.out
    cohort = cohort_info(cfg.cohort_dir)
    preset_name = cohort["preset"] or "custom"
    if cohort["preset"] and cohort["preset"] != cfg.preset_name:
        log.warning("cohort on disk is preset %r, config says %r; using the cohort", cohort["preset"], cfg.preset_name)
    cells = grid_cells(cfg, preset_name)
    n_jobs = resolve_jobs(jobs if jobs is not None else cfg.jobs)
    out.mkdir(parents=True, exist_ok=True)
    dump_dir = out / "scores" if dump_scores else None
    started = _now()
    log.info("running %d cells with %d worker(s)", len(cells), n_jobs)

    results_path = out / RESULTS_NAME
    failed, runs, dumps, n_rows = [], [], [], 0
    # the only writer of the results file
    with open(results_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for res in execute_cells(cfg, cells, n_jobs, dump_dir):
            runs.append({
                "run_id": res.cell.run_id,
                "composition": res.cell.composition,
                "strategy": res.cell.strategy.value,
                "seed": res.cell.seed,
                "status": "failed" if res.error else "ok",
                **({"error": res.error} if res.error else {}),
            })
            if res.error:
                failed.append(res.cell.run_id)
                continue
            writer.writerows(res.rows)
            fh.flush()
            n_rows += len(res.rows)
            dumps.extend(res.dumps)

    outputs = {RESULTS_NAME: sha256_file(results_path)}
    for d in dumps:
        outputs[str(Path(d).relative_to(out))] = sha256_file(d)
    manifest = {
        "tool": "fairal",
        "version": __version__,
        "results_schema": RESULTS_SCHEMA_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.resolved(),
        "jobs": n_jobs,
        "cohort": cohort,
        "cohort_seed": cohort["seed"],
        "runs": runs,
        "started_at": started,
        "finished_at": _now(),
        "outputs": outputs,
    }
    manifest_path = out / RUN_MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return RunSummary(results_path, manifest_path, n_rows, failed)


def verify_manifest(manifest_path: str | Path) -> list[str]:
    """Output files whose digest no longer matches the manifest."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    root = manifest_path.parent
    return [name for name, digest in manifest["outputs"].items()
            if not (root / name).exists() or sha256_file(root / name) != digest]


# --- baseline ---------------------------------------------------------------

def baseline_training_sets(train_cases: Sequence[Case], seed: int) -> dict[str, list[Case]]:
    """Pooled, G1-only and G2-only training sets.

    The pooled set draws half of each group so that it has the size of a
    single-group set.
    """
    g1 = [c for c in train_cases if c.group == G1]
    g2 = [c for c in train_cases if c.group == G2]
    rng = np.random.default_rng(seed)
    half = lambda cs: [cs[i] for i in sorted(rng.choice(len(cs), size=len(cs) // 2, replace=False))]
    return {"pooled": half(g1) + half(g2), "g1_only": g1, "g2_only": g2}


def baseline_reports(
    train_cases: Sequence[Case],
    test_cases: Sequence[Case],
    hyper: TrainConfig,
    seg_threshold: float,
    seed: int = 0,
) -> dict[str, tuple[list[Case], FairnessReport]]:
    out = {}
    sets = baseline_training_sets(train_cases, derive_seed(seed, _BASELINE_STREAM))
    for name, cases in sets.items():
        h = TrainConfig(hyper.learning_rate, hyper.epochs, hyper.l2, derive_seed(seed, hyper.seed, _BASELINE_STREAM))
        params = train(cases, h)
        out[name] = (cases, fairness_report(evaluate(params, test_cases, seg_threshold), DEFAULT_GROUPS))
    return out


def run_baseline(cfg: ExperimentConfig, out_dir: Path | None = None) -> Path:
    out = Path(out_dir) if out_dir is not None else cfg.out
    info = cohort_info(cfg.cohort_dir)
    cases, _ = load_cohort(cfg.cohort_dir)
    train_cases, test_cases = split_cohort(cases, cfg.n_test_per_group)
    reports = baseline_reports(train_cases, test_cases, cfg.train, cfg.al.seg_threshold, info["seed"] or 0)
    out.mkdir(parents=True, exist_ok=True)
    path = out / BASELINE_NAME
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BASELINE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for name, (used, rep) in reports.items():
            writer.writerow({
                "bias_preset": info["preset"] or "custom",
                "training_set": name,
                "n_train_g1": sum(c.group == G1 for c in used),
                "n_train_g2": sum(c.group == G2 for c in used),
                **_report_cols(rep),
            })
    return path
