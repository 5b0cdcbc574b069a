"""Command line front end.

    fairal generate --config exp.yaml
    fairal baseline --config exp.yaml
    fairal run      --config exp.yaml [--seeds 0-4] [--jobs N] [--dump-scores]
    fairal report   results/results.csv [--out results/report]

Exit codes: 0 ok, 1 config error, 2 data error, 3 some grid cells failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .experiment import MissingCohort, run_baseline, run_grid
from .report import MalformedResults, NoData, write_report
from .surrogate import generate_cohort, save_cohort
from .volume import VolumeFormatError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("fairal")


def parse_seeds(text: str) -> tuple[int, ...]:
    """``"0,3,5-7"`` -> ``(0, 3, 5, 6, 7)``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part:
                lo, hi = (int(x) for x in part.split("-", 1))
                if hi < lo:
                    raise ValueError
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return tuple(dict.fromkeys(seeds))


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    seeds = getattr(args, "seeds", None)
    if seeds:
        cfg = dataclasses.replace(cfg, grid=dataclasses.replace(cfg.grid, seeds=parse_seeds(seeds)))
    return cfg


def cmd_generate(args) -> int:
    cfg = _load(args)
    out = Path(args.out) if args.out else cfg.cohort_dir
    path = save_cohort(generate_cohort(cfg.cohort), cfg.cohort, out, cfg.preset_name)
    print(f"wrote {2 * cfg.cohort.n_per_group} cases and {path}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load(args)
    path = run_baseline(cfg, Path(args.out) if args.out else None)
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args)
    summary = run_grid(cfg, Path(args.out) if args.out else None, args.jobs, args.dump_scores)
    print(f"wrote {summary.n_rows} rows to {summary.results_path}")
    if summary.failed:
        log.error("%d cell(s) failed: %s", len(summary.failed), ", ".join(summary.failed))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_report(args) -> int:
    results = Path(args.results)
    out = Path(args.out) if args.out else results.parent / "report"
    written = write_report(results, out)
    print((out / "summary.txt").read_text(), end="")
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairal", description="Fairness-aware active learning experiments on synthetic volumes.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML experiment config (defaults apply when omitted)")
        sp.add_argument("--out", help="output directory (overrides the config)")
        return sp

    with_config(sub.add_parser("generate", help="write a synthetic cohort")).set_defaults(func=cmd_generate)
    with_config(sub.add_parser("baseline", help="pooled / G1-only / G2-only baseline table")).set_defaults(func=cmd_baseline)
    run = with_config(sub.add_parser("run", help="run the active-learning grid"))
    run.add_argument("--seeds", help="seed list such as 0-4 or 1,5,9")
    run.add_argument("--jobs", type=int, help="worker processes (FAIRAL_JOBS takes precedence)")
    run.add_argument("--dump-scores", action="store_true", help="write per-cycle acquisition scores")
    run.set_defaults(func=cmd_run)
    rep = sub.add_parser("report", help="curves and final-cycle summary from a results CSV")
    rep.add_argument("results")
    rep.add_argument("--out")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (MissingCohort, NoData, MalformedResults, VolumeFormatError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except ValueError as exc:
        # e.g. a bad FAIRAL_JOBS value or an infeasible schedule
        log.error("config error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
