"""Seed-averaged learning curves and a final-cycle summary from a results CSV.

The output is plain CSV so any plotting tool can draw the curves.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from .acquisition import StrategyKind
from .experiment import RESULT_COLUMNS

CURVE_METRICS = ("essp", "delta", "dsc_overall", "dsc_g1", "dsc_g2", "group1_ratio")
KEYS = ["bias_preset", "composition", "strategy"]
_NUMERIC = ("seed", "cycle", "n_labeled", "dsc_overall", "dsc_g1", "dsc_g2", "delta", "essp", "group1_ratio")


class NoData(ValueError):
    pass


class MalformedResults(ValueError):
    pass


def load_results(path: str | Path, eval_split: str = "test") -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise NoData(f"{path} is empty") from None
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise MalformedResults(f"{path}: {exc}") from None
    missing = [c for c in RESULT_COLUMNS if c not in df.columns]
    if missing:
        raise MalformedResults(f"{path} lacks columns {missing}")
    df = df[df["eval_split"] == eval_split]
    if df.empty:
        raise NoData(f"{path} has no '{eval_split}' rows")
    for col in _NUMERIC:
        try:
            df[col] = pd.to_numeric(df[col], errors="raise")
        except (ValueError, TypeError):
            raise MalformedResults(f"{path}: non-numeric value in column {col}") from None
    return df


def curves(df: pd.DataFrame) -> pd.DataFrame:
    """Mean and std over seeds of each metric, per cell and labeling budget."""
    g = df.groupby(KEYS + ["n_labeled"], sort=True)[list(CURVE_METRICS)]
    out = g.mean().add_suffix("_mean").join(g.std(ddof=1).fillna(0.0).add_suffix("_std"))
    out["n_seeds"] = df.groupby(KEYS + ["n_labeled"], sort=True)["seed"].nunique()
    return out.reset_index()


def final_cycle(df: pd.DataFrame) -> pd.DataFrame:
    last = df[df["cycle"] == df.groupby("run_id")["cycle"].transform("max")]
    g = last.groupby(KEYS, sort=True)
    out = g[list(CURVE_METRICS)].mean()
    out["n_labeled"] = g["n_labeled"].max()
    out["n_seeds"] = g["seed"].nunique()
    return out.reset_index()


def delta_reduction(delta_weighted: float, delta_reference: float) -> float:
    """Relative disparity reduction, ``1 - weighted / reference``."""
    if delta_reference <= 0:
        return float("nan")
    return 1.0 - delta_weighted / delta_reference


def reductions(summary: pd.DataFrame) -> pd.DataFrame:
    w = StrategyKind.WEIGHTED_LOCALIZED_ENTROPY.value
    me = StrategyKind.MEAN_ENTROPY.value
    rows = []
    for (preset, comp), sub in summary.groupby(["bias_preset", "composition"], sort=True):
        by = sub.set_index("strategy")["delta"]
        if w in by and me in by:
            rows.append({
                "bias_preset": preset, "composition": comp,
                "delta_weighted": by[w], "delta_mean_entropy": by[me],
                "delta_reduction": delta_reduction(by[w], by[me]),
            })
    return pd.DataFrame(rows, columns=["bias_preset", "composition", "delta_weighted",
                                       "delta_mean_entropy", "delta_reduction"])


@dataclass
class Report:
    curves: pd.DataFrame
    summary: pd.DataFrame
    reductions: pd.DataFrame

    def text(self) -> str:
        lines = []
        for (preset, comp), sub in self.summary.groupby(["bias_preset", "composition"], sort=True):
            lines.append(f"[{preset} {comp}] final cycle, n_labeled={int(sub['n_labeled'].max())}")
            lines.append(f"  {'strategy':28s} {'DSC':>6s} {'delta':>7s} {'ESSP':>6s} {'G1 ratio':>8s} seeds")
            for _, r in sub.iterrows():
                lines.append(
                    f"  {r['strategy']:28s} {r['dsc_overall']:6.3f} {r['delta']:7.4f} "
                    f"{r['essp']:6.3f} {r['group1_ratio']:8.3f} {int(r['n_seeds']):5d}"
                )
            red = self.reductions
            hit = red[(red["bias_preset"] == preset) & (red["composition"] == comp)]
            if not hit.empty:
                v = hit.iloc[0]["delta_reduction"]
                lines.append(f"  delta reduction, weighted vs mean entropy: {100 * v:.1f}%")
        return "\n".join(lines) + "\n"


def build_report(df: pd.DataFrame) -> Report:
    summary = final_cycle(df)
    return Report(curves(df), summary, reductions(summary))


def write_report(results_csv: str | Path, out_dir: str | Path) -> list[Path]:
    rep = build_report(load_results(results_csv))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for (preset, comp), sub in rep.curves.groupby(["bias_preset", "composition"], sort=True):
        path = out / f"curves_{preset}_{comp.replace('/', '_')}.csv"
        sub.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        written.append(path)
    for name, frame in (("summary_final_cycle.csv", rep.summary), ("delta_reduction.csv", rep.reductions)):
        frame.to_csv(out / name, index=False, float_format="%.10g", lineterminator="\n")
        written.append(out / name)
    (out / "summary.txt").write_text(rep.text())
    written.append(out / "summary.txt")
    return written
