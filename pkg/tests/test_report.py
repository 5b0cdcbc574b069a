import csv

import pytest

from fairal.experiment import RESULT_COLUMNS
from fairal.report import (
    MalformedResults,
    NoData,
    build_report,
    delta_reduction,
    load_results,
    write_report,
)


def write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        w.writerows(rows)


def row(strategy, seed, cycle, **metrics):
    base = dict(
        run_id=f"strong-50_50-{strategy}-s{seed}", bias_preset="strong", composition="50/50",
        strategy=strategy, seed=seed, cycle=cycle, n_labeled=10 + 4 * cycle,
        dsc_overall=0.8, dsc_g1=0.75, dsc_g2=0.85, delta=0.1, essp=0.8 / 1.1,
        group1_ratio=0.5, weights_g1="", weights_g2="", eval_split="test",
    )
    base.update(metrics)
    return base


def test_constant_metrics_give_flat_curves(tmp_path):
    write_rows(tmp_path / "r.csv", [row("random", s, c) for s in range(3) for c in range(6)])
    rep = build_report(load_results(tmp_path / "r.csv"))
    assert len(rep.curves) == 6
    assert list(rep.curves["essp_mean"]) == pytest.approx([0.8 / 1.1] * 6)
    assert list(rep.curves["delta_mean"]) == pytest.approx([0.1] * 6)
    assert list(rep.curves["n_labeled"]) == [10, 14, 18, 22, 26, 30]
    assert (rep.curves["n_seeds"] == 3).all()
    assert (rep.curves["essp_std"] == 0).all()


def test_reduction_ratio():
    assert delta_reduction(0.0176, 0.0692) == pytest.approx(0.746, abs=5e-4)


def test_final_cycle_summary_and_files(tmp_path):
    rows = [row("weighted_localized_entropy", s, c, delta=0.0176) for s in range(2) for c in range(3)]
    rows += [row("mean_entropy", s, c, delta=0.0692) for s in range(2) for c in range(3)]
    rows += [row("mean_entropy", 0, 1, eval_split="labeled", delta=9.0)]
    write_rows(tmp_path / "r.csv", rows)
    written = write_report(tmp_path / "r.csv", tmp_path / "out")
    names = {p.name for p in written}
    assert {"curves_strong_50_50.csv", "summary_final_cycle.csv", "delta_reduction.csv", "summary.txt"} <= names
    text = (tmp_path / "out" / "summary.txt").read_text()
    assert "74.6%" in text
    red = list(csv.DictReader(open(tmp_path / "out" / "delta_reduction.csv")))
    assert float(red[0]["delta_reduction"]) == pytest.approx(1 - 0.0176 / 0.0692)


def test_report_is_pure(tmp_path):
    write_rows(tmp_path / "r.csv", [row("random", s, c, essp=0.1 * s + 0.01 * c) for s in range(3) for c in range(3)])
    write_report(tmp_path / "r.csv", tmp_path / "a")
    write_report(tmp_path / "r.csv", tmp_path / "b")
    for name in ("curves_strong_50_50.csv", "summary_final_cycle.csv", "summary.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_empty_and_malformed(tmp_path):
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(NoData):
        load_results(tmp_path / "empty.csv")
    write_rows(tmp_path / "header.csv", [])
    with pytest.raises(NoData):
        load_results(tmp_path / "header.csv")
    (tmp_path / "cols.csv").write_text("a,b\n1,2\n")
    with pytest.raises(MalformedResults):
        load_results(tmp_path / "cols.csv")
    write_rows(tmp_path / "num.csv", [row("random", 0, 0, essp="high")])
    with pytest.raises(MalformedResults):
        load_results(tmp_path / "num.csv")
