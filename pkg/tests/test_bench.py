import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from desenat.bench import (MetricsTable, bar_chart_svg, build_metrics_table, corruption_error,
                           emit_report, line_chart_svg, mean_ce, mean_oa, overall_accuracy,
                           pruning_experiment, read_metrics_table)
from desenat.core import Dataset, PointCloud, RngSpec, gen_synthetic_dataset
from desenat.corrupt import corrupt_dataset
from desenat.net import TrainConfig, init_model, predict, train_standard
from desenat.severity import CORRUPTION_KINDS
from published_results import KINDS, MEAN_OA, PRINTED_CE, PRINTED_MCE

levels = st.lists(st.floats(0.0, 0.99), min_size=5, max_size=5)


def constant_model(cls, c=2):
    m = init_model(c, (4, 4, 4), RngSpec(0))
    m.params["hw2"][:] = 0
    m.params["hb2"][:] = 0
    m.params["hb2"][cls] = 5.0
    return m


def balanced(c=2, n=5):
    pts = np.random.default_rng(0).random((4, 3))
    return Dataset(tuple(PointCloud(pts, i % c) for i in range(n * c)), c)


def test_oa_constant_predictor():
    assert overall_accuracy(constant_model(0), balanced()) == 0.5


def test_oa_matches_hand_count():
    ds = gen_synthetic_dataset(3, 4, 16, RngSpec(1))
    m = init_model(3, seed=RngSpec(5))
    preds = predict(m, ds.samples)
    hits = sum(int(p == s.label) for p, s in zip(preds, ds.samples))
    assert overall_accuracy(m, ds) == hits / 12


def test_oa_empty():
    with pytest.raises(ValueError):
        overall_accuracy(constant_model(0), Dataset((), 2))


def test_ce_self_reference():
    assert corruption_error([0.8, 0.7, 0.6, 0.5, 0.4], [0.8, 0.7, 0.6, 0.5, 0.4]) == 1.0


def test_ce_published_examples():
    assert corruption_error([0.8498] * 5, [0.8009] * 5) == pytest.approx(0.7544, abs=1e-4)
    assert corruption_error([0.7930] * 5, [0.8009] * 5) == pytest.approx(1.0397, abs=1e-4)


def test_ce_perfect_baseline():
    with pytest.raises(ZeroDivisionError):
        corruption_error([0.5] * 5, [1.0] * 5)


def test_ce_range_checked():
    with pytest.raises(ValueError):
        corruption_error([1.2] * 5, [0.5] * 5)


@settings(max_examples=50, deadline=None)
@given(oa=levels, base=levels, scale=st.floats(0.1, 1.0))
def test_ce_scale_consistent(oa, base, scale):
    e, eb = 1 - np.array(oa), 1 - np.array(base)
    ce = corruption_error(oa, base)
    scaled = corruption_error(1 - scale * e, 1 - scale * eb)
    assert scaled == pytest.approx(ce, rel=1e-9)


def test_mean_ce_and_oa():
    assert mean_ce([1.0, 1.0]) == 1.0
    assert mean_ce([0.5, 1.5]) == 1.0
    assert mean_oa([1, 0, 0, 0, 0]) == 0.2
    assert mean_oa([0.3] * 5) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        mean_ce([])


def test_published_desenat_row_mce():
    ce = [corruption_error([a / 100] * 5, [b / 100] * 5)
          for a, b in zip(MEAN_OA["desenat_sd"], MEAN_OA["st"])]
    assert mean_ce(ce) == pytest.approx(0.637, abs=0.001)


@pytest.mark.parametrize("method", sorted(PRINTED_CE))
def test_published_ce_cells(method):
    for k, a, b, printed in zip(KINDS, MEAN_OA[method], MEAN_OA["st"], PRINTED_CE[method]):
        assert corruption_error([a / 100] * 5, [b / 100] * 5) == pytest.approx(printed, abs=0.01), k
    assert mean_ce(PRINTED_CE[method]) == pytest.approx(PRINTED_MCE[method], abs=0.002)


def small_table(kinds=("a", "b"), sevs=(1, 2, 3, 4, 5)):
    rng = np.random.default_rng(0)
    oa = {(k, s): float(rng.uniform(0.2, 0.9)) for k in kinds for s in sevs}
    base = {(k, s): float(rng.uniform(0.2, 0.9)) for k in kinds for s in sevs}
    return MetricsTable(list(kinds), list(sevs), oa, base)


def test_table_decomposition():
    t = small_table()
    assert t.mce() == pytest.approx(np.mean([t.ce("a"), t.ce("b")]))
    self_ref = MetricsTable(t.kinds, t.severities, t.baseline_oa, t.baseline_oa)
    assert all(v == 1.0 for v in self_ref.ce_per_kind().values())


def test_table_validation():
    with pytest.raises(ValueError):
        MetricsTable([], [1], {}, {})
    with pytest.raises(ValueError):
        MetricsTable(["a"], [1], {("a", 1): 1.5}, {("a", 1): 0.5})


def test_table_nan_for_perfect_baseline():
    t = MetricsTable(["a", "b"], [1], {("a", 1): 0.5, ("b", 1): 0.5},
                     {("a", 1): 1.0, ("b", 1): 0.5})
    assert math.isnan(t.ce_per_kind()["a"]) and t.mce() == 1.0


def test_report_round_trip(tmp_path):
    t = small_table(CORRUPTION_KINDS)
    paths = emit_report(t, tmp_path)
    assert {p.name for p in paths} == {"oa.csv", "baseline_oa.csv", "ce.csv", "moa.csv",
                                       "summary.csv", "ce.svg", "oa.svg"}
    assert len((tmp_path / "oa.csv").read_text().splitlines()) == 56
    assert read_metrics_table(tmp_path).same_as(t)
    rows = (tmp_path / "summary.csv").read_text().splitlines()
    assert rows[0] == "mce,moa" and float(rows[1].split(",")[0]) == t.mce()
    assert (tmp_path / "ce.svg").read_text().startswith("<svg")


def test_svg_helpers_escape():
    assert "&lt;" in bar_chart_svg([("<x>", 0.5)], "t")
    assert "<polyline" in line_chart_svg([1, 2], {"m": [0.1, 0.2]}, "t")


def test_build_metrics_table_from_grid():
    ds = gen_synthetic_dataset(2, 5, 16, RngSpec(1))
    grid = {(k, s): corrupt_dataset(ds, k, s, RngSpec(2)) for k in ("rotate", "cutout")
            for s in (1, 2)}
    m = init_model(2, seed=RngSpec(3))
    t = build_metrics_table(m, m, grid, threads=3)
    assert t.kinds == ["rotate", "cutout"] and t.severities == [1, 2]
    assert t.oa == t.baseline_oa


def test_pruning_ratio_zero_and_validation():
    ds = gen_synthetic_dataset(2, 6, 16, RngSpec(1))
    m = train_standard(ds, TrainConfig(epochs=20, seed=RngSpec(1)))
    rows = pruning_experiment(m, ds, [0.0, 0.3], RngSpec(2), num_permutations=16)
    clean = overall_accuracy(m, ds)
    assert rows[0]["cp_accuracy"] == rows[0]["rp_accuracy"] == clean
    with pytest.raises(ValueError):
        pruning_experiment(m, ds, [1.0], RngSpec(2))
