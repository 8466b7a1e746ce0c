"""Robustness metrics (OA, CE, mCE, mOA), the pruning experiment and report files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .core import DataError, Dataset, RngSpec, parallel_map
from .net import Model, predict
from .shapley import attribute

OA_CSV = "oa.csv"
BASELINE_OA_CSV = "baseline_oa.csv"
CE_CSV = "ce.csv"
MOA_CSV = "moa.csv"
SUMMARY_CSV = "summary.csv"


def overall_accuracy(model: Model, dataset: Dataset) -> float:
    if len(dataset) == 0:
        raise ValueError("overall accuracy of an empty dataset is undefined")
    return float((predict(model, dataset.samples) == dataset.labels).mean())


def corruption_error(oa_levels: Sequence[float], baseline_levels: Sequence[float]) -> float:
    """Summed error over severity levels, relative to the baseline's summed error."""
    oa = np.asarray(oa_levels, dtype=np.float64)
    base = np.asarray(baseline_levels, dtype=np.float64)
    if oa.shape != base.shape or oa.ndim != 1:
        raise ValueError("model and baseline need the same number of severity levels")
    for arr in (oa, base):
        if np.any(arr < 0) or np.any(arr > 1):
            raise ValueError("accuracies must lie in [0, 1]")
    denom = float((1.0 - base).sum())
    if denom == 0.0:
        raise ZeroDivisionError("baseline makes no errors at any level; CE is undefined")
    return float((1.0 - oa).sum()) / denom


def mean_ce(ce_per_kind: Sequence[float]) -> float:
    if len(ce_per_kind) == 0:
        raise ValueError("need at least one corruption kind")
    return float(np.mean(ce_per_kind))


def mean_oa(oa_levels: Sequence[float]) -> float:
    return float(np.mean(oa_levels))


@dataclass
class MetricsTable:
    """OA per (kind, severity) for a model and for the CE reference model."""

    kinds: list
    severities: list
    oa: dict
    baseline_oa: dict

    def __post_init__(self):
        if not self.kinds:
            raise ValueError("metrics table needs at least one corruption kind")
        for grid in (self.oa, self.baseline_oa):
            for k in self.kinds:
                for s in self.severities:
                    v = grid[(k, s)]
                    if not 0.0 <= v <= 1.0:
                        raise ValueError(f"OA {v} for ({k}, {s}) outside [0, 1]")

    def levels(self, kind: str, baseline: bool = False) -> list[float]:
        grid = self.baseline_oa if baseline else self.oa
        return [grid[(kind, s)] for s in self.severities]

    def ce(self, kind: str) -> float:
        return corruption_error(self.levels(kind), self.levels(kind, baseline=True))

    def ce_per_kind(self) -> dict[str, float]:
        """CE for every kind; kinds where the baseline is perfect map to NaN."""
        out = {}
        for k in self.kinds:
            try:
                out[k] = self.ce(k)
            except ZeroDivisionError:
                out[k] = math.nan
        return out

    def mce(self) -> float:
        """Mean CE over the kinds where CE is defined."""
        vals = [v for v in self.ce_per_kind().values() if not math.isnan(v)]
        if not vals:
            raise ZeroDivisionError("CE is undefined for every kind")
        return mean_ce(vals)

    def moa(self, kind: str, baseline: bool = False) -> float:
        return mean_oa(self.levels(kind, baseline))

    def mean_moa(self, baseline: bool = False) -> float:
        return float(np.mean([self.moa(k, baseline) for k in self.kinds]))

    def same_as(self, other: "MetricsTable") -> bool:
        return (self.kinds == other.kinds and self.severities == other.severities
                and self.oa == other.oa and self.baseline_oa == other.baseline_oa)


def evaluate_grid(model: Model, grid: Mapping[tuple, Dataset], threads: int = 1) -> dict:
    keys = sorted(grid)
    accs = parallel_map(lambda key: overall_accuracy(model, grid[key]), keys, threads)
    return dict(zip(keys, accs))


def build_metrics_table(model: Model, baseline: Model, grid: Mapping[tuple, Dataset],
                        threads: int = 1) -> MetricsTable:
    kinds = list(dict.fromkeys(k for k, _ in grid))
    severities = sorted({s for _, s in grid})
    return MetricsTable(kinds, severities, evaluate_grid(model, grid, threads),
                        evaluate_grid(baseline, grid, threads))


# ---------------------------------------------------------------------------
# Pruning experiment
# ---------------------------------------------------------------------------


def pruning_experiment(model: Model, dataset: Dataset, ratios: Sequence[float], seed: RngSpec,
                       num_permutations: int = 64, threads: int = 1) -> list[dict]:
    """Accuracy after removing the most influential points vs. the same number at random."""
    for r in ratios:
        if not 0 <= r < 1:
            raise ValueError(f"pruning ratio must be in [0, 1), got {r}")
    attr_seed = seed.derive("attr")
    attrs = parallel_map(
        lambda i: attribute(model, dataset.samples[i], dataset.samples[i].label, num_permutations,
                            attr_seed.derive(i)).values,
        range(len(dataset)), threads)
    labels = dataset.labels
    rows = []
    for r in ratios:
        cp, rp = [], []
        for i, s in enumerate(dataset.samples):
            n = len(s)
            m = min(int(math.floor(r * n)), n - 1)
            order = np.argsort(-attrs[i], kind="stable")
            cp.append(np.delete(s.points, order[:m], axis=0))
            drop = seed.derive("random", r, i).generator().choice(n, size=m, replace=False)
            rp.append(np.delete(s.points, drop, axis=0))
        rows.append({"ratio": float(r),
                     "cp_accuracy": float((predict(model, cp) == labels).mean()),
                     "rp_accuracy": float((predict(model, rp) == labels).mean())})
    return rows


def write_pruning_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ratio", "cp_accuracy", "rp_accuracy"])
        for r in rows:
            w.writerow([repr(r["ratio"]), repr(r["cp_accuracy"]), repr(r["rp_accuracy"])])


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def _write_oa_csv(path: Path, kinds, severities, grid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "severity", "oa"])
        for k in kinds:
            for s in severities:
                w.writerow([k, s, repr(float(grid[(k, s)]))])


def _read_oa_csv(path: Path):
    kinds, sevs, grid = [], [], {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["kind", "severity", "oa"]:
            raise DataError(f"{path}: expected header kind,severity,oa")
        for row in reader:
            k, s = row["kind"], int(row["severity"])
            if k not in kinds:
                kinds.append(k)
            if s not in sevs:
                sevs.append(s)
            grid[(k, s)] = float(row["oa"])
    return kinds, sevs, grid


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def write_tables(table: MetricsTable, out_dir) -> list[Path]:
    """Write the OA grids (model and baseline); these fully determine the table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_oa_csv(out / OA_CSV, table.kinds, table.severities, table.oa)
    _write_oa_csv(out / BASELINE_OA_CSV, table.kinds, table.severities, table.baseline_oa)
    return [out / OA_CSV, out / BASELINE_OA_CSV]


def read_metrics_table(in_dir) -> MetricsTable:
    d = Path(in_dir)
    kinds, sevs, oa = _read_oa_csv(d / OA_CSV)
    bk, bs, base = _read_oa_csv(d / BASELINE_OA_CSV)
    if (bk, bs) != (kinds, sevs):
        raise DataError("model and baseline OA grids cover different cells")
    return MetricsTable(kinds, sevs, oa, base)


def emit_report(table: MetricsTable, out_dir) -> list[Path]:
    """Write oa/baseline_oa/ce/moa/summary CSVs and two SVG charts; returns the paths."""
    if not table.kinds:
        raise ValueError("cannot report on an empty kind list")
    out = Path(out_dir)
    paths = write_tables(table, out)
    ce = table.ce_per_kind()
    with open(out / CE_CSV, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "ce"])
        for k in table.kinds:
            w.writerow([k, _fmt(ce[k])])
    with open(out / MOA_CSV, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "moa", "baseline_moa"])
        for k in table.kinds:
            w.writerow([k, _fmt(table.moa(k)), _fmt(table.moa(k, baseline=True))])
    try:
        mce = table.mce()
    except ZeroDivisionError:
        mce = math.nan
    with open(out / SUMMARY_CSV, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mce", "moa"])
        w.writerow([_fmt(mce), _fmt(table.mean_moa())])
    (out / "ce.svg").write_text(bar_chart_svg(
        [(k, ce[k]) for k in table.kinds], "Corruption error per kind (baseline = 1)", ref=1.0))
    series = {
        "model": [float(np.mean([table.oa[(k, s)] for k in table.kinds])) for s in table.severities],
        "baseline": [float(np.mean([table.baseline_oa[(k, s)] for k in table.kinds]))
                     for s in table.severities],
    }
    (out / "oa.svg").write_text(line_chart_svg(table.severities, series,
                                               "Mean OA over kinds vs. severity"))
    return paths + [out / CE_CSV, out / MOA_CSV, out / SUMMARY_CSV, out / "ce.svg", out / "oa.svg"]


# ---------------------------------------------------------------------------
# SVG
# ---------------------------------------------------------------------------

_W, _H, _PAD = 640, 360, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def bar_chart_svg(bars: Sequence[tuple[str, float]], title: str, ref: Optional[float] = None) -> str:
    vals = [v for _, v in bars if not math.isnan(v)]
    top = max(vals + [ref or 0.0, 1e-9]) * 1.1
    plot_w, plot_h = _W - 2 * _PAD, _H - 2 * _PAD
    bw = plot_w / max(1, len(bars))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
             f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
             f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>']
    for i, (name, v) in enumerate(bars):
        x = _PAD + i * bw
        if not math.isnan(v):
            h = plot_h * v / top
            parts.append(f'<rect x="{x + 2:.1f}" y="{_H - _PAD - h:.1f}" width="{bw - 4:.1f}" '
                         f'height="{h:.1f}" fill="{_COLORS[0]}"/>')
        parts.append(f'<text x="{x + bw / 2:.1f}" y="{_H - _PAD + 12}" font-size="8" '
                     f'text-anchor="end" transform="rotate(-35 {x + bw / 2:.1f} {_H - _PAD + 12})">'
                     f'{escape(name)}</text>')
    if ref is not None:
        y = _H - _PAD - plot_h * ref / top
        parts.append(f'<line x1="{_PAD}" y1="{y:.1f}" x2="{_W - _PAD}" y2="{y:.1f}" '
                     f'stroke="gray" stroke-dasharray="4"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_chart_svg(xs: Sequence[float], series: Mapping[str, Sequence[float]], title: str) -> str:
    plot_w, plot_h = _W - 2 * _PAD, _H - 2 * _PAD
    x0, x1 = min(xs), max(xs)
    span = (x1 - x0) or 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}">',
             f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
             f'<rect x="{_PAD}" y="{_PAD}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>']
    for i, (name, ys) in enumerate(series.items()):
        pts = " ".join(f"{_PAD + plot_w * (x - x0) / span:.1f},{_H - _PAD - plot_h * y:.1f}"
                       for x, y in zip(xs, ys))
        color = _COLORS[i % len(_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{_W - _PAD + 4}" y="{_PAD + 14 * (i + 1)}" font-size="10" '
                     f'fill="{color}">{escape(name)}</text>')
    for x in xs:
        parts.append(f'<text x="{_PAD + plot_w * (x - x0) / span:.1f}" y="{_H - _PAD + 14}" '
                     f'font-size="10" text-anchor="middle">{x}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
