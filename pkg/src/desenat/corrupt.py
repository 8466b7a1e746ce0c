"""Severity-graded point-cloud corruptions and on-disk corruption grids."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Dataset, PointCloud, RngSpec, load_dataset, parallel_map, save_dataset
from .severity import (CORRUPTION_KINDS, DENSITY_DEC_DROP, MIN_POINTS, PATCH_FRACTION,
                       SEVERITY_LEVELS, severity_param)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: RngSpec = RngSpec(0)

    def __post_init__(self):
        severity_param(self.kind, self.severity)  # validates both fields

    @property
    def param(self) -> float:
        return severity_param(self.kind, self.severity)


def rotation_matrix(angles: np.ndarray) -> np.ndarray:
    ax, ay, az = angles
    rx = np.array([[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]])
    ry = np.array([[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]])
    rz = np.array([[np.cos(az), -np.sin(az), 0], [np.sin(az), np.cos(az), 0], [0, 0, 1]])
    return rz @ ry @ rx


def _drop_budget(n: int, want: int) -> int:
    return max(0, min(want, n - MIN_POINTS))


def _keep(points: np.ndarray, drop: np.ndarray) -> np.ndarray:
    mask = np.ones(len(points), dtype=bool)
    mask[drop] = False
    return points[mask]


def _patches(points: np.ndarray, count: int, rng: np.random.Generator) -> list[np.ndarray]:
    n = len(points)
    k = max(1, int(round(PATCH_FRACTION * n)))
    out = []
    for _ in range(count):
        center = points[rng.integers(n)]
        d = np.linalg.norm(points - center, axis=1)
        out.append(np.argsort(d, kind="stable")[:k])
    return out


def apply_corruption(pc: PointCloud, spec: CorruptionSpec) -> PointCloud:
    """Return a corrupted copy of ``pc``; the input is never modified."""
    pts = np.array(pc.points, dtype=np.float64)
    n = len(pts)
    rng = spec.seed.generator()
    a = spec.param
    kind = spec.kind
    if kind == "rotate":
        angles = np.deg2rad(rng.uniform(-a, a, size=3))
        center = pts.mean(axis=0)
        out = (pts - center) @ rotation_matrix(angles).T + center
    elif kind == "shear":
        k = np.eye(3)
        off = ~np.eye(3, dtype=bool)
        k[off] = rng.uniform(-a, a, size=6)
        center = pts.mean(axis=0)
        out = (pts - center) @ k + center
    elif kind == "scale":
        factors = np.exp(rng.uniform(-np.log1p(a), np.log1p(a), size=3))
        center = pts.mean(axis=0)
        out = (pts - center) * factors + center
    elif kind == "jitter_uniform":
        out = pts + rng.uniform(-a, a, size=pts.shape)
    elif kind == "jitter_gaussian":
        out = pts + a * rng.standard_normal(pts.shape)
    elif kind == "impulse":
        m = max(1, int(round(a * n)))
        idx = rng.choice(n, size=min(m, n), replace=False)
        out = pts.copy()
        out[idx] = rng.random((len(idx), 3))
    elif kind == "upsample_background":
        m = max(1, int(round(a * n)))
        out = np.concatenate([pts, rng.random((m, 3))])
    elif kind == "dropout_global":
        m = _drop_budget(n, int(round(a * n)))
        out = _keep(pts, rng.choice(n, size=m, replace=False))
    elif kind == "dropout_local":
        drop: list[int] = []
        for patch in _patches(pts, int(a), rng):
            drop.extend(int(i) for i in patch if i not in drop)
        out = _keep(pts, np.array(drop[:_drop_budget(n, len(drop))], dtype=np.int64))
    elif kind == "density_dec":
        drop = []
        for patch in _patches(pts, int(a), rng):
            chosen = rng.choice(patch, size=int(len(patch) * DENSITY_DEC_DROP), replace=False)
            drop.extend(int(i) for i in chosen if i not in drop)
        out = _keep(pts, np.array(drop[:_drop_budget(n, len(drop))], dtype=np.int64))
    elif kind == "cutout":
        center = pts[rng.integers(n)]
        inside = np.flatnonzero(np.all(np.abs(pts - center) <= a / 2, axis=1))
        inside = inside[rng.permutation(len(inside))]
        out = _keep(pts, inside[:_drop_budget(n, len(inside))])
    else:
        raise ValueError(f"unknown corruption kind {kind!r}")
    return PointCloud(out, pc.label)


def corrupt_dataset(dataset: Dataset, kind: str, severity: int, seed: RngSpec,
                    threads: int = 1) -> Dataset:
    cell = seed.derive("corrupt", kind, severity)

    def one(i: int) -> PointCloud:
        return apply_corruption(dataset.samples[i], CorruptionSpec(kind, severity, cell.derive(i)))

    samples = parallel_map(one, range(len(dataset)), threads)
    return Dataset(tuple(samples), dataset.class_count, f"{dataset.name}-{kind}-{severity}")


def build_corruption_grid(dataset: Dataset, kinds: Sequence[str], seed: RngSpec, out_dir,
                          severities: Iterable[int] = SEVERITY_LEVELS,
                          threads: int = 1) -> Path:
    """Write one dataset per (kind, severity) under ``out_dir`` plus ``grid.json``."""
    if len(dataset) == 0:
        raise ValueError("cannot corrupt an empty dataset")
    kinds = list(kinds)
    if not kinds:
        raise ValueError("need at least one corruption kind")
    for k in kinds:
        if k not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {k!r}")
    out = Path(out_dir)
    cells = []
    for kind in kinds:
        for sev in severities:
            ds = corrupt_dataset(dataset, kind, sev, seed, threads)
            rel = Path(kind) / str(sev)
            save_dataset(ds, out / rel)
            cells.append({"kind": kind, "severity": int(sev), "manifest": str(rel / "manifest.json")})
    grid = {"source": dataset.name, "class_count": dataset.class_count, "kinds": kinds,
            "cells": cells}
    path = out / "grid.json"
    path.write_text(json.dumps(grid, indent=1) + "\n")
    return path


def load_corruption_grid(grid_path) -> dict[tuple[str, int], Dataset]:
    path = Path(grid_path)
    if path.is_dir():
        path = path / "grid.json"
    grid = json.loads(path.read_text())
    return {(c["kind"], int(c["severity"])): load_dataset(path.parent / c["manifest"])
            for c in grid["cells"]}
