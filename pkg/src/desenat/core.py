"""Point-cloud data model, PCT v1 file I/O, normalization and seeded randomness."""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

PCT_MAGIC = "PCT"
PCT_VERSION = "v1"

SHAPE_NAMES = ("sphere", "cube", "cylinder", "cone", "torus", "plane", "pyramid", "helix")


class DataError(ValueError):
    """Raised for malformed or invalid input data."""


class PCTParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngSpec:
    """A keyed, counter-based random stream.

    Equal ``(seed, stream_id)`` pairs always produce the same values. Sub-streams
    are derived by hashing, never by consuming draws from a parent stream, so the
    order in which workers run cannot change any result.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= int(v) < 2**64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")

    def derive(self, *keys: object) -> "RngSpec":
        h = hashlib.blake2b(digest_size=8)
        h.update(repr((self.stream_id, keys)).encode())
        return RngSpec(self.seed, int.from_bytes(h.digest(), "little"))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.Philox(ss))


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order-preserving map; results are placed by index so thread count never matters."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def default_threads() -> int:
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"points must have shape (N, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise DataError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise DataError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.points, other.points)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.label)


@dataclass(frozen=True)
class Dataset:
    samples: tuple[PointCloud, ...]
    class_count: int
    name: str = "dataset"

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        for i, s in enumerate(self.samples):
            if s.label is None or not (0 <= s.label < self.class_count):
                raise DataError(f"sample {i} has label {s.label} outside [0, {self.class_count})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)


# ---------------------------------------------------------------------------
# PCT v1 files
# ---------------------------------------------------------------------------


def _format_float(x: float) -> str:
    # repr is the shortest string that reparses to the same double
    return repr(float(x))


def save_pointcloud(pc: PointCloud, path: str | os.PathLike) -> None:
    pts = np.asarray(pc.points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise DataError("refusing to write non-finite coordinates")
    cols = 3 if pc.label is None else 4
    lines = [f"{PCT_MAGIC} {PCT_VERSION} {pts.shape[0]} {cols}"]
    suffix = "" if pc.label is None else f" {pc.label}"
    for x, y, z in pts.tolist():
        lines.append(f"{_format_float(x)} {_format_float(y)} {_format_float(z)}{suffix}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def parse_pointcloud(text: str) -> PointCloud:
    header = None
    rows: list[list[float]] = []
    label = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            parts = line.split()
            if len(parts) != 4 or parts[0] != PCT_MAGIC or parts[1] != PCT_VERSION:
                raise PCTParseError(f"malformed header {line!r}", lineno)
            try:
                n, c = int(parts[2]), int(parts[3])
            except ValueError:
                raise PCTParseError(f"malformed header {line!r}", lineno) from None
            if n < 1 or c not in (3, 4):
                raise PCTParseError(f"malformed header {line!r}", lineno)
            header = (n, c)
            continue
        n, c = header
        parts = line.split()
        if len(parts) != c:
            raise PCTParseError(f"expected {c} columns, got {len(parts)}", lineno)
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            raise PCTParseError(f"non-numeric value in {line!r}", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise PCTParseError("non-finite value", lineno)
        if len(rows) >= n:
            raise PCTParseError(f"count mismatch: header declares {n} points", lineno)
        if c == 4:
            lab = vals[3]
            if lab != int(lab) or lab < 0:
                raise PCTParseError(f"label {parts[3]!r} is not a class index", lineno)
            if label is None:
                label = int(lab)
            elif label != int(lab):
                raise PCTParseError("inconsistent label column", lineno)
        rows.append(vals[:3])
    if header is None:
        raise PCTParseError("missing header", 1)
    if len(rows) != header[0]:
        raise PCTParseError(f"count mismatch: header declares {header[0]} points, found {len(rows)}",
                            lineno)
    return PointCloud(np.array(rows, dtype=np.float64), label)


def load_pointcloud(path: str | os.PathLike) -> PointCloud:
    with open(path, "r", newline="") as fh:
        return parse_pointcloud(fh.read())


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------


def save_dataset(dataset: Dataset, out_dir: str | os.PathLike, prefix: str = "sample") -> Path:
    """Write every sample as a PCT file plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(dataset))))
    entries = []
    for i, s in enumerate(dataset.samples):
        fname = f"{prefix}_{i:0{width}d}.pct"
        save_pointcloud(s, out / fname)
        entries.append({"path": fname, "label": s.label})
    manifest = {"name": dataset.name, "class_count": dataset.class_count, "entries": entries}
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=1) + "\n")
    return mpath


def load_dataset(manifest_path: str | os.PathLike) -> Dataset:
    mpath = Path(manifest_path)
    try:
        manifest = json.loads(mpath.read_text())
        entries = manifest["entries"]
        class_count = int(manifest["class_count"])
        name = str(manifest.get("name", mpath.parent.name))
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DataError(f"bad manifest {mpath}: {exc}") from exc
    samples = []
    for e in entries:
        pc = load_pointcloud(mpath.parent / e["path"])
        label = int(e["label"])
        if pc.label is not None and pc.label != label:
            raise DataError(f"{e['path']}: file label {pc.label} != manifest label {label}")
        samples.append(PointCloud(pc.points, label))
    return Dataset(tuple(samples), class_count, name)


# ---------------------------------------------------------------------------
# Normalization and synthetic data
# ---------------------------------------------------------------------------


def normalize_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = hi - lo
    out = np.empty_like(pts)
    for ax in range(3):
        if span[ax] > 0:
            out[:, ax] = (pts[:, ax] - lo[ax]) / span[ax]
        else:
            out[:, ax] = 0.5
    return out


def normalize_unit_cube(pc: PointCloud) -> PointCloud:
    """Per-axis affine map of the cloud onto [0, 1]^3; a flat axis goes to 0.5."""
    return pc.with_points(normalize_points(pc.points))


def _sample_shape(name: str, n: int, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(n)
    v = rng.random(n)
    two_pi = 2.0 * np.pi
    if name == "sphere":
        z = 2.0 * u - 1.0
        t = two_pi * v
        r = np.sqrt(1.0 - z * z)
        return np.stack([r * np.cos(t), r * np.sin(t), z], axis=1)
    if name == "cube":
        face = rng.integers(0, 6, n)
        a, b = 2.0 * u - 1.0, 2.0 * v - 1.0
        pts = np.empty((n, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, -1.0, 1.0)
        for k in range(3):
            m = axis == k
            others = [j for j in range(3) if j != k]
            pts[m, k] = sign[m]
            pts[m, others[0]] = a[m]
            pts[m, others[1]] = b[m]
        return pts
    if name == "cylinder":
        t = two_pi * u
        return np.stack([np.cos(t), np.sin(t), 2.0 * v - 1.0], axis=1)
    if name == "cone":
        # uniform on the lateral surface: radius grows with sqrt of the area fraction
        h = np.sqrt(v)
        t = two_pi * u
        return np.stack([h * np.cos(t), h * np.sin(t), 1.0 - 2.0 * h], axis=1)
    if name == "torus":
        t, p = two_pi * u, two_pi * v
        R, r = 1.0, 0.35
        return np.stack([(R + r * np.cos(p)) * np.cos(t), (R + r * np.cos(p)) * np.sin(t),
                         r * np.sin(p)], axis=1)
    if name == "plane":
        x, y = 2.0 * u - 1.0, 2.0 * v - 1.0
        return np.stack([x, y, 0.6 * x + 0.3 * y], axis=1)
    if name == "pyramid":
        base = rng.random(n) < 0.3
        x, y = 2.0 * u - 1.0, 2.0 * v - 1.0
        pts = np.stack([x, y, -np.ones(n)], axis=1)
        # lateral faces: shrink a base point toward the apex
        s = np.sqrt(rng.random(n))
        side = np.stack([s * x, s * y, 1.0 - 2.0 * s], axis=1)
        return np.where(base[:, None], pts, side)
    if name == "helix":
        t = 3.0 * two_pi * u
        return np.stack([np.cos(t), np.sin(t), 2.0 * u - 1.0], axis=1) + 0.08 * rng.standard_normal((n, 3))
    raise ValueError(f"unknown shape {name!r}")


def gen_synthetic_dataset(class_count: int, samples_per_class: int, points_per_sample: int,
                          seed: RngSpec, jitter: float = 0.02, name: str = "synthetic") -> Dataset:
    """Parametric-surface classification data, one shape per class, normalized to the unit cube."""
    if not 2 <= class_count <= len(SHAPE_NAMES):
        raise ValueError(f"class_count must be in [2, {len(SHAPE_NAMES)}], got {class_count}")
    if samples_per_class < 1 or points_per_sample < 1:
        raise ValueError("samples_per_class and points_per_sample must be positive")
    samples = []
    for label in range(class_count):
        for i in range(samples_per_class):
            rng = seed.derive("sample", label, i).generator()
            pts = _sample_shape(SHAPE_NAMES[label], points_per_sample, rng)
            pts = pts + jitter * rng.standard_normal(pts.shape)
            samples.append(PointCloud(normalize_points(pts), label))
    return Dataset(tuple(samples), class_count, name)

