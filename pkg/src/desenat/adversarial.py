"""Desensitizing adversarial samples: drop the most influential points, then shear and jitter.

The shear matrix multiplies points as row vectors (``points @ k``)::

    k = [[1, 0, b],
         [0, 1, d],
         [f, e, 1]]

Two filter modes are available. ``prose`` (default) keeps the ``floor(r * N)``
points with the lowest Shapley values, in their original order. ``pseudocode``
keeps the highest-valued points in descending order of value instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PointCloud, RngSpec
from .shapley import Attribution

FILTER_MODES = ("prose", "pseudocode")


@dataclass(frozen=True)
class AdvConfig:
    """Adversarial generation settings.

    ``c1 = 0`` disables the shear (k becomes the identity); otherwise
    ``c1 >= 0.05`` so the magnitude interval ``[c1 - 0.05, c1 + 0.05]`` is
    non-negative.
    """

    r_range: tuple[float, float] = (0.5, 1.0)
    c1: float = 0.25
    c2: float = 0.05
    seed: RngSpec = RngSpec(0)
    filter_mode: str = "prose"

    def __post_init__(self):
        lo, hi = self.r_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"r_range must satisfy 0 < lo <= hi <= 1, got {self.r_range}")
        if self.c1 != 0 and self.c1 < 0.05:
            raise ValueError(f"c1 must be 0 (no shear) or >= 0.05, got {self.c1}")
        if self.c2 < 0:
            raise ValueError(f"c2 must be >= 0, got {self.c2}")
        if self.filter_mode not in FILTER_MODES:
            raise ValueError(f"filter_mode must be one of {FILTER_MODES}")

    @property
    def is_identity(self) -> bool:
        return self.r_range == (1.0, 1.0) and self.c1 == 0 and self.c2 == 0

    def draw_r(self, stream: RngSpec) -> float:
        lo, hi = self.r_range
        if lo == hi:
            return float(lo)
        return float(stream.generator().uniform(lo, hi))


def keep_count(n: int, r: float) -> int:
    if not 0 < r <= 1:
        raise ValueError(f"ratio must be in (0, 1], got {r}")
    return int(math.floor(r * n))


def filter_indices(values: np.ndarray, r: float, mode: str = "prose") -> np.ndarray:
    n = len(values)
    m = keep_count(n, r)
    if m < 1:
        raise ValueError(f"ratio {r} keeps no points out of {n}")
    if mode == "prose":
        order = np.argsort(values, kind="stable")
        return np.sort(order[:m])
    if mode == "pseudocode":
        return np.argsort(values, kind="stable")[::-1][:m]
    raise ValueError(f"unknown filter mode {mode!r}")


def shapley_filter(pc: PointCloud, attr: Attribution, r: float, mode: str = "prose") -> PointCloud:
    """Remove the most sensitive points, keeping ``floor(r * N)`` of them."""
    if len(attr) != len(pc):
        raise ValueError(f"attribution has {len(attr)} values for {len(pc)} points")
    if r == 1.0 and mode == "prose":
        return pc
    return pc.with_points(pc.points[filter_indices(attr.values, r, mode)])


def sample_shear(config: AdvConfig, stream: RngSpec) -> np.ndarray:
    k = np.eye(3)
    if config.c1 == 0:
        return k
    rng = stream.generator()
    mag = rng.uniform(config.c1 - 0.05, config.c1 + 0.05, size=4)
    sign = rng.choice([-1.0, 1.0], size=4)
    b, d, e, f = np.abs(mag) * sign
    k[0, 2], k[1, 2], k[2, 0], k[2, 1] = b, d, f, e
    return k


def spatial_transform(pc: PointCloud, k: np.ndarray, c2: float, stream: RngSpec) -> PointCloud:
    out = pc.points.copy() if np.array_equal(k, np.eye(3)) else pc.points @ k
    if c2 > 0:
        out = out + stream.generator().uniform(-c2, c2, size=out.shape)
    return pc.with_points(out)


def generate_adversarial(pc: PointCloud, attr: Attribution, config: AdvConfig, batch_r: float,
                         stream: Optional[RngSpec] = None) -> PointCloud:
    """Filter by Shapley value, then apply a random shear plus uniform noise."""
    stream = config.seed if stream is None else stream
    kept = shapley_filter(pc, attr, batch_r, config.filter_mode)
    k = sample_shear(config, stream.derive("shear"))
    return spatial_transform(kept, k, config.c2, stream.derive("noise"))
