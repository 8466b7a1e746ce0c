"""Shapley attribution of individual points and the distribution summaries built on it.

The value of a coalition S of points is the classifier's probability for the
target class when only S is fed through the network; the empty coalition is
worth 1/c. Coalitions are weighted with the standard Shapley weight
``|S|! (N - |S| - 1)! / N!`` over subsets S that exclude the player.
"""

from __future__ import annotations

import csv
import itertools
import math
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DataError, Dataset, PointCloud, RngSpec, parallel_map
from .net import Model, head_probs, point_features

EXACT_MAX_POINTS = 20
MC_BLOCK = 64
_LOW_BITS = 12


@dataclass(frozen=True, eq=False)
class Attribution:
    values: np.ndarray
    class_idx: int
    estimator: str = "exact"
    num_permutations: Optional[int] = None
    seed: Optional[RngSpec] = None

    def __len__(self) -> int:
        return len(self.values)

    @property
    def estimator_tag(self) -> str:
        if self.estimator == "exact":
            return "exact"
        if self.estimator == "exhaustive":
            return "exhaustive"
        s = self.seed or RngSpec(0)
        return f"mc:{self.num_permutations}:{s.seed}:{s.stream_id}"


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_count: int
    counts: np.ndarray
    lo: float
    hi: float

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.bin_count + 1)


@dataclass(frozen=True, eq=False)
class DatasetDistribution:
    sorted_means: np.ndarray


# ---------------------------------------------------------------------------
# Generic games
# ---------------------------------------------------------------------------


def _popcounts(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    pc = np.zeros(1 << n, dtype=np.int64)
    for i in range(n):
        pc += (masks >> i) & 1
    return pc


def shapley_from_table(values: np.ndarray, n: int) -> np.ndarray:
    """Exact Shapley values from a table of coalition values indexed by bitmask."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (1 << n,):
        raise ValueError(f"value table must have 2**{n} entries")
    fact = [math.factorial(k) for k in range(n + 1)]
    weight = np.array([fact[s] * fact[n - s - 1] / fact[n] for s in range(n)] + [0.0])
    masks = np.arange(1 << n, dtype=np.int64)
    sizes = _popcounts(n)
    phi = np.empty(n)
    for i in range(n):
        without = masks[((masks >> i) & 1) == 0]
        marg = values[without | (1 << i)] - values[without]
        phi[i] = np.dot(weight[sizes[without]], marg)
    return phi


def exact_shapley_game(value_fn: Callable[[tuple[int, ...]], float], n: int) -> np.ndarray:
    """Exact Shapley values of an arbitrary game given as a function of player tuples."""
    table = np.array([value_fn(tuple(i for i in range(n) if (m >> i) & 1)) for m in range(1 << n)])
    return shapley_from_table(table, n)


def permutation_shapley_game(value_fn: Callable[[tuple[int, ...]], float], n: int,
                             perms: Sequence[Sequence[int]]) -> np.ndarray:
    """Average marginal contributions of an arbitrary game over the given orderings."""
    phi = np.zeros(n)
    empty = value_fn(())
    for perm in perms:
        prev = empty
        for k in range(n):
            cur = value_fn(tuple(perm[:k + 1]))
            phi[perm[k]] += cur - prev
            prev = cur
    return phi / len(perms)


# ---------------------------------------------------------------------------
# Network value function
# ---------------------------------------------------------------------------


def _check_class(model: Model, class_idx: int) -> None:
    if not 0 <= class_idx < model.class_count:
        raise IndexError(f"class {class_idx} out of range for {model.class_count} classes")


def coalition_values(model: Model, pc: PointCloud, class_idx: int) -> np.ndarray:
    """Target-class score of every subset of the cloud, indexed by bitmask."""
    n = len(pc)
    feats = point_features(model, pc.points)
    h = feats.shape[1]
    low = min(n, _LOW_BITS)
    high = n - low

    def pooled_table(rows: np.ndarray, k: int) -> np.ndarray:
        table = np.full((1 << k, h), -np.inf)
        for m in range(1, 1 << k):
            lowbit = (m & -m).bit_length() - 1
            table[m] = np.maximum(table[m & (m - 1)], rows[lowbit])
        return table

    low_tab = pooled_table(feats[:low], low)
    high_tab = pooled_table(feats[low:], high)
    out = np.empty(1 << n)
    for hm in range(1 << high):
        block = np.maximum(low_tab, high_tab[hm])
        if hm == 0:
            block[0] = 0.0  # placeholder, overwritten below
        probs = head_probs(model, block)[:, class_idx]
        out[hm << low:(hm + 1) << low] = probs
    out[0] = 1.0 / model.class_count
    return out


def exact_shapley(model: Model, pc: PointCloud, class_idx: int) -> Attribution:
    """Exact per-point Shapley values by enumerating all 2**N coalitions."""
    _check_class(model, class_idx)
    n = len(pc)
    if n > EXACT_MAX_POINTS:
        raise ValueError(f"exact Shapley needs N <= {EXACT_MAX_POINTS} (got {n}); "
                         "use mc_shapley for larger clouds")
    phi = shapley_from_table(coalition_values(model, pc, class_idx), n)
    return Attribution(phi, class_idx, "exact")


def _marginals(model: Model, feats: np.ndarray, perms: np.ndarray, class_idx: int) -> np.ndarray:
    """Sum over ``perms`` of each point's marginal contribution as it joins the prefix."""
    pooled = np.maximum.accumulate(feats[perms], axis=1)
    scores = head_probs(model, pooled)[..., class_idx]
    prev = np.empty_like(scores)
    prev[:, 0] = 1.0 / model.class_count
    prev[:, 1:] = scores[:, :-1]
    out = np.zeros(perms.shape)
    np.put_along_axis(out, perms, scores - prev, axis=1)
    return out.sum(axis=0)


def mc_shapley(model: Model, pc: PointCloud, class_idx: int, num_permutations: int,
               seed: RngSpec, exhaustive: bool = False, threads: int = 1) -> Attribution:
    """Permutation-sampling Shapley estimate.

    Ordering ``j`` is drawn from its own stream ``seed.derive("perm", j)`` and
    orderings are reduced in fixed blocks, so the result does not depend on
    ``threads``. With ``exhaustive=True`` every one of the N! orderings is used
    and the result equals the exact value.
    """
    _check_class(model, class_idx)
    n = len(pc)
    feats = point_features(model, pc.points)
    if exhaustive:
        perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
        phi = _marginals(model, feats, perms, class_idx) / len(perms)
        return Attribution(phi, class_idx, "exhaustive", len(perms))
    if num_permutations < 1:
        raise ValueError("num_permutations must be >= 1")

    def block(start: int) -> np.ndarray:
        stop = min(start + MC_BLOCK, num_permutations)
        perms = np.stack([seed.derive("perm", j).generator().permutation(n)
                          for j in range(start, stop)])
        return _marginals(model, feats, perms, class_idx)

    partial = parallel_map(block, range(0, num_permutations, MC_BLOCK), threads)
    phi = np.zeros(n)
    for part in partial:
        phi += part
    return Attribution(phi / num_permutations, class_idx, "mc", num_permutations, seed)


def attribute(model: Model, pc: PointCloud, class_idx: int, num_permutations: int = 0,
              seed: RngSpec = RngSpec(0), threads: int = 1) -> Attribution:
    """Exact attribution when ``num_permutations`` is 0, sampled otherwise."""
    if num_permutations <= 0:
        return exact_shapley(model, pc, class_idx)
    return mc_shapley(model, pc, class_idx, num_permutations, seed, threads=threads)


def attribute_dataset(model: Model, dataset: Dataset, num_permutations: int, seed: RngSpec,
                      threads: int = 1, class_idx: Optional[int] = None) -> list[Attribution]:
    """Attributions for every sample, targeting its label unless ``class_idx`` is given."""

    def one(i: int) -> Attribution:
        s = dataset.samples[i]
        cls = s.label if class_idx is None else class_idx
        return attribute(model, s, cls, num_permutations, seed.derive("sample", i))

    return parallel_map(one, range(len(dataset)), threads)


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


def histogram(attr, b: int, value_range: Optional[tuple[float, float]] = None) -> Histogram:
    """Equal-width histogram of Shapley values.

    Bins span ``[min, max]`` of the values unless ``value_range`` is given. A value
    on a bin edge goes to the upper bin; the top value lands in the last bin.
    """
    if b < 1:
        raise ValueError("bin count must be >= 1")
    vals = np.asarray(attr.values if isinstance(attr, Attribution) else attr, dtype=np.float64)
    if value_range is None:
        lo, hi = float(vals.min()), float(vals.max())
    else:
        lo, hi = map(float, value_range)
        if hi < lo or vals.min() < lo or vals.max() > hi:
            raise ValueError(f"values fall outside the histogram range [{lo}, {hi}]")
    if hi > lo:
        idx = np.floor((vals - lo) * b / (hi - lo)).astype(np.int64)
        idx = np.clip(idx, 0, b - 1)
    else:
        idx = np.full(vals.shape, b - 1)
    counts = np.bincount(idx, minlength=b)
    return Histogram(b, counts, lo, hi)


def dataset_distribution(attrs: Sequence) -> DatasetDistribution:
    """Rank-wise mean of per-sample Shapley values sorted in descending order."""
    arrays = [np.asarray(a.values if isinstance(a, Attribution) else a, dtype=np.float64)
              for a in attrs]
    if not arrays:
        raise ValueError("need at least one attribution")
    if len({len(a) for a in arrays}) != 1:
        raise ValueError("all attributions must have the same length")
    stacked = -np.sort(-np.stack(arrays), axis=1)
    return DatasetDistribution(stacked.mean(axis=0))


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def save_attribution(attr: Attribution, path: str | os.PathLike) -> None:
    lines = [f"SHAP v1 {len(attr)} {attr.class_idx} {attr.estimator_tag}"]
    lines += [repr(float(v)) for v in attr.values]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_attribution(path: str | os.PathLike) -> Attribution:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty attribution file")
    head = lines[0].split()
    if len(head) != 5 or head[:2] != ["SHAP", "v1"]:
        raise DataError(f"{path}: line 1: malformed header {lines[0]!r}")
    n, cls, tag = int(head[2]), int(head[3]), head[4]
    vals = np.array([float(v) for v in lines[1:]])
    if len(vals) != n:
        raise DataError(f"{path}: count mismatch: header declares {n}, found {len(vals)}")
    if tag.startswith("mc:"):
        _, p, s, st = tag.split(":")
        return Attribution(vals, cls, "mc", int(p), RngSpec(int(s), int(st)))
    return Attribution(vals, cls, tag)


def write_histogram_csv(hist: Histogram, path: str | os.PathLike) -> None:
    edges = hist.edges
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for k in range(hist.bin_count):
            w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), int(hist.counts[k])])


def write_distribution_csv(dist: DatasetDistribution, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "mean_phi"])
        for r, v in enumerate(dist.sorted_means):
            w.writerow([r, repr(float(v))])
