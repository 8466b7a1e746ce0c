"""A small permutation-invariant point-cloud classifier with hand-written backprop.

Architecture: shared per-point MLP (3 -> h1 -> h2, tanh), max-pool over points,
then a head (h2 -> h3 -> c, tanh hidden layer). Everything is float64.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Dataset, PointCloud, RngSpec

log = logging.getLogger(__name__)

PARAM_NAMES = ("pw1", "pb1", "pw2", "pb2", "hw1", "hb1", "hw2", "hb2")
CHECKPOINT_MAGIC = b"DESENAT-CKPT v1\n"


class TrainingDiverged(ArithmeticError):
    pass


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Model:
    params: dict
    class_count: int

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.params["pw1"].shape[1], self.params["pw2"].shape[1], self.params["hw1"].shape[1])

    def copy(self) -> "Model":
        return Model({k: v.copy() for k, v in self.params.items()}, self.class_count)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_NAMES])

    def equals(self, other: "Model") -> bool:
        return self.class_count == other.class_count and all(
            np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    seed: RngSpec = RngSpec(0)
    hidden: tuple[int, int, int] = (32, 64, 32)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs must be >= 0, batch_size >= 1 and learning_rate > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")


def init_model(class_count: int, hidden: Sequence[int] = (32, 64, 32),
               seed: RngSpec = RngSpec(0)) -> Model:
    h1, h2, h3 = hidden
    rng = seed.derive("init").generator()
    shapes = {"pw1": (3, h1), "pw2": (h1, h2), "hw1": (h2, h3), "hw2": (h3, class_count)}
    params = {}
    for w, b in (("pw1", "pb1"), ("pw2", "pb2"), ("hw1", "hb1"), ("hw2", "hb2")):
        fan_in, fan_out = shapes[w]
        params[w] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        params[b] = np.zeros(fan_out)
    return Model(params, class_count)


# ---------------------------------------------------------------------------
# Forward pieces
# ---------------------------------------------------------------------------


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def point_features(model: Model, points: np.ndarray) -> np.ndarray:
    """Per-point features, shape (..., N, h2)."""
    p = model.params
    h1 = np.tanh(points @ p["pw1"] + p["pb1"])
    return np.tanh(h1 @ p["pw2"] + p["pb2"])


def head_logits(model: Model, pooled: np.ndarray) -> np.ndarray:
    p = model.params
    return np.tanh(pooled @ p["hw1"] + p["hb1"]) @ p["hw2"] + p["hb2"]


def head_probs(model: Model, pooled: np.ndarray) -> np.ndarray:
    return softmax(head_logits(model, pooled))


def _as_points(pc) -> np.ndarray:
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[-1] != 3:
        raise ValueError(f"expected (N, 3) points, got {pts.shape}")
    if pts.shape[0] == 0:
        raise EmptyInputError("cannot run the network on an empty point set")
    return pts


def forward(model: Model, pc) -> np.ndarray:
    """Class-probability vector for one cloud."""
    feats = point_features(model, _as_points(pc))
    return head_probs(model, feats.max(axis=0))


def target_score(model: Model, subset, class_idx: int) -> float:
    """Target-class probability of a point subset; the empty subset scores 1/c."""
    if not 0 <= class_idx < model.class_count:
        raise IndexError(f"class {class_idx} out of range for {model.class_count} classes")
    pts = subset.points if isinstance(subset, PointCloud) else np.asarray(subset, dtype=np.float64)
    if pts.size == 0:
        return 1.0 / model.class_count
    return float(forward(model, pts)[class_idx])


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Cache:
    x: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    arg: np.ndarray
    g: np.ndarray
    a: np.ndarray
    logits: np.ndarray


def forward_batch(model: Model, x: np.ndarray) -> tuple[np.ndarray, Cache]:
    """Logits for a stack of equal-size clouds ``x`` of shape (B, N, 3)."""
    p = model.params
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] == 0:
        raise EmptyInputError("cannot run the network on an empty point set")
    h1 = np.tanh(x @ p["pw1"] + p["pb1"])
    h2 = np.tanh(h1 @ p["pw2"] + p["pb2"])
    arg = h2.argmax(axis=1)  # (B, h2): the single point routed per channel
    g = np.take_along_axis(h2, arg[:, None, :], axis=1)[:, 0, :]
    a = np.tanh(g @ p["hw1"] + p["hb1"])
    z = a @ p["hw2"] + p["hb2"]
    return z, Cache(x, h1, h2, arg, g, a, z)


def backward_batch(model: Model, cache: Cache, dz: np.ndarray,
                   want_input: bool = False) -> tuple[dict, Optional[np.ndarray]]:
    """Parameter gradients (summed over the batch) given dL/dlogits of shape (B, c)."""
    p = model.params
    grads = {"hw2": cache.a.T @ dz, "hb2": dz.sum(axis=0)}
    dpa = (dz @ p["hw2"].T) * (1.0 - cache.a ** 2)
    grads["hw1"] = cache.g.T @ dpa
    grads["hb1"] = dpa.sum(axis=0)
    dg = dpa @ p["hw1"].T
    B, N, H2 = cache.h2.shape
    dh2 = np.zeros_like(cache.h2)
    bi = np.repeat(np.arange(B), H2)
    ci = np.tile(np.arange(H2), B)
    dh2[bi, cache.arg.ravel(), ci] = dg.ravel()
    dp2 = dh2 * (1.0 - cache.h2 ** 2)
    grads["pw2"] = np.einsum("bni,bnj->ij", cache.h1, dp2)
    grads["pb2"] = dp2.sum(axis=(0, 1))
    dp1 = (dp2 @ p["pw2"].T) * (1.0 - cache.h1 ** 2)
    grads["pw1"] = np.einsum("bni,bnj->ij", cache.x, dp1)
    grads["pb1"] = dp1.sum(axis=(0, 1))
    dx = dp1 @ p["pw1"].T if want_input else None
    return grads, dx


def cross_entropy_grad(z: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample CE losses and dL/dz for logits (B, c)."""
    ls = log_softmax(z)
    rows = np.arange(z.shape[0])
    loss = -ls[rows, labels]
    dz = np.exp(ls)
    dz[rows, labels] -= 1.0
    return loss, dz


def backward(model: Model, pc, target: int) -> dict:
    """Gradient of the cross-entropy loss of one sample w.r.t. every parameter."""
    z, cache = forward_batch(model, _as_points(pc)[None])
    _, dz = cross_entropy_grad(z, np.array([target]))
    grads, _ = backward_batch(model, cache, dz)
    return grads


def ce_loss(model: Model, pc, target: int) -> float:
    z, _ = forward_batch(model, _as_points(pc)[None])
    return float(-log_softmax(z)[0, target])


def group_by_size(clouds: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Index groups of equal-size clouds, in order of first appearance."""
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(clouds):
        groups.setdefault(c.shape[0], []).append(i)
    return [np.array(v) for v in groups.values()]


def logits_many(model: Model, clouds: Sequence[np.ndarray], chunk: int = 256) -> np.ndarray:
    """Logits for clouds of possibly different sizes, returned in input order."""
    out = np.empty((len(clouds), model.class_count))
    for idx in group_by_size(clouds):
        for s in range(0, len(idx), chunk):
            part = idx[s:s + chunk]
            z, _ = forward_batch(model, np.stack([clouds[i] for i in part]))
            out[part] = z
    return out


def predict(model: Model, clouds: Sequence) -> np.ndarray:
    pts = [c.points if isinstance(c, PointCloud) else np.asarray(c) for c in clouds]
    return logits_many(model, pts).argmax(axis=1)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

StepFn = Callable[[Model, np.ndarray, int, int], tuple[float, dict, dict]]


def ce_step(clouds: Sequence[np.ndarray], labels: np.ndarray, model: Model,
            idx: np.ndarray) -> tuple[float, dict, np.ndarray]:
    """Mean CE loss and gradients over a batch of clouds; also returns predictions."""
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    preds = np.empty(len(idx), dtype=np.int64)
    for g in group_by_size([clouds[i] for i in idx]):
        x = np.stack([clouds[idx[j]] for j in g])
        y = labels[idx[g]]
        z, cache = forward_batch(model, x)
        loss, dz = cross_entropy_grad(z, y)
        gb, _ = backward_batch(model, cache, dz)
        for k in grads:
            grads[k] += gb[k]
        total += loss.sum()
        preds[g] = z.argmax(axis=1)
    scale = 1.0 / len(idx)
    return total * scale, {k: v * scale for k, v in grads.items()}, preds


def run_training(model: Model, n_samples: int, config: TrainConfig, step: StepFn,
                 log_rows: Optional[list] = None, method: str = "st") -> Model:
    """Shared SGD loop. ``step(model, batch_idx, epoch, batch_no)`` returns (loss, grads, extra)."""
    model = model.copy()
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    shuffle_stream = config.seed.derive("shuffle")
    for epoch in range(config.epochs):
        order = shuffle_stream.derive(epoch).generator().permutation(n_samples)
        losses, correct, extras = [], 0, {}
        for bno, s in enumerate(range(0, n_samples, config.batch_size)):
            idx = order[s:s + config.batch_size]
            loss, grads, extra = step(model, idx, epoch, bno)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(
                    f"{method}: non-finite loss at epoch {epoch} batch {bno} (loss={loss})")
            for k in PARAM_NAMES:
                velocity[k] = config.momentum * velocity[k] - config.learning_rate * grads[k]
                model.params[k] += velocity[k]
            losses.append(float(loss) * len(idx))
            correct += int(extra.pop("correct", 0))
            for k, v in extra.items():
                extras[k] = extras.get(k, 0.0) + v * len(idx)
        row = {"epoch": epoch, "method": method, "loss": sum(losses) / n_samples,
               "accuracy": correct / n_samples}
        row.update({k: v / n_samples for k, v in extras.items()})
        log.debug("epoch %d: %s", epoch, row)
        if log_rows is not None:
            log_rows.append(row)
    return model


def train_standard(dataset: Dataset, config: TrainConfig, log_rows: Optional[list] = None,
                   model: Optional[Model] = None) -> Model:
    """Plain cross-entropy training on clean samples."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if model is None:
        model = init_model(dataset.class_count, config.hidden, config.seed)
    clouds = [s.points for s in dataset.samples]
    labels = dataset.labels

    def step(m, idx, epoch, bno):
        loss, grads, preds = ce_step(clouds, labels, m, idx)
        return loss, grads, {"correct": int((preds == labels[idx]).sum())}

    return run_training(model, len(dataset), config, step, log_rows, "st")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model: Model, path: str | os.PathLike) -> None:
    header = {"class_count": model.class_count, "sizes": list(model.sizes),
              "params": [[k, list(model.params[k].shape)] for k in PARAM_NAMES]}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for k in PARAM_NAMES:
            fh.write(np.ascontiguousarray(model.params[k], dtype="<f8").tobytes())


def load_model(path: str | os.PathLike) -> Model:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        header = json.loads(fh.readline())
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ValueError(f"{path}: truncated checkpoint")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes in checkpoint")
    model = Model(params, int(header["class_count"]))
    if list(model.sizes) != header["sizes"]:
        raise ValueError(f"{path}: layer sizes disagree with header")
    return model
