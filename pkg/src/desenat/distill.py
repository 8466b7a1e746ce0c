"""Class-graph self-distillation loss and the two adversarial training loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adversarial import AdvConfig, generate_adversarial
from .core import Dataset
from .net import (Cache, Model, TrainConfig, backward_batch, ce_step, forward_batch,
                  group_by_size, init_model, log_softmax, run_training, softmax)
from .shapley import Attribution, attribute_dataset

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    l_kd: float
    l_ce_clean: float
    l_ce_adv: float
    total: float
    alpha: float


def class_graphs(p: np.ndarray, p_adv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Self graph ``outer(p, p)`` and cross graph ``outer(p, p_adv)``."""
    p = np.asarray(p, dtype=np.float64)
    p_adv = np.asarray(p_adv, dtype=np.float64)
    if p.shape != p_adv.shape:
        raise ValueError("probability vectors must have the same length")
    return np.multiply.outer(p, p), np.multiply.outer(p, p_adv)


def kd_loss(p: np.ndarray, p_adv: np.ndarray) -> float:
    """Cross-entropy of the cross graph against the self graph (natural log, clamped at 1e-12)."""
    a, a_adv = class_graphs(p, p_adv)
    return float(-(a * np.log(np.maximum(a_adv, EPS))).sum())


def _kd_prob_grads(p: np.ndarray, q: np.ndarray, detach_clean: bool = False):
    """Batched KD loss (B,) and its gradients w.r.t. p and q, each (B, c)."""
    a = p[:, :, None] * p[:, None, :]
    a_adv = p[:, :, None] * q[:, None, :]
    live = a_adv > EPS
    log_adv = np.log(np.where(live, a_adv, EPS))
    loss = -(a * log_adv).sum(axis=(1, 2))
    h = np.where(live, -a / np.where(live, a_adv, 1.0), 0.0)  # dL/dA_adv
    dq = np.einsum("bik,bi->bk", h, p)
    if detach_clean:
        dp = np.zeros_like(p)
    else:
        g = -log_adv  # dL/dA
        dp = np.einsum("bkj,bj->bk", g, p) + np.einsum("bik,bi->bk", g, p)
        dp += np.einsum("bkj,bj->bk", h, q)
    return loss, dp, dq


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - (p * dp).sum(axis=-1, keepdims=True))


def kd_loss_logit_grads(z: np.ndarray, z_adv: np.ndarray, detach_clean: bool = False):
    """KD loss for logit batches (B, c) and its gradients w.r.t. both logit batches."""
    p, q = softmax(np.atleast_2d(z)), softmax(np.atleast_2d(z_adv))
    loss, dp, dq = _kd_prob_grads(p, q, detach_clean)
    return loss, _softmax_backward(p, dp), _softmax_backward(q, dq)


def total_loss(p: np.ndarray, p_adv: np.ndarray, label: int, alpha: float = 1.0) -> LossBreakdown:
    """``alpha * L_KD + (2 - alpha) * (CE(p) + CE(p_adv))``."""
    if not 0 <= alpha <= 2:
        raise ValueError(f"alpha must be in [0, 2], got {alpha}")
    l_kd = kd_loss(p, p_adv)
    ce_c = float(-np.log(max(float(p[label]), EPS)))
    ce_a = float(-np.log(max(float(p_adv[label]), EPS)))
    return LossBreakdown(l_kd, ce_c, ce_a, alpha * l_kd + (2.0 - alpha) * (ce_c + ce_a), alpha)


def total_loss_logit_grads(z: np.ndarray, z_adv: np.ndarray, labels: np.ndarray, alpha: float,
                           detach_clean: bool = False):
    """Per-sample loss parts (dict of (B,) arrays) and gradients w.r.t. clean and adversarial logits."""
    rows = np.arange(z.shape[0])
    ls, ls_adv = log_softmax(z), log_softmax(z_adv)
    ce_c, ce_a = -ls[rows, labels], -ls_adv[rows, labels]
    kd, dz_kd, dza_kd = kd_loss_logit_grads(z, z_adv, detach_clean)
    dce, dce_adv = np.exp(ls), np.exp(ls_adv)
    dce[rows, labels] -= 1.0
    dce_adv[rows, labels] -= 1.0
    w = 2.0 - alpha
    parts = {"l_kd": kd, "l_ce_clean": ce_c, "l_ce_adv": ce_a,
             "total": alpha * kd + w * (ce_c + ce_a)}
    return parts, alpha * dz_kd + w * dce, alpha * dza_kd + w * dce_adv


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _adversarial_batch(dataset: Dataset, attrs: Sequence[Attribution], adv: AdvConfig,
                       idx: np.ndarray, epoch: int, bno: int) -> list[np.ndarray]:
    # one ratio per batch keeps every adversarial cloud in it the same size
    r = adv.draw_r(adv.seed.derive("r", epoch, bno))
    out = []
    for i in idx:
        pc = dataset.samples[i]
        out.append(generate_adversarial(pc, attrs[i], adv, r, adv.seed.derive("adv", epoch, int(i))).points)
    return out


class _Attributions:
    """Per-sample attributions, computed once from the baseline, optionally refreshed each epoch."""

    def __init__(self, dataset, baseline, attrs, num_permutations, seed, threads, refresh):
        self.dataset, self.num_permutations = dataset, num_permutations
        self.seed, self.threads, self.refresh = seed, threads, refresh
        if attrs is None:
            attrs = attribute_dataset(baseline, dataset, num_permutations, seed, threads)
        if len(attrs) != len(dataset):
            raise ValueError("need one attribution per training sample")
        self.values = list(attrs)
        self.epoch = 0

    def at(self, model: Model, epoch: int) -> list[Attribution]:
        if self.refresh and epoch != self.epoch and epoch > 0:
            self.values = attribute_dataset(model, self.dataset, self.num_permutations,
                                            self.seed.derive("refresh", epoch), self.threads)
        self.epoch = epoch
        return self.values


def train_desenat(dataset: Dataset, baseline: Model, config: TrainConfig, adv: AdvConfig,
                  attributions: Optional[Sequence[Attribution]] = None, num_permutations: int = 64,
                  threads: int = 1, refresh_attributions: bool = False,
                  log_rows: Optional[list] = None, model: Optional[Model] = None) -> Model:
    """Cross-entropy training on adversarial samples only."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    store = _Attributions(dataset, baseline, attributions, num_permutations,
                          adv.seed.derive("attr"), threads, refresh_attributions)
    if model is None:
        model = init_model(dataset.class_count, config.hidden, config.seed)
    labels = dataset.labels

    def step(m, idx, epoch, bno):
        clouds = _adversarial_batch(dataset, store.at(m, epoch), adv, idx, epoch, bno)
        local = np.arange(len(idx))
        loss, grads, preds = ce_step(clouds, labels[idx], m, local)
        return loss, grads, {"correct": int((preds == labels[idx]).sum())}

    return run_training(model, len(dataset), config, step, log_rows, "desenat")


def _forward_groups(model: Model, clouds: Sequence[np.ndarray]) -> tuple[np.ndarray, list]:
    z = np.empty((len(clouds), model.class_count))
    groups: list[tuple[np.ndarray, Cache]] = []
    for g in group_by_size(clouds):
        zg, cache = forward_batch(model, np.stack([clouds[i] for i in g]))
        z[g] = zg
        groups.append((g, cache))
    return z, groups


def _backward_groups(model: Model, groups: list, dz: np.ndarray, grads: dict) -> None:
    for g, cache in groups:
        gb, _ = backward_batch(model, cache, dz[g])
        for k in grads:
            grads[k] += gb[k]


def sd_step(model: Model, clean: Sequence[np.ndarray], adv_clouds: Sequence[np.ndarray],
            labels: np.ndarray, alpha: float, detach_clean: bool = False):
    """Mean distillation loss over a batch, its parameter gradients and per-sample parts."""
    z, g_clean = _forward_groups(model, clean)
    z_adv, g_adv = _forward_groups(model, adv_clouds)
    parts, dz, dz_adv = total_loss_logit_grads(z, z_adv, labels, alpha, detach_clean)
    b = len(labels)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    _backward_groups(model, g_clean, dz / b, grads)
    _backward_groups(model, g_adv, dz_adv / b, grads)
    return float(parts["total"].mean()), grads, parts, z


def train_desenat_sd(dataset: Dataset, baseline: Model, config: TrainConfig, adv: AdvConfig,
                     alpha: float = 1.0, attributions: Optional[Sequence[Attribution]] = None,
                     num_permutations: int = 64, threads: int = 1, detach_clean: bool = False,
                     refresh_attributions: bool = False, log_rows: Optional[list] = None,
                     model: Optional[Model] = None) -> Model:
    """Joint training on each clean sample and its adversarial twin, coupled by the KD loss."""
    if not 0 <= alpha <= 2:
        raise ValueError(f"alpha must be in [0, 2], got {alpha}")
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    store = _Attributions(dataset, baseline, attributions, num_permutations,
                          adv.seed.derive("attr"), threads, refresh_attributions)
    if model is None:
        model = init_model(dataset.class_count, config.hidden, config.seed)
    labels = dataset.labels

    def step(m, idx, epoch, bno):
        adv_clouds = _adversarial_batch(dataset, store.at(m, epoch), adv, idx, epoch, bno)
        clean = [dataset.samples[i].points for i in idx]
        loss, grads, parts, z = sd_step(m, clean, adv_clouds, labels[idx], alpha, detach_clean)
        extra = {k: float(parts[k].mean()) for k in ("l_kd", "l_ce_clean", "l_ce_adv")}
        extra["correct"] = int((z.argmax(axis=1) == labels[idx]).sum())
        return loss, grads, extra

    return run_training(model, len(dataset), config, step, log_rows, "desenat-sd")
