"""Comparison methods run under the same predict-then-adapt protocol."""

from __future__ import annotations

from enum import Enum

import numpy as np

from .dss import (
    DssConfig,
    ModelPair,
    SampleSplit,
    StepInfo,
    StepResult,
    ema_update,
    partition,
    teacher_pseudo_labels,
    train_selected,
)
from .neuralcore import (
    DegenerateBatchError,
    Network,
    NumericError,
    backward,
    entropy,
    forward,
    optimizer_step,
    soft_cross_entropy,
)


class MethodKind(str, Enum):
    SOURCE_ONLY = "source_only"
    BN_ADAPT = "bn_adapt"
    TENT = "tent"
    MEAN_TEACHER_ALL = "mean_teacher_all"
    DSS_FIXED_THRESHOLD = "dss_fixed_threshold"
    DSS = "dss"


def source_only_step(net: Network, batch: np.ndarray) -> np.ndarray:
    probs, _ = forward(net, batch, "eval")
    return probs.argmax(axis=1)


def _require_bn(net: Network, batch: np.ndarray) -> None:
    if not net.bn_indices():
        raise ValueError("method needs at least one batch-norm layer")
    if batch.shape[0] < 2:
        raise DegenerateBatchError("batch statistics need at least 2 rows")


def bn_adapt_forward(net: Network, batch: np.ndarray) -> tuple[np.ndarray, Network]:
    """(probs, net'): normalize with this batch's statistics and keep them as
    the running statistics."""
    _require_bn(net, batch)
    out = net.copy()
    probs, _ = forward(out, batch, "train", bn_momentum=1.0)
    return probs, out


def bn_adapt_step(net: Network, batch: np.ndarray) -> tuple[np.ndarray, Network]:
    probs, out = bn_adapt_forward(net, batch)
    return probs.argmax(axis=1), out


def tent_step(net: Network, batch: np.ndarray, lr: float) -> tuple[np.ndarray, Network, np.ndarray]:
    """Entropy minimization over the BN affine parameters only.

    Returns (predictions, updated network, pre-update probabilities).
    """
    _require_bn(net, batch)
    out = net.copy()
    probs, cache = forward(out, batch, "train", bn_momentum=1.0)
    predictions = probs.argmax(axis=1)
    _, d_ent = entropy(probs)
    grads = backward(out, cache, probs, d_ent)
    bn = set(out.bn_indices())
    masked = [g if i in bn else {k: np.zeros_like(v) for k, v in g.items()} for i, g in enumerate(grads)]
    updated = optimizer_step(out, masked, lr)
    # keep every non-BN array identical, not merely numerically equal
    for i, p_old in enumerate(out.params):
        if i not in bn:
            updated.params[i] = p_old
    return predictions, updated, probs


def mean_teacher_all_step(pair: ModelPair, batch: np.ndarray, cfg: DssConfig, rng_seed: int) -> StepResult:
    """CoTTA-style consistency on every sample: raw teacher targets, no
    threshold, no sharpening, no negative learning."""
    pseudo = teacher_pseudo_labels(pair.teacher, batch, cfg.aug, rng_seed, cfg.teacher_bn)
    predictions = pseudo.argmax(axis=1)
    student = pair.student.copy()
    ybar, cache = forward(student, batch, "train")
    loss, g = soft_cross_entropy(ybar, pseudo)
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss}")
    grads = backward(student, cache, ybar, g)
    student = optimizer_step(student, grads, cfg.lr)
    new_pair = ema_update(ModelPair(student, pair.teacher), cfg.beta)
    n = batch.shape[0]
    info = StepInfo(
        pseudo_labels=pseudo,
        mean_max_confidence=float(pseudo.max(axis=1).mean()),
        pi=None,
        thresholds=None,
        split=SampleSplit(np.arange(n), np.arange(0)),
        loss_pos=loss,
        loss_neg=0.0,
        student_probs=ybar,
        grads=grads,
    )
    return StepResult(predictions, new_pair, None, info)


def dss_fixed_threshold_step(
    pair: ModelPair, batch: np.ndarray, cfg: DssConfig, fixed_pi: float, rng_seed: int
) -> StepResult:
    """DSS with a constant, class-independent threshold in place of the dynamic one."""
    pseudo = teacher_pseudo_labels(pair.teacher, batch, cfg.aug, rng_seed, cfg.teacher_bn)
    predictions = pseudo.argmax(axis=1)
    thresholds = np.full(pseudo.shape[1], float(fixed_pi))
    split = partition(pseudo, thresholds)
    new_pair, info = train_selected(pair, batch, pseudo, split, cfg)
    info.pi = float(fixed_pi)
    info.thresholds = thresholds
    return StepResult(predictions, new_pair, None, info)
