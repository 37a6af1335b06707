"""Dynamic sample selection on top of a mean-teacher pair.

Each online step: the teacher labels the batch (averaged over augmented
copies), predictions are emitted, the EMA confidence threshold is updated and
rescaled per class, the batch is split into high/low-confidence groups, the
student is trained with sharpened positive learning on the high group plus
complementary-label negative learning on every sample, and the teacher
follows the student by parameter EMA.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .neuralcore import (
    NEG_EPS,
    Network,
    NumericError,
    ShapeError,
    backward,
    forward,
    optimizer_step,
    soft_cross_entropy,
)
from .streamgen import AugmentationSpec, augment_features, make_rng

Convention = Literal["reciprocal", "as_written"]
TeacherBN = Literal["running", "batch"]


@dataclass(frozen=True)
class DssConfig:
    ema_lambda: float = 0.9
    tp: float = 0.6
    alpha: float = 0.05
    beta: float = 0.999
    lr: float = 1e-3
    aug: AugmentationSpec = field(default_factory=AugmentationSpec)
    sharpen_convention: Convention = "reciprocal"
    # "running": teacher normalizes with its running statistics (pure eval);
    # "batch": with each augmented batch's own statistics, running stats untouched
    teacher_bn: TeacherBN = "running"
    # ablation switches; disabling is equivalent to tp=1 / alpha=0
    use_sharpening: bool = True
    use_negative: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.ema_lambda <= 1.0:
            raise ValueError("ema_lambda must lie in [0, 1]")
        if not 0.0 < self.tp <= 1.0:
            raise ValueError("tp must lie in (0, 1]")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.sharpen_convention not in ("reciprocal", "as_written"):
            raise ValueError(f"unknown sharpen convention {self.sharpen_convention!r}")
        if self.teacher_bn not in ("running", "batch"):
            raise ValueError(f"unknown teacher_bn mode {self.teacher_bn!r}")


@dataclass(frozen=True)
class ThresholdState:
    pi: float
    domain_index: int = 0
    batch_index: int = 0
    final_pi_of_prev_domain: float | None = None


@dataclass(frozen=True)
class SampleSplit:
    high: np.ndarray
    low: np.ndarray


@dataclass
class ModelPair:
    student: Network
    teacher: Network

    @classmethod
    def from_source(cls, source: Network) -> "ModelPair":
        return cls(source.copy(), source.copy())

    def copy(self) -> "ModelPair":
        return ModelPair(self.student.copy(), self.teacher.copy())


# ---------------------------------------------------------------------------
# pseudo-labels


def augmentation_seeds(rng_seed: int, k: int) -> list[int]:
    return [int(s) for s in make_rng(rng_seed, 6).integers(0, 2**63, size=k)]


def teacher_forward(teacher: Network, x: np.ndarray, bn_mode: TeacherBN = "running") -> np.ndarray:
    """Teacher softmax without touching any teacher state."""
    if bn_mode == "running":
        return forward(teacher, x, "eval")[0]
    return forward(teacher, x, "train", track_stats=False)[0]


def teacher_pseudo_labels(
    teacher: Network,
    batch: np.ndarray,
    aug: AugmentationSpec,
    rng_seed: int,
    bn_mode: TeacherBN = "running",
) -> np.ndarray:
    """Mean teacher softmax over ``aug.num_augmentations`` augmented copies."""
    outs = [
        teacher_forward(teacher, augment_features(batch, aug, s), bn_mode)
        for s in augmentation_seeds(rng_seed, aug.num_augmentations)
    ]
    pseudo = np.mean(outs, axis=0)
    if not np.all(np.isfinite(pseudo)):
        raise NumericError("teacher produced non-finite probabilities")
    return pseudo


# ---------------------------------------------------------------------------
# dynamic threshold


def init_threshold_for_domain(prev_final: float | None, num_classes: int, domain_index: int = 0) -> ThresholdState:
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if prev_final is None:
        pi = 1.0 / num_classes
    else:
        if not 0.0 <= prev_final <= 1.0:
            raise ValueError(f"previous threshold {prev_final} outside [0, 1]")
        pi = (prev_final + 1.0 / num_classes) / 2.0
    return ThresholdState(pi=pi, domain_index=domain_index, batch_index=0, final_pi_of_prev_domain=prev_final)


def update_threshold(state: ThresholdState, probs: np.ndarray, ema_lambda: float) -> ThresholdState:
    if probs.shape[0] == 0:
        raise ValueError("cannot update the threshold on an empty batch")
    conf = float(probs.max(axis=1).mean())
    pi = ema_lambda * state.pi + (1.0 - ema_lambda) * conf
    return replace(state, pi=pi, batch_index=state.batch_index + 1)


def class_avg_confidence(probs: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class sum of max confidences over predicted members, divided by the
    full batch size."""
    n = probs.shape[0]
    if n == 0:
        return np.zeros(num_classes)
    pred = probs.argmax(axis=1)
    return np.bincount(pred, weights=probs.max(axis=1), minlength=num_classes) / n


def rescale_ratios(delta: np.ndarray) -> np.ndarray:
    top = delta.max() if delta.size else 0.0
    if top <= 0:
        return np.ones_like(delta, dtype=np.float64)
    return delta / top


def classwise_thresholds(pi: float, tau: np.ndarray) -> np.ndarray:
    return pi * tau


def partition(probs: np.ndarray, thresholds: np.ndarray) -> SampleSplit:
    pred = probs.argmax(axis=1)
    conf = probs.max(axis=1)
    is_high = conf >= thresholds[pred]
    return SampleSplit(np.flatnonzero(is_high), np.flatnonzero(~is_high))


# ---------------------------------------------------------------------------
# losses


def sharpen(probs: np.ndarray, tp: float, convention: Convention = "reciprocal") -> np.ndarray:
    e = 1.0 / tp if convention == "reciprocal" else tp
    if e == 1.0:
        return probs.copy()
    with np.errstate(divide="ignore"):
        logp = e * np.log(probs)
    logp -= logp.max(axis=1, keepdims=True)
    w = np.exp(logp)
    return w / w.sum(axis=1, keepdims=True)


def positive_loss(
    student_probs: np.ndarray,
    teacher_probs: np.ndarray,
    split: SampleSplit,
    tp: float,
    convention: Convention = "reciprocal",
) -> tuple[float, np.ndarray]:
    """Cross entropy against sharpened teacher targets on the high group only."""
    if student_probs.shape != teacher_probs.shape:
        raise ShapeError("student and teacher probabilities must be row-aligned")
    grad = np.zeros_like(student_probs)
    if split.high.size == 0:
        return 0.0, grad
    target = sharpen(teacher_probs[split.high], tp, convention)
    loss, g = soft_cross_entropy(student_probs[split.high], target)
    grad[split.high] = g
    return loss, grad


def complementary_labels(teacher_probs: np.ndarray, alpha: float) -> np.ndarray:
    return (teacher_probs < alpha).astype(np.float64)


def negative_loss(student_probs: np.ndarray, comp_labels: np.ndarray) -> tuple[float, np.ndarray]:
    if student_probs.shape != comp_labels.shape:
        raise ShapeError("complementary labels must match student probabilities")
    n = student_probs.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(student_probs)
    rest = 1.0 - student_probs
    clamped = np.maximum(rest, NEG_EPS)
    loss = float(np.sum(comp_labels * -np.log(clamped))) / n
    grad = np.where(rest > NEG_EPS, comp_labels / (n * clamped), 0.0)
    return loss, grad


def ema_update(pair: ModelPair, beta: float) -> ModelPair:
    """teacher <- beta * teacher + (1 - beta) * student, including BN statistics."""
    s, t = pair.student, pair.teacher
    if s.layers != t.layers:
        raise ShapeError("student and teacher architectures differ")
    teacher = t.copy()
    for pt, ps in zip(teacher.params, s.params):
        for name in pt:
            pt[name] = beta * pt[name] + (1.0 - beta) * ps[name]
    for i in teacher.bn_indices():
        teacher.bn_running_mean[i] = beta * teacher.bn_running_mean[i] + (1.0 - beta) * s.bn_running_mean[i]
        teacher.bn_running_var[i] = beta * teacher.bn_running_var[i] + (1.0 - beta) * s.bn_running_var[i]
    return ModelPair(s, teacher)


# ---------------------------------------------------------------------------
# the online step


@dataclass
class StepInfo:
    """Intermediate values of one step, kept for traces and debugging."""

    pseudo_labels: np.ndarray
    mean_max_confidence: float
    pi: float | None
    thresholds: np.ndarray | None
    split: SampleSplit
    loss_pos: float
    loss_neg: float
    delta: np.ndarray | None = None
    tau: np.ndarray | None = None
    comp_labels: np.ndarray | None = None
    student_probs: np.ndarray | None = None
    grads: list | None = None

    @property
    def loss_total(self) -> float:
        return self.loss_pos + self.loss_neg


@dataclass
class StepResult:
    predictions: np.ndarray
    pair: ModelPair
    state: ThresholdState | None
    info: StepInfo


def train_selected(
    pair: ModelPair,
    batch: np.ndarray,
    pseudo: np.ndarray,
    split: SampleSplit,
    cfg: DssConfig,
) -> tuple[ModelPair, StepInfo]:
    """Steps 6-9: student forward, joint loss, GD on the student, teacher EMA."""
    tp = cfg.tp if cfg.use_sharpening else 1.0
    student = pair.student.copy()
    ybar, cache = forward(student, batch, "train")
    l_pos, g_pos = positive_loss(ybar, pseudo, split, tp, cfg.sharpen_convention)
    comp = complementary_labels(pseudo, cfg.alpha if cfg.use_negative else 0.0)
    l_neg, g_neg = negative_loss(ybar, comp)
    total = l_pos + l_neg
    if not np.isfinite(total):
        raise NumericError(f"non-finite loss (pos={l_pos}, neg={l_neg})")
    grads = backward(student, cache, ybar, g_pos + g_neg)
    student = optimizer_step(student, grads, cfg.lr)
    new_pair = ema_update(ModelPair(student, pair.teacher), cfg.beta)
    info = StepInfo(
        pseudo_labels=pseudo,
        mean_max_confidence=float(pseudo.max(axis=1).mean()),
        pi=None,
        thresholds=None,
        split=split,
        loss_pos=l_pos,
        loss_neg=l_neg,
        comp_labels=comp,
        student_probs=ybar,
        grads=grads,
    )
    return new_pair, info


def adapt_step(
    pair: ModelPair,
    state: ThresholdState,
    batch: np.ndarray,
    cfg: DssConfig,
    rng_seed: int,
) -> StepResult:
    """One predict-then-adapt step; inputs are not mutated."""
    pseudo = teacher_pseudo_labels(pair.teacher, batch, cfg.aug, rng_seed, cfg.teacher_bn)
    predictions = pseudo.argmax(axis=1)
    state = update_threshold(state, pseudo, cfg.ema_lambda)
    num_classes = pseudo.shape[1]
    delta = class_avg_confidence(pseudo, num_classes)
    tau = rescale_ratios(delta)
    thresholds = classwise_thresholds(state.pi, tau)
    split = partition(pseudo, thresholds)
    new_pair, info = train_selected(pair, batch, pseudo, split, cfg)
    info.pi = state.pi
    info.thresholds = thresholds
    info.delta = delta
    info.tau = tau
    return StepResult(predictions, new_pair, state, info)
