"""Synthetic Gaussian-class data, feature-space corruptions and domain streams."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class SpecError(ValueError):
    pass


def make_rng(*seed_parts: int) -> np.random.Generator:
    """Independent generator for a tuple of non-negative integer keys."""
    return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed_parts]))


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 8
    input_dim: int = 32
    samples_per_class: int = 500
    class_separation: float = 6.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if self.input_dim < 2:
            raise SpecError("input_dim must be >= 2")
        if self.samples_per_class < 1:
            raise SpecError("samples_per_class must be >= 1")
        if self.class_separation <= 0:
            raise SpecError("class_separation must be positive")


@dataclass
class LabeledBatch:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise SpecError(f"features {self.features.shape} / labels {self.labels.shape} mismatch")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def take(self, idx: np.ndarray | slice) -> "LabeledBatch":
        return LabeledBatch(self.features[idx], self.labels[idx])


def class_means(spec: DatasetSpec, max_tries: int = 200) -> np.ndarray:
    """Class centres with every pairwise distance >= class_separation.

    When C <= d + 1 the centres are the vertices of a randomly rotated regular
    simplex with edge exactly ``class_separation``. Otherwise centres are drawn
    on the sphere of radius ``class_separation`` and the whole placement is
    redrawn until the constraint holds.
    """
    rng = make_rng(spec.seed, 1)
    C, d, sep = spec.num_classes, spec.input_dim, spec.class_separation
    if C <= d + 1:
        # centred one-hot vectors form a simplex with edge sqrt(2) inside a
        # (C-1)-dim subspace of R^C; map that subspace isometrically into R^d
        verts = np.eye(C) - 1.0 / C
        basis, _ = np.linalg.qr(verts.T[:, : C - 1])
        coords = verts @ basis
        rot, _ = np.linalg.qr(rng.normal(size=(d, C - 1)))
        return (sep / np.sqrt(2.0)) * coords @ rot.T
    for _ in range(max_tries):
        m = rng.normal(size=(C, d))
        m *= sep / np.linalg.norm(m, axis=1, keepdims=True)
        diff = m[:, None, :] - m[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        if np.all(dist[np.triu_indices(C, 1)] >= sep):
            return m
    raise SpecError(f"could not place {C} class means in {d} dims with separation {sep}")


def generate_clean(spec: DatasetSpec) -> tuple[LabeledBatch, LabeledBatch]:
    """Isotropic Gaussian classes split 80/20 per class into train/test."""
    means = class_means(spec)
    rng = make_rng(spec.seed, 2)
    n = spec.samples_per_class
    n_train = int(round(0.8 * n))
    tr_x, tr_y, te_x, te_y = [], [], [], []
    for c in range(spec.num_classes):
        x = means[c] + spec.noise_std * rng.normal(size=(n, spec.input_dim))
        tr_x.append(x[:n_train])
        te_x.append(x[n_train:])
        tr_y.append(np.full(n_train, c))
        te_y.append(np.full(n - n_train, c))
    train = LabeledBatch(np.concatenate(tr_x), np.concatenate(tr_y))
    test = LabeledBatch(np.concatenate(te_x), np.concatenate(te_y))
    # shuffle so class order does not leak into mini-batches
    train = train.take(rng.permutation(len(train)))
    test = test.take(rng.permutation(len(test)))
    return train, test


class CorruptionKind(str, Enum):
    IDENTITY = "identity"
    GAUSSIAN_NOISE = "gaussian_noise"
    IMPULSE_NOISE = "impulse_noise"
    CONTRAST_SCALE = "contrast_scale"
    PLANE_ROTATION = "plane_rotation"
    FEATURE_DROPOUT = "feature_dropout"


def gaussian_noise_std(severity: int) -> float:
    return 0.15 * severity


def _rotate_pairs(x: np.ndarray, angle: np.ndarray | float) -> np.ndarray:
    """Rotate each consecutive coordinate pair (0,1), (2,3), ... by ``angle``.

    ``angle`` is a scalar or one angle per row; an odd trailing coordinate is
    left as is.
    """
    out = x.copy()
    k = x.shape[1] // 2 * 2
    a = np.asarray(angle, dtype=np.float64).reshape(-1, 1)
    c, s = np.cos(a), np.sin(a)
    u, v = x[:, 0:k:2], x[:, 1:k:2]
    out[:, 0:k:2] = c * u - s * v
    out[:, 1:k:2] = s * u + c * v
    return out


def apply_corruption(batch: LabeledBatch, kind: CorruptionKind | str, severity: int, rng_seed: int) -> LabeledBatch:
    kind = CorruptionKind(kind)
    if not 1 <= int(severity) <= 5:
        raise SpecError(f"severity must be in 1..5, got {severity}")
    x = batch.features
    rng = make_rng(rng_seed, 3)
    if kind is CorruptionKind.IDENTITY:
        out = x.copy()
    elif kind is CorruptionKind.GAUSSIAN_NOISE:
        out = x + rng.normal(0.0, gaussian_noise_std(severity), size=x.shape)
    elif kind is CorruptionKind.IMPULSE_NOISE:
        hit = rng.random(x.shape) < 0.03 * severity
        lo, hi = (x.min(), x.max()) if x.size else (0.0, 0.0)
        out = np.where(hit, rng.uniform(lo, hi, size=x.shape), x)
    elif kind is CorruptionKind.CONTRAST_SCALE:
        mu = x.mean(axis=0) if x.size else 0.0
        out = mu + (1.0 - 0.15 * severity) * (x - mu)
    elif kind is CorruptionKind.PLANE_ROTATION:
        out = _rotate_pairs(x, 0.12 * severity)
    else:
        keep = rng.random(x.shape) >= 0.06 * severity
        out = x * keep
    return LabeledBatch(out, batch.labels.copy())


@dataclass(frozen=True)
class DomainSpec:
    corruption: CorruptionKind
    severity: int
    n_samples: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "corruption", CorruptionKind(self.corruption))
        if not 1 <= self.severity <= 5:
            raise SpecError(f"severity must be in 1..5, got {self.severity}")
        if self.n_samples < 2:
            raise SpecError("each domain needs at least 2 samples")


@dataclass(frozen=True)
class StreamSpec:
    domains: tuple[DomainSpec, ...]
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "domains", tuple(self.domains))
        if not self.domains:
            raise SpecError("stream needs at least one domain")
        if self.batch_size < 2:
            raise SpecError("batch_size must be >= 2")


def batch_sizes(n_samples: int, batch_size: int) -> list[int]:
    """Split a domain into batches of ``batch_size``; a remainder of 1 is folded
    into the previous batch so that every batch has at least 2 rows."""
    full, rem = divmod(n_samples, batch_size)
    sizes = [batch_size] * full
    if rem == 1 and sizes:
        sizes[-1] += 1
    elif rem:
        sizes.append(rem)
    return sizes


@dataclass
class DomainStream:
    """Replayable iterator of ``(domain_index, batch)`` pairs."""

    spec: StreamSpec
    domain_data: list[LabeledBatch]

    def __iter__(self) -> Iterator[tuple[int, LabeledBatch]]:
        for t, data in enumerate(self.domain_data):
            start = 0
            for size in batch_sizes(len(data), self.spec.batch_size):
                yield t, data.take(slice(start, start + size))
                start += size

    def num_batches(self) -> int:
        return sum(len(batch_sizes(len(d), self.spec.batch_size)) for d in self.domain_data)


def make_stream(spec: StreamSpec, clean_test: LabeledBatch) -> DomainStream:
    if len(clean_test) == 0:
        raise SpecError("clean_test is empty")
    data = []
    for t, dom in enumerate(spec.domains):
        rng = make_rng(spec.seed, 4, t)
        replace = dom.n_samples > len(clean_test)
        idx = rng.choice(len(clean_test), size=dom.n_samples, replace=replace)
        data.append(apply_corruption(clean_test.take(idx), dom.corruption, dom.severity, int(rng.integers(2**63))))
    return DomainStream(spec, data)


@dataclass(frozen=True)
class AugmentationSpec:
    noise_sigma: float = 0.05
    rotation_max_angle: float = 0.1
    num_augmentations: int = 8

    def __post_init__(self) -> None:
        if self.num_augmentations < 1:
            raise SpecError("num_augmentations must be >= 1")
        if self.noise_sigma < 0 or self.rotation_max_angle < 0:
            raise SpecError("augmentation strengths must be non-negative")


def augment_features(x: np.ndarray, spec: AugmentationSpec, rng_seed: int) -> np.ndarray:
    """Gaussian jitter plus a random per-sample plane rotation."""
    if spec.noise_sigma == 0 and spec.rotation_max_angle == 0:
        return x.copy()
    rng = make_rng(rng_seed, 5)
    out = x + rng.normal(0.0, spec.noise_sigma, size=x.shape) if spec.noise_sigma > 0 else x
    if spec.rotation_max_angle > 0:
        angles = rng.uniform(-spec.rotation_max_angle, spec.rotation_max_angle, size=x.shape[0])
        out = _rotate_pairs(out, angles)
    return out


def augment(batch: LabeledBatch, spec: AugmentationSpec, rng_seed: int) -> LabeledBatch:
    return LabeledBatch(augment_features(batch.features, spec, rng_seed), batch.labels.copy())


# ---------------------------------------------------------------------------
# CSV interchange


def write_csv(batch: LabeledBatch, path: str | Path) -> None:
    d = batch.features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(d)] + ["label"])
        for row, y in zip(batch.features, batch.labels):
            w.writerow([f"{float(v):.17g}" for v in row] + [int(y)])


def read_csv(path: str | Path) -> LabeledBatch:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise SpecError("dataset CSV must end with a 'label' column")
        rows = list(reader)
    d = len(header) - 1
    feats = np.array([[float(v) for v in r[:d]] for r in rows], dtype=np.float64).reshape(len(rows), d)
    labels = np.array([int(r[d]) for r in rows], dtype=np.int64)
    return LabeledBatch(feats, labels)


def default_domains(n_samples: int = 2000) -> list[DomainSpec]:
    K = CorruptionKind
    order: Sequence[tuple[CorruptionKind, int]] = [
        (K.GAUSSIAN_NOISE, 5),
        (K.IMPULSE_NOISE, 5),
        (K.CONTRAST_SCALE, 5),
        (K.PLANE_ROTATION, 5),
        (K.FEATURE_DROPOUT, 5),
        (K.GAUSSIAN_NOISE, 3),
        (K.CONTRAST_SCALE, 3),
        (K.PLANE_ROTATION, 3),
    ]
    return [DomainSpec(k, s, n_samples) for k, s in order]
