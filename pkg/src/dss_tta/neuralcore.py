"""Small numpy MLP with batch normalization and hand-derived gradients.

Networks are plain containers of ``float64`` arrays. ``forward`` in train mode
updates the batch-norm running statistics in place (as a framework BN layer
would); every other operation leaves its inputs untouched.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

LOG_EPS = 1e-12
NEG_EPS = 1e-7
CHECKPOINT_VERSION = 1

Mode = Literal["train", "eval"]


class ShapeError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    pass


class CacheError(RuntimeError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: Literal["dense", "batchnorm", "relu"]
    in_dim: int
    out_dim: int

    def __post_init__(self) -> None:
        if self.kind not in ("dense", "batchnorm", "relu"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ShapeError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.kind != "dense" and self.in_dim != self.out_dim:
            raise ShapeError(f"{self.kind} layer needs in_dim == out_dim")


def mlp_layers(in_dim: int, num_classes: int, hidden: Sequence[int] = (64, 64)) -> list[LayerSpec]:
    """dense -> BN -> ReLU blocks for each hidden width, then a dense head."""
    layers: list[LayerSpec] = []
    prev = in_dim
    for width in hidden:
        layers += [
            LayerSpec("dense", prev, width),
            LayerSpec("batchnorm", width, width),
            LayerSpec("relu", width, width),
        ]
        prev = width
    layers.append(LayerSpec("dense", prev, num_classes))
    return layers


@dataclass
class Network:
    layers: list[LayerSpec]
    # one dict per layer: dense {"W", "b"}, batchnorm {"gamma", "beta"}, relu {}
    params: list[dict[str, np.ndarray]]
    # keyed by layer index of each batchnorm layer
    bn_running_mean: dict[int, np.ndarray] = field(default_factory=dict)
    bn_running_var: dict[int, np.ndarray] = field(default_factory=dict)
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self) -> None:
        self.validate()

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def bn_indices(self) -> list[int]:
        return [i for i, spec in enumerate(self.layers) if spec.kind == "batchnorm"]

    def validate(self) -> None:
        if not self.layers:
            raise ShapeError("network needs at least one layer")
        if len(self.params) != len(self.layers):
            raise ShapeError("params must have one entry per layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer chain broken: {prev} -> {nxt}")
        for i, (spec, p) in enumerate(zip(self.layers, self.params)):
            expected = _param_shapes(spec)
            if set(p) != set(expected):
                raise ShapeError(f"layer {i} params {sorted(p)} != {sorted(expected)}")
            for name, shape in expected.items():
                if p[name].shape != shape:
                    raise ShapeError(f"layer {i} {name} shape {p[name].shape} != {shape}")
            if spec.kind == "batchnorm":
                if self.bn_running_mean[i].shape != (spec.in_dim,):
                    raise ShapeError(f"layer {i} running mean has wrong shape")
                if np.any(self.bn_running_var[i] <= 0):
                    raise ValueError(f"layer {i} running variance must be positive")
        if not 0.0 < self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in (0, 1)")
        if self.bn_eps <= 0:
            raise ValueError("bn_eps must be positive")

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of parameters and BN statistics."""
        out: dict[str, np.ndarray] = {}
        for i, p in enumerate(self.params):
            for name, arr in p.items():
                out[f"layer{i}.{name}"] = arr
        for i in self.bn_indices():
            out[f"layer{i}.running_mean"] = self.bn_running_mean[i]
            out[f"layer{i}.running_var"] = self.bn_running_var[i]
        return out


def _param_shapes(spec: LayerSpec) -> dict[str, tuple[int, ...]]:
    if spec.kind == "dense":
        return {"W": (spec.in_dim, spec.out_dim), "b": (spec.out_dim,)}
    if spec.kind == "batchnorm":
        return {"gamma": (spec.in_dim,), "beta": (spec.in_dim,)}
    return {}


def init_network(
    layers: Sequence[LayerSpec],
    rng: np.random.Generator,
    bn_momentum: float = 0.1,
    bn_eps: float = 1e-5,
) -> Network:
    """He-normal dense weights, zero biases, unit BN scale."""
    params: list[dict[str, np.ndarray]] = []
    means: dict[int, np.ndarray] = {}
    vars_: dict[int, np.ndarray] = {}
    for i, spec in enumerate(layers):
        if spec.kind == "dense":
            W = rng.normal(0.0, np.sqrt(2.0 / spec.in_dim), size=(spec.in_dim, spec.out_dim))
            params.append({"W": W, "b": np.zeros(spec.out_dim)})
        elif spec.kind == "batchnorm":
            params.append({"gamma": np.ones(spec.in_dim), "beta": np.zeros(spec.in_dim)})
            means[i] = np.zeros(spec.in_dim)
            vars_[i] = np.ones(spec.in_dim)
        else:
            params.append({})
    return Network(list(layers), params, means, vars_, bn_momentum, bn_eps)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ForwardCache:
    # per layer: the layer input and whatever the backward rule needs
    inputs: list[np.ndarray]
    extras: list[dict[str, np.ndarray]]
    probs: np.ndarray
    mode: str
    # flipped to False once consumed, so a cache cannot be replayed
    valid: bool = True


def forward(
    net: Network,
    batch: np.ndarray,
    mode: Mode = "eval",
    bn_momentum: float | None = None,
    track_stats: bool = True,
) -> tuple[np.ndarray, ForwardCache]:
    """Run the network and return (probabilities, cache).

    Train mode normalizes with the batch statistics and folds them into the
    running statistics with ``bn_momentum`` (the network's own value unless
    overridden; 1.0 replaces the running statistics outright). With
    ``track_stats=False`` train mode leaves the running statistics alone. Eval
    mode uses the running statistics and mutates nothing.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"batch shape {x.shape} incompatible with input dim {net.in_dim}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "train" and x.shape[0] < 2:
        raise DegenerateBatchError("train-mode forward needs at least 2 rows")
    momentum = net.bn_momentum if bn_momentum is None else bn_momentum

    inputs: list[np.ndarray] = []
    extras: list[dict[str, np.ndarray]] = []
    h = x
    for i, (spec, p) in enumerate(zip(net.layers, net.params)):
        inputs.append(h)
        if spec.kind == "dense":
            h = h @ p["W"] + p["b"]
            extras.append({})
        elif spec.kind == "batchnorm":
            if mode == "train":
                mu = h.mean(axis=0)
                var = h.var(axis=0)
                if track_stats:
                    net.bn_running_mean[i] = (1.0 - momentum) * net.bn_running_mean[i] + momentum * mu
                    net.bn_running_var[i] = (1.0 - momentum) * net.bn_running_var[i] + momentum * var
            else:
                mu = net.bn_running_mean[i]
                var = net.bn_running_var[i]
            inv_std = 1.0 / np.sqrt(var + net.bn_eps)
            xhat = (h - mu) * inv_std
            h = xhat * p["gamma"] + p["beta"]
            extras.append({"xhat": xhat, "inv_std": inv_std})
        else:
            mask = h > 0
            h = h * mask
            extras.append({"mask": mask})
    probs = softmax(h)
    return probs, ForwardCache(inputs, extras, probs, mode)


def backward(net: Network, cache: ForwardCache, probs: np.ndarray, dL_dprobs: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Gradients of a scalar loss given its gradient w.r.t. the output probabilities."""
    if cache is None or not cache.valid:
        raise CacheError("backward needs a fresh cache from forward()")
    if len(cache.inputs) != len(net.layers):
        raise CacheError("cache layer count does not match network")
    if probs is not cache.probs and not np.array_equal(probs, cache.probs):
        raise CacheError("probs do not come from this cache")
    g = np.asarray(dL_dprobs, dtype=np.float64)
    if g.shape != probs.shape:
        raise ShapeError(f"dL_dprobs shape {g.shape} != probs shape {probs.shape}")
    cache.valid = False

    # softmax Jacobian: dz = p * (g - <p, g>)
    delta = probs * (g - np.sum(probs * g, axis=1, keepdims=True))
    grads: list[dict[str, np.ndarray]] = [{} for _ in net.layers]
    for i in range(len(net.layers) - 1, -1, -1):
        spec, p = net.layers[i], net.params[i]
        h_in, ex = cache.inputs[i], cache.extras[i]
        if spec.kind == "dense":
            grads[i] = {"W": h_in.T @ delta, "b": delta.sum(axis=0)}
            delta = delta @ p["W"].T
        elif spec.kind == "batchnorm":
            xhat, inv_std = ex["xhat"], ex["inv_std"]
            grads[i] = {"gamma": np.sum(delta * xhat, axis=0), "beta": delta.sum(axis=0)}
            dxhat = delta * p["gamma"]
            if cache.mode == "train":
                n = h_in.shape[0]
                delta = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)
                )
            else:
                delta = dxhat * inv_std
        else:
            delta = delta * ex["mask"]
    return grads


def zero_grads(net: Network) -> list[dict[str, np.ndarray]]:
    return [{k: np.zeros_like(v) for k, v in p.items()} for p in net.params]


def add_grads(a: list[dict[str, np.ndarray]], b: list[dict[str, np.ndarray]]) -> list[dict[str, np.ndarray]]:
    return [{k: ga[k] + gb[k] for k in ga} for ga, gb in zip(a, b)]


def optimizer_step(net: Network, grads: list[dict[str, np.ndarray]], lr: float) -> Network:
    """Plain gradient descent; returns a new network."""
    if len(grads) != len(net.params):
        raise ShapeError("gradients do not match network")
    for i, (p, g) in enumerate(zip(net.params, grads)):
        if set(g) != set(p):
            raise ShapeError(f"layer {i} gradient keys {sorted(g)} != {sorted(p)}")
        for name in p:
            if g[name].shape != p[name].shape:
                raise ShapeError(f"layer {i} {name} gradient shape mismatch")
            if not np.all(np.isfinite(g[name])):
                raise NumericError(f"non-finite gradient in layer {i} ({name})")
    out = net.copy()
    for p, g in zip(out.params, grads):
        for name in p:
            p[name] = p[name] - lr * g[name]
    return out


# ---------------------------------------------------------------------------
# losses: each returns (value, dL/dprobs); all are means over rows


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def soft_cross_entropy(student_probs: np.ndarray, target_probs: np.ndarray) -> tuple[float, np.ndarray]:
    _check_same_shape(student_probs, target_probs)
    n = student_probs.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(student_probs)
    clamped = np.maximum(student_probs, LOG_EPS)
    loss = float(-np.sum(target_probs * np.log(clamped)) / n)
    grad = np.where(student_probs > LOG_EPS, -target_probs / (n * clamped), 0.0)
    return loss, grad


def entropy(probs: np.ndarray) -> tuple[float, np.ndarray]:
    n = probs.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(probs)
    clamped = np.maximum(probs, LOG_EPS)
    logp = np.log(clamped)
    loss = float(-np.sum(probs * logp) / n)
    grad = -(logp + (probs > LOG_EPS)) / n
    return loss, grad


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(net: Network, path: str | Path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "layers": [[s.kind, s.in_dim, s.out_dim] for s in net.layers],
        "bn_momentum": net.bn_momentum,
        "bn_eps": net.bn_eps,
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    arrays.update(net.state_arrays())
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> Network:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(data["__meta__"].tobytes().decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        layers = [LayerSpec(k, a, b) for k, a, b in meta["layers"]]
        params: list[dict[str, np.ndarray]] = []
        means: dict[int, np.ndarray] = {}
        vars_: dict[int, np.ndarray] = {}
        for i, spec in enumerate(layers):
            params.append({name: data[f"layer{i}.{name}"].copy() for name in _param_shapes(spec)})
            if spec.kind == "batchnorm":
                means[i] = data[f"layer{i}.running_mean"].copy()
                vars_[i] = data[f"layer{i}.running_var"].copy()
    return Network(layers, params, means, vars_, meta["bn_momentum"], meta["bn_eps"])
