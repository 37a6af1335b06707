"""Source pretraining, online evaluation runs and the ablation suites."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from ..baselines import (
    MethodKind,
    bn_adapt_forward,
    dss_fixed_threshold_step,
    mean_teacher_all_step,
    source_only_step,
    tent_step,
)
from ..dss import ModelPair, adapt_step, init_threshold_for_domain
from ..neuralcore import (
    Network,
    backward,
    forward,
    init_network,
    mlp_layers,
    optimizer_step,
    soft_cross_entropy,
)
from ..streamgen import DatasetSpec, LabeledBatch, StreamSpec, generate_clean, make_rng, make_stream
from .config import ExperimentConfig, fingerprint

log = logging.getLogger(__name__)

MAX_SOURCE_ERROR = 20.0


class PretrainError(RuntimeError):
    pass


class RunError(RuntimeError):
    """A run aborted mid-stream; ``partial`` holds what was scored so far."""

    def __init__(self, message: str, partial: "RunResult") -> None:
        super().__init__(message)
        self.partial = partial


@dataclass
class TraceRecord:
    domain_index: int
    batch_index: int
    pi: float | None
    mean_max_confidence: float
    n_high: int
    n_low: int


@dataclass
class DomainResult:
    domain_index: int
    corruption: str
    severity: int
    n_samples: int
    error_rate: float


@dataclass
class RunResult:
    experiment_id: str
    method: str
    domains: list[DomainResult]
    mean_error: float
    threshold_trace: list[TraceRecord]
    config_fingerprint: str
    valid: bool = True
    wall_time: float = 0.0

    @property
    def per_domain_error(self) -> list[float]:
        return [d.error_rate for d in self.domains]


# ---------------------------------------------------------------------------
# pretraining


def error_rate(predictions: np.ndarray, labels: np.ndarray) -> float:
    if labels.size == 0:
        return 0.0
    return 100.0 * float(np.count_nonzero(predictions != labels)) / labels.size


def evaluate(net: Network, data: LabeledBatch) -> float:
    return error_rate(source_only_step(net, data.features), data.labels)


@lru_cache(maxsize=32)
def _pretrain_cached(
    dataset: DatasetSpec, hidden: tuple[int, ...], epochs: int, lr: float, batch_size: int, seed: int
) -> tuple[Network, float]:
    train, test = generate_clean(dataset)
    C = dataset.num_classes
    net = init_network(mlp_layers(dataset.input_dim, C, hidden), make_rng(seed, 10))
    rng = make_rng(seed, 11)
    onehot = np.eye(C)[train.labels]
    for _ in range(epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            if idx.size < 2:
                continue
            probs, cache = forward(net, train.features[idx], "train")
            _, g = soft_cross_entropy(probs, onehot[idx])
            net = optimizer_step(net, backward(net, cache, probs, g), lr)
    return net, evaluate(net, test)


def pretrain_source(cfg: ExperimentConfig, check: bool = True) -> tuple[Network, float]:
    """Train the source MLP on clean data; returns (network, clean-test error %).

    Results are memoized per process, and a copy is handed out each time.
    """
    net, err = _pretrain_cached(
        cfg.dataset, cfg.hidden, cfg.pretrain_epochs, cfg.pretrain_lr, cfg.pretrain_batch_size, cfg.seed
    )
    if check and cfg.pretrain_epochs > 0 and err > MAX_SOURCE_ERROR:
        raise PretrainError(f"source model did not converge: clean-test error {err:.2f}%")
    log.info("source model clean-test error %.3f%%", err)
    return net.copy(), err


# ---------------------------------------------------------------------------
# online runs


def batch_seed(seed: int, domain_index: int, batch_index: int) -> int:
    return int(make_rng(seed, 7, domain_index, batch_index).integers(0, 2**63))


StepFn = Callable[[np.ndarray, int, int], tuple[np.ndarray, TraceRecord]]


def _make_stepper(cfg: ExperimentConfig, source: Network) -> tuple[StepFn, Callable[[int], None]]:
    """Method-specific closure over the adapting state.

    Returns (step(batch, domain_index, batch_index) -> (predictions, trace),
    start_domain(domain_index)).
    """
    method = cfg.method
    C = cfg.dataset.num_classes
    box: dict = {"net": source.copy(), "pair": ModelPair.from_source(source), "state": None}

    def start_domain(t: int) -> None:
        if method is MethodKind.DSS:
            prev = box["state"].pi if box["state"] is not None else None
            box["state"] = init_threshold_for_domain(prev, C, t)

    def plain_record(t: int, j: int, n: int, conf: float) -> TraceRecord:
        return TraceRecord(t, j, None, conf, n, 0)

    def step(x: np.ndarray, t: int, j: int) -> tuple[np.ndarray, TraceRecord]:
        seed = batch_seed(cfg.seed, t, j)
        n = x.shape[0]
        if method is MethodKind.SOURCE_ONLY:
            probs, _ = forward(box["net"], x, "eval")
            return probs.argmax(axis=1), plain_record(t, j, n, float(probs.max(axis=1).mean()))
        if method is MethodKind.BN_ADAPT:
            probs, box["net"] = bn_adapt_forward(box["net"], x)
            return probs.argmax(axis=1), plain_record(t, j, n, float(probs.max(axis=1).mean()))
        if method is MethodKind.TENT:
            preds, box["net"], probs = tent_step(box["net"], x, cfg.tent_lr)
            return preds, plain_record(t, j, n, float(probs.max(axis=1).mean()))
        if method is MethodKind.MEAN_TEACHER_ALL:
            res = mean_teacher_all_step(box["pair"], x, cfg.dss, seed)
        elif method is MethodKind.DSS_FIXED_THRESHOLD:
            res = dss_fixed_threshold_step(box["pair"], x, cfg.dss, cfg.fixed_pi, seed)
        else:
            res = adapt_step(box["pair"], box["state"], x, cfg.dss, seed)
            box["state"] = res.state
        box["pair"] = res.pair
        info = res.info
        rec = TraceRecord(t, j, info.pi, info.mean_max_confidence, int(info.split.high.size), int(info.split.low.size))
        return res.predictions, rec

    return step, start_domain


def run_experiment(cfg: ExperimentConfig, source: Network | None = None) -> RunResult:
    """Predict-then-adapt over the configured stream, scoring emitted predictions."""
    t0 = time.perf_counter()
    if source is None:
        source, _ = pretrain_source(cfg)
    _, clean_test = generate_clean(cfg.dataset)
    stream = make_stream(cfg.stream, clean_test)
    fp = fingerprint(cfg)
    exp_id = f"{cfg.method.value}-{fp[:12]}"
    step, start_domain = _make_stepper(cfg, source)

    wrong = np.zeros(len(cfg.stream.domains), dtype=np.int64)
    seen = np.zeros(len(cfg.stream.domains), dtype=np.int64)
    trace: list[TraceRecord] = []
    current = -1
    j = 0

    def result(valid: bool) -> RunResult:
        domains = []
        for t, dom in enumerate(cfg.stream.domains):
            err = 100.0 * wrong[t] / seen[t] if seen[t] else 0.0
            domains.append(DomainResult(t, dom.corruption.value, dom.severity, int(seen[t]), float(err)))
        scored = [d.error_rate for d in domains if d.n_samples]
        mean = float(np.mean(scored)) if scored else 0.0
        return RunResult(exp_id, cfg.method.value, domains, mean, trace, fp, valid, time.perf_counter() - t0)

    try:
        for t, batch in stream:
            if t != current:
                current, j = t, 0
                start_domain(t)
            preds, rec = step(batch.features, t, j)
            wrong[t] += int(np.count_nonzero(preds != batch.labels))
            seen[t] += len(batch)
            trace.append(rec)
            j += 1
    except Exception as exc:
        raise RunError(f"run {exp_id} aborted in domain {current}, batch {j}: {exc}", result(False)) from exc
    return result(True)


# ---------------------------------------------------------------------------
# ablation suites


@dataclass
class AblationReport:
    name: str
    base_fingerprint: str
    rows: dict[str, RunResult] = field(default_factory=dict)
    # label -> param value for sweep-style reports
    params: dict[str, float] = field(default_factory=dict)


def _suite(name: str, base: ExperimentConfig, variants: Sequence[tuple[str, ExperimentConfig, float | None]]) -> AblationReport:
    source, _ = pretrain_source(base)
    report = AblationReport(name, fingerprint(base))
    for label, cfg, param in variants:
        res = run_experiment(cfg, source)
        res.experiment_id = label
        report.rows[label] = res
        if param is not None:
            report.params[label] = param
    return report


COMPONENT_LADDER = ("mean_teacher_all", "DT", "DT&PL", "DT&PL&NL")


def component_variants(cfg: ExperimentConfig) -> list[tuple[str, ExperimentConfig]]:
    return [
        ("mean_teacher_all", cfg.with_method(MethodKind.MEAN_TEACHER_ALL)),
        ("DT", cfg.with_method(MethodKind.DSS, use_sharpening=False, use_negative=False)),
        ("DT&PL", cfg.with_method(MethodKind.DSS, use_sharpening=True, use_negative=False)),
        ("DT&PL&NL", cfg.with_method(MethodKind.DSS, use_sharpening=True, use_negative=True)),
    ]


def ablation_components(cfg: ExperimentConfig) -> AblationReport:
    return _suite("components", cfg, [(label, c, None) for label, c in component_variants(cfg)])


def ablation_threshold(cfg: ExperimentConfig, fixed_pi_values: Sequence[float] = (0.2, 0.5, 0.8)) -> AblationReport:
    variants = [
        (f"fixed_pi={pi:g}", replace(cfg.with_method(MethodKind.DSS_FIXED_THRESHOLD), fixed_pi=float(pi)), float(pi))
        for pi in fixed_pi_values
    ]
    variants.append(("dynamic", cfg.with_method(MethodKind.DSS), None))
    return _suite("threshold", cfg, variants)


def sweep_temperature(cfg: ExperimentConfig, tp_values: Sequence[float] = (0.2, 0.4, 0.6, 0.8, 1.0)) -> AblationReport:
    variants = [(f"tp={tp:g}", cfg.with_method(MethodKind.DSS, tp=float(tp)), float(tp)) for tp in tp_values]
    return _suite("temperature", cfg, variants)


@dataclass
class SequenceReport:
    orders: list[list[int]]
    runs: dict[str, list[RunResult]]

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """method -> (mean, sample stddev) of per-order mean errors."""
        out = {}
        for method, runs in self.runs.items():
            vals = np.array([r.mean_error for r in runs])
            out[method] = (float(vals.mean()), float(vals.std(ddof=1)))
        return out


def domain_orders(n_domains: int, n_orders: int, seed: int) -> list[list[int]]:
    rng = make_rng(seed, 8)
    return [[int(i) for i in rng.permutation(n_domains)] for _ in range(n_orders)]


def sweep_sequences(
    cfg: ExperimentConfig,
    n_orders: int = 10,
    methods: Sequence[MethodKind | str] = (MethodKind.MEAN_TEACHER_ALL, MethodKind.DSS),
) -> SequenceReport:
    if n_orders < 2:
        raise ValueError("n_orders must be >= 2")
    source, _ = pretrain_source(cfg)
    orders = domain_orders(len(cfg.stream.domains), n_orders, cfg.seed)
    runs: dict[str, list[RunResult]] = {}
    for m in methods:
        m = MethodKind(m)
        runs[m.value] = []
        for k, order in enumerate(orders):
            stream = StreamSpec(tuple(cfg.stream.domains[i] for i in order), cfg.stream.batch_size, cfg.stream.seed)
            res = run_experiment(replace(cfg.with_method(m), stream=stream), source)
            res.experiment_id = f"{m.value}-order{k}"
            runs[m.value].append(res)
    return SequenceReport(orders, runs)
