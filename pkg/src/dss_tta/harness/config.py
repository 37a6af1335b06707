"""Experiment configuration and its YAML / fingerprint forms."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from ..baselines import MethodKind
from ..dss import DssConfig
from ..neuralcore import LayerSpec, mlp_layers
from ..streamgen import AugmentationSpec, DatasetSpec, DomainSpec, StreamSpec, default_domains


class ConfigError(ValueError):
    pass


def default_stream() -> StreamSpec:
    return StreamSpec(tuple(default_domains(2000)), batch_size=64, seed=0)


@dataclass(frozen=True)
class ExperimentConfig:
    method: MethodKind = MethodKind.DSS
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    stream: StreamSpec = field(default_factory=default_stream)
    hidden: tuple[int, ...] = (64, 64)
    dss: DssConfig = field(default_factory=DssConfig)
    # used only by dss_fixed_threshold
    fixed_pi: float = 0.2
    tent_lr: float = 1e-3
    pretrain_epochs: int = 50
    pretrain_lr: float = 0.05
    pretrain_batch_size: int = 64
    seed: int = 0
    # where results go; not part of the fingerprint
    output_dir: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", MethodKind(self.method))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")

    @property
    def layers(self) -> list[LayerSpec]:
        return mlp_layers(self.dataset.input_dim, self.dataset.num_classes, self.hidden)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Same experiment under a different seed for data, stream and adaptation."""
        return replace(
            self,
            seed=seed,
            dataset=replace(self.dataset, seed=seed),
            stream=replace(self.stream, seed=seed),
        )

    def with_method(self, method: MethodKind | str, **dss_overrides: Any) -> "ExperimentConfig":
        dss = replace(self.dss, **dss_overrides) if dss_overrides else self.dss
        return replace(self, method=MethodKind(method), dss=dss)


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.value
    return obj


def config_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    return _plain(cfg)


def _build(cls: type, data: dict[str, Any] | None, base: Any) -> Any:
    if data is None:
        return base
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return replace(base, **data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    data = dict(data or {})
    base = ExperimentConfig()
    try:
        dataset = _build(DatasetSpec, data.pop("dataset", None), base.dataset)
        stream_data = data.pop("stream", None)
        stream = base.stream
        if stream_data is not None:
            stream_data = dict(stream_data)
            if "domains" in stream_data:
                stream_data["domains"] = tuple(DomainSpec(**d) for d in stream_data["domains"])
            stream = _build(StreamSpec, stream_data, base.stream)
        dss_data = data.pop("dss", None)
        dss = base.dss
        if dss_data is not None:
            dss_data = dict(dss_data)
            if "aug" in dss_data:
                dss_data["aug"] = _build(AugmentationSpec, dss_data["aug"], base.dss.aug)
            dss = _build(DssConfig, dss_data, base.dss)
        cfg = _build(ExperimentConfig, data, base)
        return replace(cfg, dataset=dataset, stream=stream, dss=dss)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def fingerprint(cfg: ExperimentConfig) -> str:
    d = config_to_dict(cfg)
    d.pop("output_dir")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()
