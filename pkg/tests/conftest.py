from dataclasses import replace
from pathlib import Path

import pytest

from dss_tta.harness.config import ExperimentConfig, load_config
from dss_tta.streamgen import DatasetSpec, DomainSpec, StreamSpec

REPO = Path(__file__).resolve().parent.parent
BENCHMARK = REPO / "configs" / "benchmark.yaml"


def small_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """A 4-class, 8-dim problem with three short domains; runs in well under a second."""
    domains = (
        DomainSpec("identity", 1, 150),
        DomainSpec("gaussian_noise", 5, 130),
        DomainSpec("contrast_scale", 4, 97),
    )
    cfg = ExperimentConfig(
        dataset=DatasetSpec(num_classes=4, input_dim=8, samples_per_class=120),
        stream=StreamSpec(domains, batch_size=32),
        hidden=(16, 16),
        pretrain_epochs=20,
    )
    return replace(cfg, **overrides).with_seed(seed)


def benchmark_config(seed: int = 0) -> ExperimentConfig:
    return load_config(BENCHMARK).with_seed(seed)


@pytest.fixture
def small():
    return small_config()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
