from .config import ConfigError, ExperimentConfig, config_from_dict, fingerprint, load_config
from .runner import (
    AblationReport,
    RunResult,
    SequenceReport,
    TraceRecord,
    ablation_components,
    ablation_threshold,
    pretrain_source,
    run_experiment,
    sweep_sequences,
    sweep_temperature,
)
