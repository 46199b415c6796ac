"""Scenario configuration, execution, persistence and plotting."""

from gpmpc.harness.config import ScenarioConfig, parse_config_text, validate_config
from gpmpc.harness.persist import (
    SCHEMA_VERSION,
    csv_to_columns,
    load_models,
    read_dataset_csv,
    save_models,
    write_dataset_csv,
    write_manifest,
)
from gpmpc.harness.runner import (
    RunResult,
    TrainResult,
    compare_runs,
    export_plots,
    run_scenario,
    train_phase,
    write_run,
)

__all__ = [
    "RunResult",
    "SCHEMA_VERSION",
    "ScenarioConfig",
    "TrainResult",
    "compare_runs",
    "csv_to_columns",
    "export_plots",
    "load_models",
    "parse_config_text",
    "read_dataset_csv",
    "run_scenario",
    "save_models",
    "train_phase",
    "validate_config",
    "write_dataset_csv",
    "write_manifest",
    "write_run",
]
