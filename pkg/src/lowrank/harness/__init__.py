"""Experiment harness: configs, trials, sweeps, CSV output and the CLI."""

from .config import ExperimentConfig, config_from_dict, dumps_config, load_config, loads_config
from .sweeps import (
    SweepResult,
    certification_sweep,
    is_monotone,
    linear_fit,
    noise_sweep,
    phase_transition_sweep,
    read_csv,
    run_cells,
    summarize,
    transition_location,
    wilson_interval,
    write_csv,
)
from .trials import TrialRecord, run_trial
