"""Toy-scale segmentation training used to compare loss stability."""

from .adam import AdamState, adam_step
from .data import Dataset, SyntheticTask, TaskConfigError, generate_task
from .harness import (
    CONVERGENCE_THRESHOLD,
    ConfigError,
    RunConfig,
    RunRecord,
    cdf_dominates,
    convergence_cdf,
    end_to_end_gradcheck,
    run_many,
    train_run,
)
from .net import TinyNet

__all__ = [
    "AdamState", "adam_step", "Dataset", "SyntheticTask", "TaskConfigError", "generate_task",
    "CONVERGENCE_THRESHOLD", "ConfigError", "RunConfig", "RunRecord", "cdf_dominates",
    "convergence_cdf", "end_to_end_gradcheck", "run_many", "train_run", "TinyNet",
]
