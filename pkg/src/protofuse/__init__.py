"""Interpretable multimodal prototype fusion of histology patch embeddings
and grouped genomic profiles, with feature-space imputation of missing
genomics."""

from .config import FillStrategy, TrainConfig, load_config
from .data_model import (
    Cohort,
    GenomicProfile,
    MissingMode,
    MissingnessSpec,
    PatientRecord,
    SlideBag,
    apply_missingness,
    generate_synthetic,
    load_cohort,
    split_folds,
    write_cohort,
)
from .errors import ProtoFuseError
from .evaluation import evaluate, missingness_sweep
from .model import ProtoFuseModel
from .tasks import MetricsReport, Task
from .training import ModelState, train

__version__ = "0.1.0"

__all__ = [
    "Cohort",
    "FillStrategy",
    "GenomicProfile",
    "MetricsReport",
    "MissingMode",
    "MissingnessSpec",
    "ModelState",
    "PatientRecord",
    "ProtoFuseError",
    "ProtoFuseModel",
    "SlideBag",
    "Task",
    "TrainConfig",
    "apply_missingness",
    "evaluate",
    "generate_synthetic",
    "load_cohort",
    "load_config",
    "missingness_sweep",
    "split_folds",
    "train",
    "write_cohort",
]
