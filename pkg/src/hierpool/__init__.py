"""
Multi-instance pooling for weakly labelled sound event detection: pooling
functions, hierarchical pooling, their gradients, a small numpy frame scorer,
a synthetic dataset and segment-based evaluation.
"""

from .errors import ConfigError, DatasetError, NumericalError
from .evaluation import PostProcessConfig, SegmentCounts, post_process, score
from .gradients import finite_difference_check, grad_hierarchical, grad_single
from .hierarchical import PoolingSpec, default_plan, pool_hierarchical, pool_with
from .model import TrainConfig, train
from .pooling import PoolingFunction, compute_weights, pool, pool_single
from .synth import Dataset, SynthConfig, generate, read_dataset, write_dataset

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DatasetError", "NumericalError",
    "PostProcessConfig", "SegmentCounts", "post_process", "score",
    "finite_difference_check", "grad_hierarchical", "grad_single",
    "PoolingSpec", "default_plan", "pool_hierarchical", "pool_with",
    "TrainConfig", "train",
    "PoolingFunction", "compute_weights", "pool", "pool_single",
    "Dataset", "SynthConfig", "generate", "read_dataset", "write_dataset",
]
