"""Multi-task causal self-attention generator for day-level wearable activity data."""

__version__ = "0.1.0"

from .cohort import CohortConfig, simulate_cohort
from .data import (
    DayRecord, IndividualSeries, ScalerBinSpec, WindowBatch, aggregate_days, dequantize,
    filter_and_impute, fit_scaler, make_windows, quantize,
)
from .estimator import ActivityBinner, ActivityTransformer
from .evaluation import cosine_similarity, dtw_distance, pairwise_stats
from .generate import GenerationConfig, generate
from .model import ModelConfig, backward, forward, init_params
from .train import TrainConfig, train

__all__ = [
    "ActivityBinner", "ActivityTransformer", "CohortConfig", "DayRecord", "GenerationConfig",
    "IndividualSeries", "ModelConfig", "ScalerBinSpec", "TrainConfig", "WindowBatch",
    "aggregate_days", "backward", "cosine_similarity", "dequantize", "dtw_distance",
    "filter_and_impute", "fit_scaler", "forward", "generate", "init_params", "make_windows",
    "pairwise_stats", "quantize", "simulate_cohort", "train",
]
