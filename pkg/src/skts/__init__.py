"""Sparse Kalman tree search: recovery of simultaneously sparse signal
sequences with slowly varying amplitudes."""

from .baselines import conventional_ks, omp_block, omp_per_snapshot, oracle_ks
from .em import SktsConfig, greedy_tree_search, q_score, run_skts
from .kalman import batch_lmmse_oracle, forward_filter, kalman_smoother, log_likelihood
from .model import (
    EmStatistics,
    MeasurementBlock,
    PosteriorStats,
    SignalEstimate,
    StateSpaceModel,
    SupportVector,
    validate_model,
)
from .realtime import RtConfig, RtState, rt_step, run_rt_skts

__all__ = [
    "EmStatistics",
    "MeasurementBlock",
    "PosteriorStats",
    "RtConfig",
    "RtState",
    "SignalEstimate",
    "SktsConfig",
    "StateSpaceModel",
    "SupportVector",
    "batch_lmmse_oracle",
    "conventional_ks",
    "forward_filter",
    "greedy_tree_search",
    "kalman_smoother",
    "log_likelihood",
    "omp_block",
    "omp_per_snapshot",
    "oracle_ks",
    "q_score",
    "rt_step",
    "run_rt_skts",
    "run_skts",
    "validate_model",
]
