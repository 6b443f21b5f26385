"""Run orchestration: config, trainer, statistics, scaling sweeps, CLI."""

from .bench import bench_allreduce, bench_kernels, bench_pipeline
from .config import DataConfig, RunConfig
from .scaling import ScalePoint, lag_throughput, scaling_csv, weak_scaling
from .staging_run import StageOutcome, stage_and_verify
from .stats import StepRecord, SustainedStats, sustained_stats
from .trainer import (GradReducer, TrainingError, TrainResult, evaluate,
                      model_flops_per_sample, param_digest, train_run,
                      validation_set)

__all__ = [
    "DataConfig", "GradReducer", "RunConfig", "ScalePoint", "StageOutcome",
    "StepRecord", "SustainedStats", "TrainResult", "TrainingError",
    "bench_allreduce", "bench_kernels", "bench_pipeline", "evaluate",
    "lag_throughput", "model_flops_per_sample", "param_digest",
    "scaling_csv", "stage_and_verify", "sustained_stats", "train_run",
    "validation_set", "weak_scaling",
]
