"""Benchmark CLI: sweep drivers, result tables, pool sizing helper."""

from .runners import (
    BenchConfig,
    BenchError,
    HugepoolReport,
    run_allreduce,
    run_halo,
    run_hugepool,
    run_model,
)
from .tables import CSV_COLUMNS, BenchRow, RowSink, TimingBreakdown

__all__ = [
    "BenchConfig",
    "BenchError",
    "BenchRow",
    "CSV_COLUMNS",
    "HugepoolReport",
    "RowSink",
    "TimingBreakdown",
    "run_allreduce",
    "run_halo",
    "run_hugepool",
    "run_model",
]
