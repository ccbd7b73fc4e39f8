"""Benchmark harness: datasets, splits, experiments and reporting."""

from .data import Dataset, from_matrices, lhd_sample, load_dataset, save_dataset, split, synth_generate
from .experiment import (
    ExperimentConfig,
    PairedTest,
    ResultRow,
    ResultTable,
    confidence_half_width,
    paired_comparison,
    run_experiment,
)

__all__ = [
    "Dataset",
    "ExperimentConfig",
    "PairedTest",
    "ResultRow",
    "ResultTable",
    "confidence_half_width",
    "from_matrices",
    "lhd_sample",
    "load_dataset",
    "paired_comparison",
    "run_experiment",
    "save_dataset",
    "split",
    "synth_generate",
]
