"""Gaussian-process regression for voxelized tensor inputs."""

from .errors import (
    ConditioningError,
    ConfigError,
    DimensionError,
    InitializationError,
    LoadError,
    ParameterError,
    TensorGPError,
)
from .fdr import BSplineBasis, FunctionalPrediction, build_basis, fit_coefficients, reconstruct
from .gp import GPModel, OptimizerConfig, fit, log_marginal_likelihood, mll_gradient, predict
from .kernels import FAMILIES, KernelHyperparams, KernelSpec, gram, make_kernel
from .metric import MetricParams, build_metric, factorize, imed_distance, transform
from .metrics import EvaluationReport, evaluate, main_lobe_mask, msll, rmse
from .tensor import DesignTensor, GridShape, canonical_index, stack, vectorize, voxel_coords

__version__ = "0.1.0"
