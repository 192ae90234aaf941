"""Desk-scale classical simulator of a sublinear quantum attention pipeline:
kernel Nystrom compression via recursive ridge-score sampling, mean-estimated
normalization factors, leverage-score value sampling, and an end-to-end
attention row-query data structure, all checked against exact oracles and
charged to a modeled query-cost ledger."""

from . import amm, cli, generate, linalg, matio, metrics, nystrom, oracle, qattention, qsim, rownorm
from .errors import (DegenerateNormalizerError, EstimationError, KernelOverflowError,
                     MatrixFileError, ParameterError, SampleExplosionError, ShapeError,
                     StateError)
from .generate import ExperimentConfig, GeneratorSpec
from .linalg import SpectrumSummary, WeightedSampleSet
from .nystrom import NystromConfig
from .oracle import AttentionInstance
from .qsim import CostLedger, MeanEstimatorConfig

__version__ = "0.1.0"

__all__ = [
    "AttentionInstance",
    "CostLedger",
    "DegenerateNormalizerError",
    "EstimationError",
    "ExperimentConfig",
    "GeneratorSpec",
    "KernelOverflowError",
    "MatrixFileError",
    "MeanEstimatorConfig",
    "NystromConfig",
    "ParameterError",
    "SampleExplosionError",
    "ShapeError",
    "SpectrumSummary",
    "StateError",
    "WeightedSampleSet",
    "amm",
    "cli",
    "generate",
    "linalg",
    "matio",
    "metrics",
    "nystrom",
    "oracle",
    "qattention",
    "qsim",
    "rownorm",
]
