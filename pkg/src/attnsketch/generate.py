"""Synthetic instance generation and experiment configuration.

Generators produce already-scaled instances with row norms guarded so that
no kernel evaluation can overflow. The clustered generator exists to hold
the kernel's effective rank roughly constant while n grows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import matio, oracle
from .errors import ParameterError
from .qsim import MeanEstimatorConfig

GENERATOR_KINDS = ("gaussian", "clustered", "orthonormal_v", "from_files")

# Cap on scaled dataset row norms; keeps every inner product <= 64, far from
# the exp() overflow guard.
MAX_ROW_NORM = 8.0


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str = "gaussian"
    k: int = 8
    spread: float = 0.1
    paths: tuple = ()

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ParameterError(f"unknown generator {self.kind!r}")
        if self.kind == "clustered" and self.k < 1:
            raise ParameterError("clustered generator needs k >= 1")
        if self.kind == "from_files" and len(self.paths) != 3:
            raise ParameterError("from_files needs exactly three paths (Q, K, V)")


@dataclass(frozen=True)
class ExperimentConfig:
    n: int
    d: int
    lam: float
    epsilon: float
    seed: int = 0
    generator: GeneratorSpec = field(default_factory=GeneratorSpec)
    backend: MeanEstimatorConfig = field(default_factory=MeanEstimatorConfig)
    trials: int = 1

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ParameterError(f"need n >= 1 and d >= 1, got n={self.n}, d={self.d}")
        if self.lam <= 0.0 or self.epsilon <= 0.0:
            raise ParameterError("lam and epsilon must be positive")
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")

    def trial_seed(self, trial: int) -> int:
        return self.seed + trial


def _clamp_rows(m: np.ndarray, limit: float) -> np.ndarray:
    """Rescale any row whose norm exceeds the limit down onto it."""
    norms = np.linalg.norm(m, axis=1)
    scale = np.minimum(1.0, limit / np.maximum(norms, 1e-300))
    return m * scale[:, None]


def generate_raw(config: ExperimentConfig) -> oracle.AttentionInstance:
    """Build an unscaled instance for the configured generator; bit-identical
    for a fixed seed. Row norms of Q and K are clamped so that scaling lands
    them at <= MAX_ROW_NORM."""
    n, d = config.n, config.d
    rng = np.random.default_rng(config.seed)
    entry_std = d ** -0.25
    raw_limit = MAX_ROW_NORM * d**0.25

    kind = config.generator.kind
    if kind == "from_files":
        q, k, v = (matio.load_matrix(p) for p in config.generator.paths)
        return oracle.AttentionInstance(Q=q, K=k, V=v)

    if kind == "clustered":
        spec = config.generator
        centers = rng.normal(0.0, entry_std, size=(spec.k, d))
        assign = np.arange(n) % spec.k
        q = centers[assign] + spec.spread * rng.normal(0.0, entry_std, size=(n, d))
        k = centers[assign] + spec.spread * rng.normal(0.0, entry_std, size=(n, d))
    else:
        q = rng.normal(0.0, entry_std, size=(n, d))
        k = rng.normal(0.0, entry_std, size=(n, d))

    v = rng.normal(0.0, entry_std, size=(n, d))
    if kind == "orthonormal_v":
        basis, _ = np.linalg.qr(rng.normal(0.0, 1.0, size=(n, d)))
        v = basis[:, :d]

    return oracle.AttentionInstance(Q=_clamp_rows(q, raw_limit),
                                    K=_clamp_rows(k, raw_limit), V=v)


def generate(config: ExperimentConfig) -> oracle.AttentionInstance:
    """Scaled instance for the configured generator."""
    return oracle.scale_qk(generate_raw(config))


def with_size(config: ExperimentConfig, n: int) -> ExperimentConfig:
    return replace(config, n=n)
