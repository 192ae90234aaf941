"""Leverage-score sampling of the value matrix and the Frobenius-norm
approximate-matrix-multiplication guarantee, parameterized by row distortion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg, qsim
from .errors import ParameterError
from .linalg import WeightedSampleSet

DEFAULT_C_AMM = 10.0


@dataclass(frozen=True)
class AmmSketch:
    """Leverage-score sample of V with the reweighted sampled rows
    materialized (s_V x d) and the row distortion used to size it."""

    sample: WeightedSampleSet
    v_tilde: np.ndarray
    alpha: float
    epsilon: float
    s_target: int


def build(v, epsilon: float, rng: np.random.Generator, ledger: qsim.CostLedger, *,
          c_amm: float = DEFAULT_C_AMM, alpha: float | None = None,
          s_target: int | None = None) -> AmmSketch:
    """Leverage-score sample of V sized for a Frobenius-norm product guarantee.

    The target size is ceil(c_amm * eps^-2 * alpha * ln(n + 2)) with alpha the
    row distortion of V (computed unless overridden); pass ``s_target`` to pin
    the size directly. Rows of V are read through the sampler, which charges
    the modeled query costs; the n classical row reads are charged here.
    """
    vm = linalg.as_matrix(v, "V")
    n = vm.shape[0]
    if not np.any(vm):
        raise ParameterError("V must be nonzero")
    if alpha is None:
        alpha = linalg.row_distortion(vm)
    if s_target is None:
        s_target = math.ceil(c_amm * alpha * math.log(n + 2.0) / epsilon**2)
    s_target = max(1, int(s_target))
    ledger.add_row_queries_v(n)
    sample = qsim.qleverage_score(lambda idx: vm[idx], n, s_target, rng, ledger,
                                  name="amm.qleverage_score")
    v_tilde = sample.weights[:, None] * vm[sample.indices]
    return AmmSketch(sample=sample, v_tilde=v_tilde, alpha=float(alpha),
                     epsilon=float(epsilon), s_target=s_target)


def product_estimate(v, b, sample: WeightedSampleSet) -> np.ndarray:
    """V^T S S^T B computed from the compact sample."""
    vm = linalg.as_matrix(v, "V")
    bm = linalg.as_matrix(b, "B")
    if vm.shape[0] != bm.shape[0] or sample.source_size != vm.shape[0]:
        raise ParameterError("V, B and the sample must share the row count")
    w2 = sample.weights**2
    return (vm[sample.indices] * w2[:, None]).T @ bm[sample.indices]


def amm_error(v, b, sample: WeightedSampleSet) -> float:
    """Normalized product error ||V^T S S^T B - V^T B||_F / (||V||_F ||B||_F)."""
    vm = linalg.as_matrix(v, "V")
    bm = linalg.as_matrix(b, "B")
    denom = np.linalg.norm(vm) * np.linalg.norm(bm)
    if denom == 0.0:
        raise ParameterError("V and B must both be nonzero")
    err = product_estimate(vm, bm, sample) - vm.T @ bm
    return float(np.linalg.norm(err) / denom)


def boosted_product(v, b, epsilon: float, rng: np.random.Generator,
                    ledger: qsim.CostLedger, copies: int = 5,
                    c_amm: float = DEFAULT_C_AMM) -> np.ndarray:
    """Entrywise median of independent sketched products, trading extra
    samples for exponentially better failure probability."""
    if copies < 1:
        raise ParameterError("copies must be >= 1")
    estimates = []
    for _ in range(copies):
        sk = build(v, epsilon, rng, ledger, c_amm=c_amm)
        estimates.append(product_estimate(v, b, sk.sample))
    return np.median(np.stack(estimates), axis=0)
