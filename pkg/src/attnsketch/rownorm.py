"""Preprocess/query data structure for attention normalization factors.

Preprocessing samples landmark points of the stacked query/key kernel,
factors the sampled Gram into a whitener, and runs the matrix-vector mean
estimator once against the key-side factor rows. Each query then
reconstructs one query-side factor row from s kernel evaluations and takes
an inner product with the estimated mean, costing O(s * (s + d)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg, nystrom, qsim
from .errors import StateError
from .linalg import WeightedSampleSet


@dataclass
class RowNormSketch:
    """State built by :func:`preprocess`.

    Holds the weighted landmark sample over the 2n-point dataset, the
    whitener (sampled Gram inverse square root), and the estimated mean
    vector. The dataset rows and sampled points are cached so queries only
    pay kernel evaluations; factor rows are recomputed per query rather than
    stored, keeping the sketch itself O(s^2 + s d).
    """

    s: int
    sample: WeightedSampleSet
    whitener: np.ndarray
    mu_tilde: np.ndarray
    inst: "object"
    lam: float
    epsilon: float
    ledger: qsim.CostLedger
    dataset: np.ndarray
    sampled_points: np.ndarray
    gram: np.ndarray
    dense_factors: tuple | None = None

    @property
    def n(self) -> int:
        return self.inst.n


def default_nystrom_config(lam: float, n: int, seed: int = 0) -> nystrom.NystromConfig:
    """Sampler configuration with failure probability 1/(n^3 + 2)."""
    return nystrom.NystromConfig(lam=lam, delta=1.0 / (n**3 + 2), seed=seed)


def preprocess(inst, lam: float, epsilon: float, cfg: qsim.MeanEstimatorConfig,
               ledger: qsim.CostLedger, rng: np.random.Generator, *,
               nystrom_cfg: nystrom.NystromConfig | None = None,
               sample: WeightedSampleSet | None = None,
               s_lambda: float | None = None,
               keep_dense: bool = False) -> RowNormSketch:
    """Build the normalization-factor sketch for a scaled instance.

    When ``sample`` is given (e.g. the full unit-weight set, or a sample
    shared with a larger sketch) the landmark sampling step is skipped.
    ``keep_dense`` additionally materializes both factor blocks for tests.
    """
    if not inst.scaled:
        raise StateError("instance must be scaled first")
    n = inst.n
    access = qsim.RowAccess(inst, ledger)
    dataset = access.dataset_rows(np.arange(2 * n, dtype=np.int64))
    kernel = qsim.ExpKernel(ledger)

    if sample is None:
        ncfg = nystrom_cfg or default_nystrom_config(lam, n, seed=0)
        sample = nystrom.qnystrom_kernel(dataset, kernel, ncfg, ledger, rng,
                                         s_lambda=s_lambda)

    pts = dataset[sample.indices]
    gram = kernel.block(pts, pts) * np.outer(sample.weights, sample.weights)
    whitener = linalg.psd_inv_sqrt(gram)

    def key_factor_rows(idx: np.ndarray) -> np.ndarray:
        kvals = kernel.block(dataset[np.asarray(idx, dtype=np.int64) + n], pts)
        return (kvals * sample.weights[None, :]) @ whitener

    mu_tilde = qsim.qmatvec(key_factor_rows, n, np.ones(n), cfg, ledger,
                            name="rownorm.qmatvec")

    sk = RowNormSketch(s=sample.size, sample=sample, whitener=whitener,
                       mu_tilde=mu_tilde, inst=inst, lam=lam, epsilon=epsilon,
                       ledger=ledger, dataset=dataset, sampled_points=pts, gram=gram)
    if keep_dense:
        kernel_free = qsim.ExpKernel(None)
        u1 = (kernel_free.block(dataset[:n], pts) * sample.weights[None, :]) @ whitener
        u2 = key_factor_rows(np.arange(n, dtype=np.int64))
        sk.dense_factors = (u1, u2)
    return sk


def query_factor_row(sk: RowNormSketch, i: int) -> np.ndarray:
    """Query-side factor row for index i, recomputed from s kernel evals."""
    kernel = qsim.ExpKernel(sk.ledger)
    point = qsim.RowAccess(sk.inst, sk.ledger).dataset_rows(np.array([i], dtype=np.int64))
    kvals = kernel.block(point, sk.sampled_points)[0] * sk.sample.weights
    return sk.whitener @ kvals


def query(sk: RowNormSketch, i: int) -> float:
    """Approximate normalization factor for row i.

    Deterministic given a built sketch; per-query classical work is
    O(s * (s + d)).
    """
    if not (0 <= i < sk.n):
        raise IndexError(f"row index {i} out of range for n={sk.n}")
    return float(query_factor_row(sk, i) @ sk.mu_tilde)


def query_all(sk: RowNormSketch) -> np.ndarray:
    """All n normalization factors at once (vectorized convenience)."""
    kernel = qsim.ExpKernel(sk.ledger)
    pts = qsim.RowAccess(sk.inst, sk.ledger).dataset_rows(np.arange(sk.n, dtype=np.int64))
    rows = (kernel.block(pts, sk.sampled_points) * sk.sample.weights[None, :]) @ sk.whitener
    return rows @ sk.mu_tilde


def energy_transfer_check(u1: np.ndarray, u2: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Evaluate both sides of the factor-transfer inequality
    ||U1 x||_2 <= ||x||_{(U2^T U2)^+} * ||U1 U2^T|| for property tests."""
    u1 = linalg.as_matrix(u1, "U1")
    u2 = linalg.as_matrix(u2, "U2")
    xv = linalg.as_vector(x, "x")
    lhs = float(np.linalg.norm(u1 @ xv))
    cross_norm = linalg.norms(u1 @ u2.T).spectral
    rhs = linalg.pinv_energy_norm(xv, u2.T @ u2) * cross_norm
    return lhs, rhs


def suggested_epsilon(spectral_norm_a: float, lam: float, n: int) -> float:
    """Accuracy at which the estimation error matches the lam * sqrt(n)
    kernel-compression error: eps = lam * sqrt(n) / ||A||. Exposed as a
    helper, never auto-applied."""
    if spectral_norm_a <= 0.0:
        raise ValueError("spectral norm must be positive")
    return lam * math.sqrt(n) / spectral_norm_a
