"""Recursive generalized ridge-leverage-score sampling for kernel Nystrom
approximation.

The sampler works on a halving chain of uniform subsets: starting from a
seed subset of roughly the target size, each level scores all candidate
points against the previous level's weighted sample (a regularized Schur
complement per point), converts scores to inclusion probabilities, and draws
the next weighted sample with the Bernoulli sampler. The final sample over
the full dataset defines the Nystrom compression used downstream.

Also provides the two-sided spectral gap check against a regularized target
and dense extraction of the query/key factor blocks of the compressed kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg, oracle, qsim
from .errors import ParameterError, SampleExplosionError
from .linalg import WeightedSampleSet


@dataclass(frozen=True)
class NystromConfig:
    """Knobs for the recursive sampler.

    ``sample_cap_factor`` multiplies the statistical-dimension-based target
    size; ``oversample_q_constant`` and ``q_scale_constant`` are the score
    oversampling and scale constants of the per-level inclusion probabilities
    p_i = min(1, oversample * q_i * ln(2 s / delta)) with
    q_i = (q_scale / lam) * (K(x_i, x_i) - correction).
    """

    lam: float
    delta: float
    sample_cap_factor: float = 4.0
    oversample_q_constant: float = 16.0
    q_scale_constant: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0.0:
            raise ParameterError(f"lam must be positive, got {self.lam!r}")
        if not (0.0 < self.delta < 1.0):
            raise ParameterError(f"delta must be in (0, 1), got {self.delta!r}")
        if min(self.sample_cap_factor, self.oversample_q_constant, self.q_scale_constant) <= 0.0:
            raise ParameterError("all sampler constants must be positive")


@dataclass(frozen=True)
class SampleChain:
    """The halving subset chain and the weighted sample drawn at each level."""

    levels: list
    final: WeightedSampleSet


def target_sample_size(cfg: NystromConfig, s_lambda: float) -> int:
    """Sample size target ceil(cap * s_lambda * ln(s_lambda / delta + 2))."""
    s_lambda = max(float(s_lambda), 0.0)
    return max(1, math.ceil(cfg.sample_cap_factor * s_lambda * math.log(s_lambda / cfg.delta + 2.0)))


def exact_statistical_dimension(dataset: np.ndarray) -> "callable":
    """Uncounted oracle computing s_lambda of the exponential kernel Gram of
    a dataset; stands in for a known input parameter at desk scale."""
    x = linalg.as_matrix(dataset, "dataset")
    e = linalg.guarded_exp(x @ x.T)
    return lambda lam: linalg.statistical_dimension(e, lam)


def _weighted_gram(kernel, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    g = kernel.block(points, points)
    return g * np.outer(weights, weights)


def qnystrom_kernel(dataset: np.ndarray, kernel, cfg: NystromConfig, ledger: qsim.CostLedger,
                    rng: np.random.Generator, *, s_lambda: float | None = None,
                    return_chain: bool = False):
    """Draw a weighted sample whose Nystrom compression approximates the
    kernel Gram of ``dataset`` at regularization cfg.lam.

    ``kernel`` must expose vectorized ``block(Xa, Xb)`` and ``diag(X)``
    evaluations (e.g. qsim.ExpKernel); every evaluation it performs is charged
    to the ledger it was built with. ``s_lambda`` is the statistical dimension
    of the Gram; when omitted it is computed exactly from the dataset, which
    at deployment scale would instead be a supplied input (the computation is
    not charged).

    Returns the final WeightedSampleSet, or the full SampleChain when
    ``return_chain`` is set.
    """
    x = linalg.as_matrix(dataset, "dataset")
    n_points = x.shape[0]
    if n_points < 1:
        raise ParameterError("dataset must contain at least one point")
    if s_lambda is None:
        s_lambda = exact_statistical_dimension(x)(cfg.lam)
    size_target = target_sample_size(cfg, s_lambda)

    if size_target >= n_points:
        final = WeightedSampleSet.full(n_points)
        chain = SampleChain(levels=[(np.arange(n_points), final)], final=final)
        return chain if return_chain else final

    depth = max(1, math.ceil(math.log2(n_points / size_target)))
    subsets = [np.arange(n_points)]
    for _ in range(depth):
        cur = subsets[-1]
        half = math.ceil(cur.shape[0] / 2)
        subsets.append(np.sort(rng.choice(cur, size=half, replace=False)))
    subsets.reverse()  # subsets[t] is the level-t candidate set; last is [N]

    # Uniform halving gives each level-t member inclusion probability
    # 2^-(depth - t) relative to the full dataset, hence weight sqrt(2)^(depth - t).
    def chain_weight(level: int) -> float:
        return math.sqrt(2.0) ** (depth - level)

    sample_idx = subsets[0]
    sample_w = np.full(sample_idx.shape[0], chain_weight(0))
    level_set = WeightedSampleSet(n_points, sample_idx, sample_w)
    levels = [(subsets[0], level_set)]
    gram = _weighted_gram(kernel, x[sample_idx], sample_w)

    ln_over = math.log(2.0 * size_target / cfg.delta)
    cap = cfg.sample_cap_factor * size_target * 8

    for t in range(1, depth + 1):
        candidates = subsets[t]
        if sample_idx.shape[0]:
            chol = np.linalg.cholesky(gram + cfg.lam * np.eye(gram.shape[0]))
            cross = kernel.block(x[candidates], x[sample_idx]) * sample_w[None, :]
            solved = np.linalg.solve(chol, cross.T)
            correction = np.einsum("ij,ij->j", solved, solved)
        else:
            correction = np.zeros(candidates.shape[0])
        kdiag = kernel.diag(x[candidates])
        q = (cfg.q_scale_constant / cfg.lam) * (kdiag - correction)
        qmin = float(q.min()) if q.size else 0.0
        if qmin < -1e-9 * max(1.0, float(q.max()) if q.size else 1.0):
            raise RuntimeError(f"negative ridge score residual {qmin:.3g} beyond tolerance")
        q = np.maximum(q, 0.0)
        p = np.minimum(1.0, cfg.oversample_q_constant * ln_over * q)

        drawn = None
        for _attempt in range(2):
            drawn = qsim.qsample(lambda idx: p[idx], candidates.shape[0], rng, ledger,
                                 name="nystrom.qsample")
            if drawn.size <= cap:
                break
            drawn = None
        if drawn is None:
            raise SampleExplosionError(
                f"level {t} sample exceeded {cap} twice (target {size_target})"
            )

        sample_idx = candidates[drawn.indices]
        sample_w = chain_weight(t) * drawn.weights
        level_set = WeightedSampleSet(n_points, sample_idx, sample_w)
        levels.append((candidates, level_set))
        gram = _weighted_gram(kernel, x[sample_idx], sample_w)

    final = levels[-1][1]
    chain = SampleChain(levels=levels, final=final)
    return chain if return_chain else final


@dataclass(frozen=True)
class SandwichReport:
    ok: bool
    min_eig_lower: float
    min_eig_upper: float


def sandwich_check(e, sample: WeightedSampleSet, lam: float, tol: float) -> SandwichReport:
    """One-sided PSD gaps of the Nystrom compression against E and E + lam I.

    ``min_eig_lower`` is the smallest eigenvalue of (compressed - E) and
    ``min_eig_upper`` that of (E + lam I - compressed); ``ok`` requires both
    to be at least -tol * ||E||. Plain Nystrom compression sits below E, so
    the lower gap is generally negative and tests assert the achievable
    direction (compressed below E) together with the size of the gap instead.
    """
    em = linalg.as_matrix(e, "E")
    approx = oracle.nystrom_explicit(em, sample)
    scale = float(np.abs(np.linalg.eigvalsh(em)).max()) if em.size else 0.0
    lower = float(np.linalg.eigvalsh(approx - em).min())
    upper = float(np.linalg.eigvalsh(em + lam * np.eye(em.shape[0]) - approx).min())
    ok = lower >= -tol * scale and upper >= -tol * scale
    return SandwichReport(ok=ok, min_eig_lower=lower, min_eig_upper=upper)


@dataclass(frozen=True)
class AttentionBlocks:
    """Dense query/key blocks U1, U2 of the compressed-kernel factor, with
    the whitener (sampled Gram inverse square root) that produced them.

    The compressed attention block is U1 @ U2.T. ``query_row``/``key_row``
    recompute single rows the way a cost-faithful path would.
    """

    u1: np.ndarray
    u2: np.ndarray
    whitener: np.ndarray
    sampled_points: np.ndarray
    sample: WeightedSampleSet

    def tilde_a(self) -> np.ndarray:
        return self.u1 @ self.u2.T

    def _row(self, point: np.ndarray) -> np.ndarray:
        kvals = linalg.guarded_exp(self.sampled_points @ point) * self.sample.weights
        return self.whitener @ kvals

    def query_row(self, inst, i: int) -> np.ndarray:
        return self._row(inst.Q[i])

    def key_row(self, inst, j: int) -> np.ndarray:
        return self._row(inst.K[j])


def extract_attention_block(sample: WeightedSampleSet, inst,
                            rel_tol: float = linalg.DEFAULT_REL_TOL) -> AttentionBlocks:
    """Build the dense factor blocks U1 (queries) and U2 (keys) for a sample
    drawn over the stacked query/key dataset. Desk-scale and uncharged."""
    x = inst.dataset()
    if sample.source_size != x.shape[0]:
        raise ParameterError(
            f"sample is over {sample.source_size} points, instance has {x.shape[0]}"
        )
    pts = x[sample.indices]
    if sample.size == 0:
        z = np.zeros((inst.n, 0))
        return AttentionBlocks(u1=z, u2=z.copy(), whitener=np.zeros((0, 0)),
                               sampled_points=pts, sample=sample)
    gram = linalg.guarded_exp(pts @ pts.T) * np.outer(sample.weights, sample.weights)
    whitener = linalg.psd_inv_sqrt(gram, rel_tol)
    u1 = (linalg.guarded_exp(inst.Q @ pts.T) * sample.weights[None, :]) @ whitener
    u2 = (linalg.guarded_exp(inst.K @ pts.T) * sample.weights[None, :]) @ whitener
    return AttentionBlocks(u1=u1, u2=u2, whitener=whitener,
                           sampled_points=pts, sample=sample)
