"""End-to-end attention row-query data structure.

Preprocessing composes the three sampled parts: the normalization-factor
sketch, a leverage-score sample of V, and a landmark sample of the stacked
query/key kernel, then contracts them into a small s_E x d matrix. A row
query costs one normalization query plus s_E kernel evaluations.

By default the kernel landmark sample is shared between the normalization
sketch and the attention block (one sampling pass, tighter consistency); a
strict mode runs two independent sampling passes instead, for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import amm as amm_mod
from . import linalg, nystrom, oracle, qsim, rownorm
from .errors import DegenerateNormalizerError, ParameterError, ShapeError
from .linalg import WeightedSampleSet


@dataclass
class AttentionSketch:
    """State built by :func:`preprocess`.

    ``l_tilde`` is the contraction n_tilde @ v_tilde used by queries;
    m_tilde, r_tilde, n_tilde are kept for diagnostics and dense replay.
    """

    s_e: int
    s_v: int
    sample_e: WeightedSampleSet
    amm: amm_mod.AmmSketch
    m_tilde: np.ndarray
    r_tilde: np.ndarray
    n_tilde: np.ndarray
    l_tilde: np.ndarray
    rn: rownorm.RowNormSketch
    lam: float
    epsilon: float
    ledger: qsim.CostLedger
    sampled_points_e: np.ndarray

    @property
    def n(self) -> int:
        return self.rn.n


def preprocess(inst, lam: float, epsilon: float, cfg: qsim.MeanEstimatorConfig,
               rng: np.random.Generator, ledger: qsim.CostLedger, *,
               c_amm: float = amm_mod.DEFAULT_C_AMM,
               alpha_override: float | None = None,
               nystrom_cfg: nystrom.NystromConfig | None = None,
               s_lambda: float | None = None,
               strict_paper: bool = False,
               full_sampling: bool = False) -> AttentionSketch:
    """Build the attention row-query sketch for a scaled instance.

    ``full_sampling`` replaces both samples by the full unit-weight sets (the
    zero-approximation configuration). ``alpha_override`` substitutes the row
    distortion used to size the value sample; by default it is computed from
    V. ``strict_paper`` draws an independent kernel landmark sample for the
    attention block instead of reusing the normalization sketch's.
    """
    n = inst.n
    rn_sample = WeightedSampleSet.full(2 * n) if full_sampling else None
    rn = rownorm.preprocess(inst, lam, epsilon, cfg, ledger, rng,
                            nystrom_cfg=nystrom_cfg, sample=rn_sample,
                            s_lambda=s_lambda)
    kernel = qsim.ExpKernel(ledger)

    if strict_paper and not full_sampling:
        ncfg = nystrom_cfg or rownorm.default_nystrom_config(lam, n, seed=0)
        sample_e = nystrom.qnystrom_kernel(rn.dataset, kernel, ncfg, ledger, rng,
                                           s_lambda=s_lambda)
        pts_e = rn.dataset[sample_e.indices]
        m_tilde = kernel.block(pts_e, pts_e) * np.outer(sample_e.weights, sample_e.weights)
    else:
        sample_e = rn.sample
        pts_e = rn.sampled_points
        m_tilde = rn.gram

    v_full = qsim.RowAccess(inst, ledger).v_rows(np.arange(n, dtype=np.int64))
    amm_sk = amm_mod.build(v_full, epsilon, rng, ledger, c_amm=c_amm,
                           alpha=alpha_override,
                           s_target=n if full_sampling else None)

    # The value-side sample indexes keys: offset +n into the stacked dataset.
    key_pts = rn.dataset[amm_sk.sample.indices + n]
    r_tilde = (kernel.block(pts_e, key_pts) * sample_e.weights[:, None]) \
        * amm_sk.sample.weights[None, :]
    n_tilde = linalg.pseudo_inverse(m_tilde) @ r_tilde
    l_tilde = n_tilde @ amm_sk.v_tilde
    if l_tilde.shape != (sample_e.size, inst.d):
        raise ShapeError(f"contracted block has shape {l_tilde.shape}, "
                         f"expected ({sample_e.size}, {inst.d})")

    return AttentionSketch(s_e=sample_e.size, s_v=amm_sk.sample.size,
                           sample_e=sample_e, amm=amm_sk, m_tilde=m_tilde,
                           r_tilde=r_tilde, n_tilde=n_tilde, l_tilde=l_tilde,
                           rn=rn, lam=lam, epsilon=epsilon, ledger=ledger,
                           sampled_points_e=pts_e)


def query(sk: AttentionSketch, i: int) -> np.ndarray:
    """Approximate attention output row i.

    A nonpositive estimated normalizer is surfaced as an error: it signals
    the inverse-norm assumption is violated at this row, never silently
    absolute-valued away.
    """
    if not (0 <= i < sk.n):
        raise IndexError(f"row index {i} out of range for n={sk.n}")
    b = rownorm.query(sk.rn, i)
    if b <= 0.0:
        raise DegenerateNormalizerError(
            f"estimated normalizer {b:.6g} for row {i} is not positive"
        )
    kernel = qsim.ExpKernel(sk.ledger)
    point = qsim.RowAccess(sk.rn.inst, sk.ledger).dataset_rows(np.array([i], dtype=np.int64))
    u = kernel.block(point, sk.sampled_points_e)[0] * sk.sample_e.weights
    return (sk.l_tilde.T @ u) / b


def dense_replay(sk: AttentionSketch) -> np.ndarray:
    """Densely materialized output of the same sketch state: the compressed
    kernel block times the scattered value sample, over the estimated
    normalizers. Diagnostic path; performs no ledger charging."""
    inst = sk.rn.inst
    n = sk.n
    free = qsim.ExpKernel(None)
    w_e = sk.sample_e.weights
    cross_q = free.block(inst.Q, sk.sampled_points_e) * w_e[None, :]
    cross_k = free.block(sk.sampled_points_e, inst.K) * w_e[:, None]
    a_tilde = cross_q @ linalg.pseudo_inverse(sk.m_tilde) @ cross_k

    v_scatter = np.zeros_like(inst.V)
    v_scatter[sk.amm.sample.indices] = \
        (sk.amm.sample.weights**2)[:, None] * inst.V[sk.amm.sample.indices]

    factor_q = (free.block(inst.Q, sk.rn.sampled_points) * sk.rn.sample.weights[None, :]) \
        @ sk.rn.whitener
    b = factor_q @ sk.rn.mu_tilde
    if np.any(b <= 0.0):
        i = int(np.argmin(b))
        raise DegenerateNormalizerError(
            f"estimated normalizer {b[i]:.6g} for row {i} is not positive"
        )
    return (a_tilde @ v_scatter) / b[:, None]


@dataclass(frozen=True)
class BoundReport:
    """Evaluation of the end-to-end error bound on one instance: the
    amplification factor beta, whether the inverse-norm assumption holds,
    and both sides of the bound (rhs infinite when the assumption fails)."""

    beta: float
    assumption_ok: bool
    rhs: float
    lhs: float


def main_bound(inst, sk: AttentionSketch, epsilon: float, lam: float) -> BoundReport:
    """Check the end-to-end Frobenius bound against the exact oracle.

    lhs is the Frobenius distance between the densely replayed sketch output
    and exact attention; rhs is eps * beta * ||D^-1|| * (||A||_F + lam sqrt(n))
    * ||V||_F with beta = 1 / (1 - (eps ||A|| + lam sqrt(n)) ||D^-1||).
    """
    a = oracle.attention_matrix(inst)
    dvec = a.sum(axis=1)
    norm_dinv = float(1.0 / dvec.min())
    na = linalg.norms(a)
    root_n = math.sqrt(inst.n)
    slack = (epsilon * na.spectral + lam * root_n) * norm_dinv
    assumption_ok = slack < 1.0
    if assumption_ok:
        beta = 1.0 / (1.0 - slack)
        rhs = epsilon * beta * norm_dinv * (na.frobenius + lam * root_n) \
            * float(np.linalg.norm(inst.V))
    else:
        beta = math.inf
        rhs = math.inf
    lhs = float(np.linalg.norm(dense_replay(sk) - oracle.attention_exact(inst)))
    return BoundReport(beta=beta, assumption_ok=assumption_ok, rhs=rhs, lhs=lhs)


def inverse_perturb_bound(norm_dinv: float, eps_pert: float) -> float:
    """Bound on the inverse norm of a perturbed nonsingular matrix:
    ||D^-1|| / (1 - eps * ||D^-1||), valid when eps * ||D^-1|| < 1."""
    if eps_pert < 0.0 or norm_dinv < 0.0:
        raise ParameterError("norms must be nonnegative")
    if eps_pert * norm_dinv >= 1.0:
        raise ParameterError(
            f"perturbation too large: eps * ||D^-1|| = {eps_pert * norm_dinv:.6g} >= 1"
        )
    return norm_dinv / (1.0 - eps_pert * norm_dinv)
