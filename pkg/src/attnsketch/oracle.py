"""Exact brute-force reference computations.

Everything here is dense ground truth used to verify the sampled and
estimated paths: exact attention rows, exact normalization factors, the full
exponential kernel Gram over queries and keys, explicit Nystrom compression,
and dense generalized ridge leverage scores. None of these functions touch
the cost ledger.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .errors import KernelOverflowError, ParameterError, ShapeError, StateError
from .linalg import WeightedSampleSet


@dataclass(frozen=True)
class AttentionInstance:
    """Query, key and value matrices, each n x d, plus a flag recording
    whether the d^{-1/4} scaling of Q and K has been applied."""

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    scaled: bool = False

    def __post_init__(self):
        q = linalg.as_matrix(self.Q, "Q")
        k = linalg.as_matrix(self.K, "K")
        v = linalg.as_matrix(self.V, "V")
        if not (q.shape == k.shape == v.shape):
            raise ShapeError(f"Q, K, V must share shape, got {q.shape}, {k.shape}, {v.shape}")
        if q.shape[0] < 1 or q.shape[1] < 1:
            raise ShapeError(f"need n >= 1 and d >= 1, got {q.shape}")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "V", v)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def d(self) -> int:
        return self.Q.shape[1]

    def dataset(self) -> np.ndarray:
        """The 2n x d stacked dataset: query rows first, then key rows."""
        return np.vstack([self.Q, self.K])


def scale_qk(inst: AttentionInstance) -> AttentionInstance:
    """Apply the d^{-1/4} scaling to Q and K (V untouched).

    Scaling twice is a state error: the flag exists precisely to prevent it.
    """
    if inst.scaled:
        raise StateError("instance is already scaled")
    f = inst.d ** -0.25
    return replace(inst, Q=inst.Q * f, K=inst.K * f, scaled=True)


def _require_scaled(inst: AttentionInstance):
    if not inst.scaled:
        raise StateError("instance must be scaled first")


def _guarded_exp_gram(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """exp(X Y^T) entrywise, naming the offending pair on overflow."""
    ip = x @ y.T
    mx = float(ip.max()) if ip.size else 0.0
    if mx > linalg.MAX_EXP_ARG:
        i, j = np.unravel_index(int(np.argmax(ip)), ip.shape)
        raise KernelOverflowError(
            f"inner product {mx:.6g} at pair ({i}, {j}) exceeds exp() range guard"
        )
    return np.exp(ip)


def kernel_matrix(inst: AttentionInstance) -> np.ndarray:
    """Full 2n x 2n exponential kernel Gram over the stacked Q and K rows.

    Symmetric and PSD up to roundoff; the top-right n x n block is the
    entrywise exponential of Q K^T.
    """
    _require_scaled(inst)
    x = inst.dataset()
    return _guarded_exp_gram(x, x)


def attention_matrix(inst: AttentionInstance) -> np.ndarray:
    """exp(Q K^T) entrywise (the unnormalized attention weights)."""
    _require_scaled(inst)
    return _guarded_exp_gram(inst.Q, inst.K)


def normalization_exact(inst: AttentionInstance) -> np.ndarray:
    """Row sums of the unnormalized attention matrix; all entries positive."""
    return attention_matrix(inst).sum(axis=1)


def attention_exact(inst: AttentionInstance) -> np.ndarray:
    """Exact attention output: each output row is the softmax-weighted convex
    combination of the rows of V."""
    a = attention_matrix(inst)
    d = a.sum(axis=1)
    return (a / d[:, None]) @ inst.V


def nystrom_explicit(e, sample: WeightedSampleSet, rel_tol: float = linalg.DEFAULT_REL_TOL) -> np.ndarray:
    """Dense Nystrom compression E S (S^T E S)^+ S^T E for a weighted sample.

    With the full unit-weight sample this reproduces E exactly; with the empty
    sample it is the zero matrix. The result is symmetrized to clean up
    roundoff.
    """
    em = linalg.as_matrix(e, "E")
    if em.shape[0] != em.shape[1]:
        raise ShapeError(f"E must be square, got {em.shape}")
    if sample.source_size != em.shape[0]:
        raise ShapeError(
            f"sample source size {sample.source_size} does not match E dim {em.shape[0]}"
        )
    if sample.size == 0:
        return np.zeros_like(em)
    c = (em[:, sample.indices]) * sample.weights[None, :]
    w = (c[sample.indices, :]) * sample.weights[:, None]
    return _symmetrize(c @ linalg.pseudo_inverse(w, rel_tol) @ c.T)


def _symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def gen_ridge_ls_exact(e, sample: WeightedSampleSet, lam: float) -> np.ndarray:
    """Dense generalized ridge leverage scores with respect to a sample:
    (1/lam) * diag(E - E S (S^T E S + lam I)^{-1} S^T E).

    With the empty sample this degenerates to diag(E)/lam; with the full
    unit-weight sample it matches the plain ridge leverage scores. Entries are
    clamped at zero (they are nonnegative in exact arithmetic).
    """
    if lam <= 0.0:
        raise ParameterError(f"ridge parameter must be positive, got {lam!r}")
    em = linalg.as_matrix(e, "E")
    if sample.source_size != em.shape[0]:
        raise ShapeError(
            f"sample source size {sample.source_size} does not match E dim {em.shape[0]}"
        )
    diag = np.diag(em).copy()
    if sample.size == 0:
        return diag / lam
    c = (em[:, sample.indices]) * sample.weights[None, :]
    w = (c[sample.indices, :]) * sample.weights[:, None]
    w = _symmetrize(w) + lam * np.eye(sample.size)
    sol = np.linalg.solve(w, c.T)
    corr = np.einsum("ij,ji->i", c, sol)
    return np.maximum(diag - corr, 0.0) / lam
