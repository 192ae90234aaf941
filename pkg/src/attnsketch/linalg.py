"""Dense linear algebra kernel for the attention sketching pipeline.

Exponential kernel evaluation, SVD-backed pseudoinverses, leverage and ridge
leverage scores, statistical dimension, matrix norms, stable rank, and row
distortion. Everything operates on plain float64 numpy arrays (row-major) and
uses full deterministic factorizations; inputs are desk-scale, so cubic cost
is acceptable and no iterative estimators are used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import KernelOverflowError, ParameterError, ShapeError

# exp() overflows float64 just above 709. Any inner product beyond this guard
# aborts instead of silently producing Inf entries.
MAX_EXP_ARG = 700.0

# Relative singular-value cutoff defining pseudoinverse support. Sampled Gram
# matrices are frequently numerically singular, so the cutoff is deliberate.
DEFAULT_REL_TOL = 1e-12

# How far below zero an eigenvalue of a nominally-PSD matrix may fall (relative
# to the largest) before it is an error rather than roundoff to clamp.
PSD_VIOLATION_TOL = 1e-9


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array; reject non-finite entries."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ParameterError(f"{name} contains NaN or Inf entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a float64 1-D array; reject non-finite entries."""
    v = np.ascontiguousarray(a, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={v.ndim}")
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"{name} contains NaN or Inf entries")
    return v


def exp_kernel(x, y) -> float:
    """Exponential inner-product kernel exp(<x, y>) for two vectors.

    Raises
    ------
    ShapeError
        If the vectors have different lengths.
    KernelOverflowError
        If the inner product exceeds the float64 exp() range guard.
    """
    xv = as_vector(x, "x")
    yv = as_vector(y, "y")
    if xv.shape[0] != yv.shape[0]:
        raise ShapeError(f"length mismatch: {xv.shape[0]} vs {yv.shape[0]}")
    ip = float(xv @ yv)
    if ip > MAX_EXP_ARG:
        raise KernelOverflowError(
            f"inner product {ip:.6g} exceeds exp() range guard {MAX_EXP_ARG:g}"
        )
    return math.exp(ip)


def guarded_exp(ip: np.ndarray) -> np.ndarray:
    """Entrywise exp() of an array of inner products with the overflow guard."""
    mx = float(ip.max()) if ip.size else 0.0
    if mx > MAX_EXP_ARG:
        raise KernelOverflowError(
            f"inner product {mx:.6g} exceeds exp() range guard {MAX_EXP_ARG:g}"
        )
    return np.exp(ip)


@dataclass(frozen=True)
class SpectrumSummary:
    """Singular values of a matrix in descending order plus the relative
    cutoff used to decide numerical rank."""

    singular_values: np.ndarray
    rank_tol: float

    def __post_init__(self):
        sv = np.asarray(self.singular_values, dtype=np.float64)
        if sv.size and (np.any(np.diff(sv) > 0) or sv[-1] < 0):
            raise ParameterError("singular values must be nonincreasing and nonnegative")
        object.__setattr__(self, "singular_values", sv)

    @property
    def rank(self) -> int:
        sv = self.singular_values
        if sv.size == 0 or sv[0] == 0.0:
            return 0
        return int(np.count_nonzero(sv > self.rank_tol * sv[0]))


def spectrum(m, rel_tol: float = DEFAULT_REL_TOL) -> SpectrumSummary:
    """Full SVD spectrum of a matrix."""
    a = as_matrix(m)
    sv = np.linalg.svd(a, compute_uv=False)
    return SpectrumSummary(singular_values=sv, rank_tol=rel_tol)


def pseudo_inverse(m, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD.

    Singular values below ``rel_tol`` times the largest are treated as zero.
    Always defined, including for rectangular and rank-deficient inputs.
    """
    a = as_matrix(m)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    inv = np.where(s > rel_tol * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def _sym_eigh(m, name: str) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a nominally symmetric PSD matrix.

    Checks symmetry, rejects eigenvalues more negative than the PSD roundoff
    tolerance, and clamps the rest to zero. Returns (eigenvalues, vectors).
    """
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got {a.shape}")
    if a.size:
        scale = max(1.0, float(np.abs(a).max()))
        asym = float(np.abs(a - a.T).max())
        if asym > PSD_VIOLATION_TOL * scale:
            raise ShapeError(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    w, v = np.linalg.eigh(0.5 * (a + a.T)) if a.size else (np.zeros(0), np.zeros((0, 0)))
    if w.size:
        wmax = max(float(w.max()), 0.0)
        floor = -PSD_VIOLATION_TOL * max(1.0, wmax)
        if float(w.min()) < floor:
            raise ParameterError(
                f"{name} is not PSD: eigenvalue {w.min():.3g} below tolerance {floor:.3g}"
            )
        w = np.maximum(w, 0.0)
    return w, v


def psd_inv_sqrt(m, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Inverse square root M^{+/2} of a symmetric PSD matrix.

    Computed by eigendecomposition; eigenvalues below ``rel_tol`` times the
    largest are treated as zero (pseudoinverse on the support). Small negative
    eigenvalues within the PSD roundoff tolerance are clamped to zero; larger
    violations raise.
    """
    w, v = _sym_eigh(m, "matrix")
    if w.size == 0:
        return np.zeros((0, 0))
    wmax = float(w.max())
    if wmax == 0.0:
        return np.zeros_like(v)
    inv_sqrt = np.where(w > rel_tol * wmax, 1.0 / np.sqrt(np.where(w > 0, w, 1.0)), 0.0)
    return (v * inv_sqrt) @ v.T


def leverage_scores(a) -> np.ndarray:
    """Row leverage scores of a tall matrix.

    For A with SVD A = U S V^T, the i-th score is the squared norm of the
    i-th row of U restricted to the numerical-rank support. Scores lie in
    [0, 1] and sum to rank(A).
    """
    m = as_matrix(a)
    if m.shape[0] < m.shape[1]:
        raise ShapeError(f"need rows >= cols, got {m.shape}")
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(m.shape[0])
    r = int(np.count_nonzero(s > DEFAULT_REL_TOL * s[0]))
    tau = np.einsum("ij,ij->i", u[:, :r], u[:, :r])
    return np.clip(tau, 0.0, 1.0)


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not math.isfinite(lam) or lam <= 0.0:
        raise ParameterError(f"ridge parameter must be positive, got {lam!r}")
    return lam


def ridge_leverage_scores(e, lam: float) -> np.ndarray:
    """Diagonal of E (E + lam I)^{-1} for a symmetric PSD matrix E.

    The scores sum to the statistical dimension at the same regularization.
    """
    lam = _check_lambda(lam)
    w, v = _sym_eigh(e, "kernel matrix")
    weights = w / (w + lam)
    return np.einsum("ik,k,ik->i", v, weights, v)


def statistical_dimension(e, lam: float) -> float:
    """Effective rank of a PSD matrix at regularization lam.

    Sum of sigma_i / (sigma_i + lam) over the eigenvalues; monotone
    nonincreasing in lam.
    """
    lam = _check_lambda(lam)
    w, _ = _sym_eigh(e, "kernel matrix")
    return float(np.sum(w / (w + lam)))


@dataclass(frozen=True)
class MatrixNorms:
    spectral: float
    frobenius: float
    inf_row_l1: float


def norms(m) -> MatrixNorms:
    """Spectral norm (via SVD), Frobenius norm, and max row l1 norm."""
    a = as_matrix(m)
    sv = np.linalg.svd(a, compute_uv=False) if a.size else np.zeros(0)
    spectral = float(sv[0]) if sv.size else 0.0
    frobenius = float(np.sqrt(np.sum(a * a)))
    inf_row_l1 = float(np.abs(a).sum(axis=1).max()) if a.size else 0.0
    return MatrixNorms(spectral=spectral, frobenius=frobenius, inf_row_l1=inf_row_l1)


def stable_rank(a) -> float:
    """Frobenius-to-spectral norm ratio squared; in [1, rank]."""
    nm = norms(a)
    if nm.spectral == 0.0:
        raise ParameterError("stable rank of the zero matrix is undefined")
    return (nm.frobenius / nm.spectral) ** 2


def row_distortion(a) -> float:
    """Mismatch between row mass and row importance of a tall matrix.

    (d / ||A||_F^2) * max_i ||a_i||^2 / tau_i, with zero rows excluded from
    the max (a zero row contributes to neither mass nor rank). Equals 1 for
    orthonormal columns and never exceeds d / stable_rank(A).
    """
    m = as_matrix(a)
    if m.shape[0] < m.shape[1]:
        raise ShapeError(f"need rows >= cols, got {m.shape}")
    fro2 = float(np.sum(m * m))
    if fro2 == 0.0:
        raise ParameterError("row distortion of the zero matrix is undefined")
    tau = leverage_scores(m)
    row2 = np.einsum("ij,ij->i", m, m)
    mask = row2 > 0.0
    ratios = np.zeros_like(row2)
    ratios[mask] = row2[mask] / tau[mask]
    return float(m.shape[1] / fro2 * ratios.max())


def pinv_energy_norm(x, g, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Energy norm sqrt(x^T G^+ x) using the pseudoinverse on the range of a
    symmetric PSD matrix G."""
    xv = as_vector(x, "x")
    w, v = _sym_eigh(g, "gram matrix")
    if w.size == 0:
        return 0.0
    if xv.shape[0] != w.shape[0]:
        raise ShapeError(f"length mismatch: x has {xv.shape[0]}, G is {w.shape[0]}x{w.shape[0]}")
    wmax = float(w.max())
    if wmax == 0.0:
        return 0.0
    inv = np.where(w > rel_tol * wmax, 1.0 / np.where(w > 0, w, 1.0), 0.0)
    y = v.T @ xv
    return float(np.sqrt(np.sum(inv * y * y)))


@dataclass(frozen=True)
class WeightedSampleSet:
    """Compact weighted sampling matrix: sampled indices of a source of size
    ``source_size`` together with positive column weights.

    The materialized form is the source_size x size matrix whose j-th column
    is weights[j] * e_{indices[j]}; it is never needed on hot paths.
    """

    source_size: int
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if idx.ndim != 1 or w.ndim != 1 or idx.shape != w.shape:
            raise ShapeError("indices and weights must be 1-D arrays of equal length")
        if self.source_size < 0:
            raise ParameterError("source_size must be nonnegative")
        if idx.size and (idx.min() < 0 or idx.max() >= self.source_size):
            raise ParameterError("sample index out of range of the source")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ParameterError("sample weights must be finite and positive")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])

    def materialize(self) -> np.ndarray:
        """Dense source_size x size sampling matrix."""
        s = np.zeros((self.source_size, self.size))
        s[self.indices, np.arange(self.size)] = self.weights
        return s

    @classmethod
    def full(cls, n: int) -> "WeightedSampleSet":
        """All indices with unit weights (the identity sampling)."""
        return cls(source_size=n, indices=np.arange(n), weights=np.ones(n))

    @classmethod
    def empty(cls, n: int) -> "WeightedSampleSet":
        return cls(source_size=n, indices=np.zeros(0, dtype=np.int64), weights=np.zeros(0))
