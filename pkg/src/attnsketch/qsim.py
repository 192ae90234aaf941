"""Classical stand-ins for the quantum subroutines, plus the cost ledger.

Three primitives live here: a Bernoulli index sampler, a matrix-vector mean
estimator with an energy-norm accuracy contract, and leverage score sampling
of a tall matrix. Each is distributionally faithful to what the quantum
routine would output; the quantum speedup exists only as modeled query counts
recorded in the ledger. Classically, every probability and every row still
gets evaluated.

Modeled costs charge the square-root iteration counts of the amplitude
amplification subroutines (ceil(sqrt(n * sum p)) for sampling,
ceil(eps^-1 * sqrt(n * s) * ||v||_inf) for mean estimation); suppressed
polylog factors are treated as unit so that fitted scaling exponents measure
the sqrt(n) behavior directly.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import EstimationError, ParameterError
from .linalg import WeightedSampleSet

# Probabilities are floored here before weights 1/sqrt(p) are formed, so a
# sampled index can never carry an infinite weight.
PROB_FLOOR = 1e-15

_MC_MAX_RETRIES = 16


class CostLedger:
    """Accumulates classical row queries, kernel evaluations, and modeled
    quantum query counts (with a per-subroutine breakdown).

    Counters only grow. Updates take an internal lock so concurrent trials may
    share a ledger if they want a combined total.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.classical_row_queries_qk = 0
        self.classical_row_queries_v = 0
        self.kernel_evals = 0
        self.modeled_quantum_queries = 0.0
        self.modeled_breakdown: dict[str, float] = {}

    def add_row_queries_qk(self, count: int):
        if count < 0:
            raise ParameterError("row query count must be nonnegative")
        with self._lock:
            self.classical_row_queries_qk += int(count)

    def add_row_queries_v(self, count: int):
        if count < 0:
            raise ParameterError("row query count must be nonnegative")
        with self._lock:
            self.classical_row_queries_v += int(count)

    def add_kernel_evals(self, count: int):
        if count < 0:
            raise ParameterError("kernel eval count must be nonnegative")
        with self._lock:
            self.kernel_evals += int(count)

    def add_quantum(self, name: str, amount: float):
        if amount < 0:
            raise ParameterError("modeled cost must be nonnegative")
        with self._lock:
            self.modeled_quantum_queries += float(amount)
            self.modeled_breakdown[name] = self.modeled_breakdown.get(name, 0.0) + float(amount)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "classical_row_queries_qk": self.classical_row_queries_qk,
                "classical_row_queries_v": self.classical_row_queries_v,
                "kernel_evals": self.kernel_evals,
                "modeled_quantum_queries": self.modeled_quantum_queries,
                "modeled_breakdown": dict(sorted(self.modeled_breakdown.items())),
            }


@dataclass(frozen=True)
class MeanEstimatorConfig:
    """Backend and accuracy settings for the matrix-vector mean estimator.

    backend: "exact" returns the true product; "perturbed" adds noise whose
    energy norm sits exactly at the accuracy boundary (a worst-case stressor);
    "mc" is a uniform-index Monte Carlo mean, retried until the contract
    verifiably holds.
    """

    backend: str = "exact"
    epsilon: float = 0.1
    seed: int = 0
    mc_sample_factor: float = 256.0

    def __post_init__(self):
        if self.backend not in ("exact", "perturbed", "mc"):
            raise ParameterError(f"unknown backend {self.backend!r}")
        if not (0.0 < self.epsilon < 1.0):
            raise ParameterError(f"epsilon must be in (0, 1), got {self.epsilon!r}")
        if self.mc_sample_factor <= 0.0:
            raise ParameterError("mc_sample_factor must be positive")


class ExpKernel:
    """Vectorized exponential kernel over row blocks, with the overflow guard.

    When built with a ledger, every entry evaluated is charged as one kernel
    evaluation; with ledger=None the evaluations are free (oracle-side use).
    """

    def __init__(self, ledger: CostLedger | None = None):
        self.ledger = ledger

    def _charge(self, count: int):
        if self.ledger is not None:
            self.ledger.add_kernel_evals(count)

    def block(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """exp(Xa Xb^T): all pairs between two row blocks."""
        out = linalg.guarded_exp(xa @ xb.T)
        self._charge(out.size)
        return out

    def diag(self, xa: np.ndarray) -> np.ndarray:
        """exp(<x_i, x_i>) for each row."""
        out = linalg.guarded_exp(np.einsum("ij,ij->i", xa, xa))
        self._charge(out.size)
        return out


class RowAccess:
    """Counting accessor for instance rows.

    Preprocessing and query paths read Q, K, V only through this object, so
    the ledger sees every classical row touch. Dataset indices 0..n-1 are
    query rows, n..2n-1 are key rows.
    """

    def __init__(self, inst, ledger: CostLedger):
        self.inst = inst
        self.ledger = ledger

    @property
    def n(self) -> int:
        return self.inst.n

    @property
    def dataset_size(self) -> int:
        return 2 * self.inst.n

    def dataset_rows(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        n = self.inst.n
        out = np.empty((idx.shape[0], self.inst.d))
        qmask = idx < n
        out[qmask] = self.inst.Q[idx[qmask]]
        out[~qmask] = self.inst.K[idx[~qmask] - n]
        self.ledger.add_row_queries_qk(idx.shape[0])
        return out

    def v_rows(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = self.inst.V[idx]
        self.ledger.add_row_queries_v(idx.shape[0])
        return out


def _validate_probs(p: np.ndarray) -> np.ndarray:
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.ndim != 1:
        raise ParameterError("probabilities must form a 1-D array")
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ParameterError("probabilities must lie in [0, 1]")
    return p


def qsample(p_oracle, n: int, rng: np.random.Generator, ledger: CostLedger,
            *, name: str = "qsample", oracle_cost: float = 1.0) -> WeightedSampleSet:
    """Include each index i < n independently with probability p_oracle(i);
    included indices carry weight 1/sqrt(p_i).

    ``p_oracle`` maps an int64 index array to the corresponding probability
    array. Classically all n probabilities are evaluated; the ledger is
    charged the modeled quantum cost ceil(sqrt(n * sum p)) oracle invocations,
    each multiplied by ``oracle_cost``.
    """
    p = _validate_probs(p_oracle(np.arange(n, dtype=np.int64)))
    if p.shape[0] != n:
        raise ParameterError(f"oracle returned {p.shape[0]} probabilities, expected {n}")
    keep = rng.random(n) < p
    idx = np.nonzero(keep)[0]
    weights = 1.0 / np.sqrt(np.maximum(p[idx], PROB_FLOOR))
    ledger.add_quantum(name, math.ceil(math.sqrt(n * float(p.sum()))) * oracle_cost)
    return WeightedSampleSet(source_size=n, indices=idx, weights=weights)


def qmatvec(row_oracle, n: int, v, cfg: MeanEstimatorConfig, ledger: CostLedger,
            *, name: str = "qmatvec", oracle_cost: float = 1.0) -> np.ndarray:
    """Estimate U^T v for an n x s matrix U given by a row oracle, with the
    residual's (U^T U)^+ energy norm at most cfg.epsilon.

    ``row_oracle`` maps an int64 index array to the corresponding rows. The
    entry oracle for v requires ||v||_inf <= 1. The ledger is charged the
    modeled cost ceil(eps^-1 * sqrt(n * s) * ||v||_inf) row-oracle
    invocations times ``oracle_cost``.

    Backends: "exact" returns U^T v; "perturbed" adds a uniformly random
    direction in the whitened space scaled to sit exactly at the epsilon
    boundary; "mc" averages m = ceil(mc_sample_factor * s / eps^2) uniform
    index draws of n * v_i * U_i and retries with a fresh seed offset (at most
    16 times) until the energy-norm contract is verified.
    """
    vv = linalg.as_vector(v, "v")
    if vv.shape[0] != n:
        raise ParameterError(f"v has length {vv.shape[0]}, expected {n}")
    vinf = float(np.abs(vv).max()) if n else 0.0
    if vinf > 1.0 + 1e-12:
        raise ParameterError(f"need ||v||_inf <= 1, got {vinf:.6g}")
    u = np.asarray(row_oracle(np.arange(n, dtype=np.int64)), dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != n:
        raise ParameterError(f"row oracle returned shape {u.shape}, expected ({n}, s)")
    s = u.shape[1]
    eps = cfg.epsilon

    ledger.add_quantum(name, math.ceil(math.sqrt(n * s) * vinf / eps) * oracle_cost)

    mu = u.T @ vv
    if cfg.backend == "exact" or s == 0:
        return mu
    gram = u.T @ u

    if cfg.backend == "perturbed":
        w, vecs = np.linalg.eigh(gram)
        w = np.maximum(w, 0.0)
        wmax = float(w.max()) if w.size else 0.0
        if wmax == 0.0:
            return mu
        support = w > linalg.DEFAULT_REL_TOL * wmax
        g = np.random.default_rng(cfg.seed).standard_normal(int(support.sum()))
        g /= np.linalg.norm(g)
        z = vecs[:, support] @ (np.sqrt(w[support]) * g)
        return mu + eps * z

    m = max(1, math.ceil(cfg.mc_sample_factor * s / eps**2))
    achieved = math.inf
    for attempt in range(1 + _MC_MAX_RETRIES):
        draw_rng = np.random.default_rng([cfg.seed, attempt])
        counts = np.bincount(draw_rng.integers(0, n, size=m), minlength=n)
        est = (n / m) * (u.T @ (counts * vv))
        achieved = linalg.pinv_energy_norm(est - mu, gram)
        if achieved <= eps * (1.0 + 1e-9):
            return est
    raise EstimationError(
        f"mean estimator missed its contract after {_MC_MAX_RETRIES} retries: "
        f"achieved energy norm {achieved:.6g} > epsilon {eps:.6g}"
    )


def _calibrate_leverage_probs(tau: np.ndarray, s_target: int, d: int) -> np.ndarray:
    """Probabilities min(1, c * tau_i * s_target / d) with c chosen so the
    expected sample size is about min(s_target, #nonzero scores)."""
    positive = tau > 0.0
    target = min(float(s_target), float(positive.sum()))
    if target <= 0.0:
        return np.zeros_like(tau)
    base = tau * (s_target / d)

    def expected(c: float) -> float:
        return float(np.minimum(1.0, c * base).sum())

    hi = 1.0
    while expected(hi) < target - 1e-9 and hi < 1e30:
        hi *= 2.0
    lo = 0.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if expected(mid) < target:
            lo = mid
        else:
            hi = mid
    return np.minimum(1.0, hi * base)


def qleverage_score(row_oracle, n: int, s_target: int, rng: np.random.Generator,
                    ledger: CostLedger, *, name: str = "qleverage_score") -> WeightedSampleSet:
    """Leverage score sampling of an n x d matrix given by a row oracle.

    Index i is included with probability p_i = min(1, c * tau_i * s_target / d)
    where c is calibrated so the expected sample size is about s_target;
    included indices carry weight 1/sqrt(p_i). Classically the scores are
    computed exactly from all rows. The ledger is charged
    ceil(sqrt(n * s_target)) modeled row queries plus d^3 postprocessing units.
    """
    if s_target < 1:
        raise ParameterError(f"s_target must be >= 1, got {s_target}")
    u = np.asarray(row_oracle(np.arange(n, dtype=np.int64)), dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != n:
        raise ParameterError(f"row oracle returned shape {u.shape}, expected ({n}, d)")
    d = u.shape[1]
    tau = linalg.leverage_scores(u)
    p = np.ones(n) if s_target >= n else _calibrate_leverage_probs(tau, s_target, d)
    keep = rng.random(n) < p
    idx = np.nonzero(keep)[0]
    weights = 1.0 / np.sqrt(np.maximum(p[idx], PROB_FLOOR))
    ledger.add_quantum(name, float(math.ceil(math.sqrt(n * s_target))))
    ledger.add_quantum(name + ".postprocess", float(d) ** 3)
    return WeightedSampleSet(source_size=n, indices=idx, weights=weights)
