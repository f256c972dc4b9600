"""Adaptive randomized range finder for the per-node projection matrices.

Follows the adaptive scheme of Halko, Martinsson and Tropp (2011, Alg. 4.2):
Gaussian probes are deflated against the accepted directions until every
pending probe image is small enough that, with high probability, the
projection error is below the target.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .geom import node_rng

# stream tag used for probe draws, distinct from knot sampling
PROBE_STREAM = 2
# relative size below which a deflated probe is treated as exhausted range
EXHAUSTED_RTOL = 1e-14
VERIFY_MAX_Q = 500
# above this size the numerical rank is checked through the projected matrix only
RANK_CHECK_MAX_Q = 1000


class RangeFinderError(ValueError):
    pass


@dataclass(frozen=True)
class RangeFinderConfig:
    epsilon: float = 0.0
    c: Optional[int] = None  # None: calibrate from q
    max_rank: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and non-negative, got {self.epsilon}")
        if self.epsilon == 0 and self.max_rank is None:
            raise ValueError("epsilon = 0 needs max_rank")
        if self.c is not None and int(self.c) < 1:
            raise ValueError("c must be >= 1")
        if self.max_rank is not None and int(self.max_rank) < 1:
            raise ValueError("max_rank must be >= 1")


@dataclass
class ProjectionMatrix:
    rows: np.ndarray  # r x q, orthonormal rows
    stop: str  # "tolerance", "max_rank" or "exhausted"
    error: Optional[float] = None  # ||K - Phi^T Phi K||_F when verified
    epsilon: float = 0.0

    @property
    def rank(self) -> int:
        return self.rows.shape[0]

    @property
    def contract_met(self) -> Optional[bool]:
        if self.error is None or self.epsilon == 0:
            return None
        return self.error < self.epsilon


def calibrate_c(q: int) -> int:
    """Smallest c with q / 10**c <= 0.1."""
    q = int(q)
    if q < 1:
        raise ValueError("q must be >= 1")
    c = 1
    while q > 10 ** (c - 1):
        c += 1
    return c


def projection_error(K, Phi) -> float:
    K = np.asarray(K, dtype=float)
    return float(np.linalg.norm(K - Phi.T @ (Phi @ K)))


def _check_matrix(K):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1] or K.shape[0] == 0:
        raise RangeFinderError(f"K must be a non-empty square matrix, got shape {K.shape}")
    if not np.all(np.isfinite(K)):
        raise RangeFinderError("K has non-finite entries")
    fro = float(np.linalg.norm(K))
    if fro == 0.0:
        raise RangeFinderError("K is the zero matrix; no projection direction exists")
    if np.linalg.norm(K - K.T) > 1e-10 * fro:
        raise RangeFinderError("K is not symmetric")
    return K, fro


def adaptive_range_finder(K, config: RangeFinderConfig, path: tuple = (),
                          verify_max_q: int = VERIFY_MAX_Q) -> ProjectionMatrix:
    """Row-orthonormal ``Phi`` with ``||K - Phi^T Phi K||_F < epsilon`` w.h.p.

    ``path`` keys the probe stream so different tree nodes draw independent
    probes under the same seed. Stops at the probe tolerance, at
    ``config.max_rank`` or when the range is exhausted, whichever comes first.
    """
    K, fro = _check_matrix(K)
    q = K.shape[0]
    c = calibrate_c(q) if config.c is None else int(config.c)
    cap = q if config.max_rank is None else min(int(config.max_rank), q)
    threshold = math.sqrt(math.pi / 2.0) * config.epsilon / 10.0
    tiny = EXHAUSTED_RTOL * fro
    rng = node_rng(config.seed, path, stream=PROBE_STREAM)

    kappa = [K @ rng.standard_normal(q) for _ in range(c)]
    first = kappa[0].copy()
    Phi = np.empty((cap, q))
    j = 0
    stop = "tolerance"
    while True:
        if max(np.linalg.norm(v) for v in kappa) < threshold:
            break
        if j == cap:
            stop = "max_rank"
            break
        P = Phi[:j]
        v = kappa.pop(0)
        v = v - P.T @ (P @ v)
        nv = np.linalg.norm(v)
        if nv < tiny:
            stop = "exhausted"
            break
        phi = v / nv
        Phi[j] = phi
        j += 1
        P = Phi[:j]
        w = K @ rng.standard_normal(q)
        kappa = [u - phi * (phi @ u) for u in kappa]
        kappa.append(w - P.T @ (P @ w))

    if j == 0:
        rows = (first / np.linalg.norm(first))[None, :]
    else:
        rows = Phi[:j].copy()
    err = projection_error(K, rows) if q <= verify_max_q else None
    return ProjectionMatrix(rows=rows, stop=stop, error=err, epsilon=config.epsilon)


def numerical_rank(K, rtol: float = 1e-12) -> int:
    ev = np.linalg.eigvalsh(np.asarray(K, dtype=float))
    top = ev[-1]
    if top <= 0:
        return 0
    return int(np.sum(ev > rtol * top))


def rank_targeted_phi(K, r_target: int, seed: int = 0, path: tuple = (), c: Optional[int] = None,
                      verify_max_q: int = VERIFY_MAX_Q) -> ProjectionMatrix:
    """Exactly ``r_target`` orthonormal rows from the adaptive finder with the tolerance disabled."""
    K, _ = _check_matrix(K)
    q = K.shape[0]
    r_target = int(r_target)
    if r_target < 1:
        raise RangeFinderError("r_target must be >= 1")
    if q <= RANK_CHECK_MAX_Q:
        nr = numerical_rank(K)
        if r_target >= nr and not (r_target == q == nr):
            raise RangeFinderError(f"r_target={r_target} is not below the numerical rank {nr} of K")
    cfg = RangeFinderConfig(epsilon=0.0, c=c, max_rank=r_target, seed=seed)
    out = adaptive_range_finder(K, cfg, path=path, verify_max_q=verify_max_q)
    if out.rank != r_target:
        raise RangeFinderError(f"range exhausted at rank {out.rank} < r_target={r_target} "
                               f"(numerical rank {numerical_rank(K)})")
    if q > RANK_CHECK_MAX_Q:
        # interlacing: a projected eigenvalue this small means r_target reached the numerical rank
        ev = np.linalg.eigvalsh(out.rows @ K @ out.rows.T)
        if ev[0] <= 1e-12 * ev[-1]:
            raise RangeFinderError(f"r_target={r_target} is not below the numerical rank "
                                   f"{numerical_rank(K)} of K")
    return out
