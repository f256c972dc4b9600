"""Covariance functions, compactly supported tapers and covariance matrices.

All distances are Euclidean in raw coordinate units.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

EXPONENTIAL = "exponential"
GAUSSIAN = "gaussian"

SPHERICAL = "spherical"
WENDLAND2 = "wendland2"
ONE = "one"

# above this many candidate pairs, sparse taper matrices use a k-d tree
DENSE_PAIR_THRESHOLD = 250_000


@dataclass(frozen=True)
class CovParams:
    """Marginal variance, correlation parameters and nugget variance."""

    sigma2: float
    theta: tuple = (1.0,)
    tau2: float = 0.0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "theta", tuple(float(t) for t in theta))
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "tau2", float(self.tau2))
        # sigma2 == 0 is tolerated so that degenerate fields can be simulated
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValueError(f"sigma2 must be finite and non-negative, got {self.sigma2}")
        if not (math.isfinite(self.tau2) and self.tau2 >= 0):
            raise ValueError(f"tau2 must be finite and non-negative, got {self.tau2}")
        if len(self.theta) == 0 or not all(math.isfinite(t) and t > 0 for t in self.theta):
            raise ValueError(f"theta entries must be finite and positive, got {self.theta}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.sigma2, *self.theta, self.tau2])

    @classmethod
    def from_vector(cls, v) -> "CovParams":
        v = np.asarray(v, dtype=float)
        return cls(sigma2=v[0], theta=tuple(v[1:-1]), tau2=v[-1])

    def to_dict(self) -> dict:
        return dict(sigma2=self.sigma2, theta=list(self.theta), tau2=self.tau2)


@dataclass(frozen=True)
class KernelSpec:
    """A stationary correlation family.

    ``family`` is ``"exponential"`` (``exp(-theta * d)``), ``"gaussian"``
    (``exp(-theta * (d / length_scale)**2)``) or ``"custom"``. A custom family
    supplies ``func(X1, X2, theta)`` evaluating the correlation of paired rows
    of ``X1`` and ``X2`` and a ``support`` radius beyond which it is zero
    (``inf`` for global support).
    """

    family: str = EXPONENTIAL
    length_scale: float = 1.0
    func: Optional[Callable] = field(default=None, compare=False)
    support: float = math.inf

    def __post_init__(self):
        if self.family not in (EXPONENTIAL, GAUSSIAN, "custom"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.family == "custom" and self.func is None:
            raise ValueError("custom kernel needs func")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")

    def corr_from_dist(self, d, theta) -> np.ndarray:
        t = theta[0]
        if self.family == EXPONENTIAL:
            return np.exp(-t * d)
        if self.family == GAUSSIAN:
            return np.exp(-t * (d / self.length_scale) ** 2)
        raise TypeError("custom kernels are evaluated on locations, not distances")

    def corr_pairs(self, X1, X2, theta) -> np.ndarray:
        """Correlation of paired rows ``X1[i]``, ``X2[i]``."""
        if self.family == "custom":
            return np.asarray(self.func(X1, X2, theta), dtype=float)
        diff = X1 - X2
        return self.corr_from_dist(np.sqrt(np.sum(diff * diff, axis=-1)), theta)


@dataclass(frozen=True)
class TaperSpec:
    """Compactly supported taper: spherical, Wendland_2 or the constant one."""

    family: str = SPHERICAL
    gamma: float = 1.0

    def __post_init__(self):
        if self.family not in (SPHERICAL, WENDLAND2, ONE):
            raise ValueError(f"unknown taper family {self.family!r}")
        if self.family != ONE and not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"taper radius gamma must be positive, got {self.gamma}")

    @property
    def radius(self) -> float:
        return math.inf if self.family == ONE else self.gamma

    def from_dist(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.family == ONE:
            return np.ones_like(d)
        h = d / self.gamma
        inside = d < self.gamma
        out = np.zeros_like(h)
        hi = h[inside]
        if self.family == SPHERICAL:
            out[inside] = (1.0 - hi) ** 2 * (1.0 + 0.5 * hi)
        else:
            out[inside] = (1.0 - hi) ** 6 * (1.0 + 6.0 * hi + 35.0 * hi ** 2 / 3.0)
        return out


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("locations must be an (n, d) array with d >= 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("locations contain non-finite coordinates")
    return X


def _check_pair(s1, s2):
    s1 = np.asarray(s1, dtype=float).ravel()
    s2 = np.asarray(s2, dtype=float).ravel()
    if s1.shape != s2.shape or s1.size == 0:
        raise ValueError(f"location dimension mismatch: {s1.shape} vs {s2.shape}")
    if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
        raise ValueError("locations contain non-finite coordinates")
    return s1, s2


def cov_eval(spec: KernelSpec, params: CovParams, s1, s2) -> float:
    """sigma2 * rho(s1, s2; theta) for two single locations."""
    s1, s2 = _check_pair(s1, s2)
    return float(params.sigma2 * spec.corr_pairs(s1[None], s2[None], params.theta)[0])


def taper_eval(spec: TaperSpec, s1, s2) -> float:
    s1, s2 = _check_pair(s1, s2)
    d = np.sqrt(np.sum((s1 - s2) ** 2))
    return float(spec.from_dist(d))


def cov_matrix(spec: KernelSpec, params: CovParams, A, B=None) -> np.ndarray:
    """Dense ``|A| x |B|`` covariance matrix; exactly symmetric when ``B`` is omitted."""
    A = _as_points(A)
    same = B is None
    B = A if same else _as_points(B)
    if A.shape[1] != B.shape[1]:
        raise ValueError("location dimension mismatch")
    if spec.family == "custom":
        ii, jj = np.meshgrid(np.arange(len(A)), np.arange(len(B)), indexing="ij")
        C = params.sigma2 * spec.corr_pairs(A[ii.ravel()], B[jj.ravel()], params.theta)
        C = C.reshape(len(A), len(B))
        if same:
            C = np.triu(C) + np.triu(C, 1).T
        return C
    # Euclidean cdist is bitwise symmetric, so the in-place transform keeps C exactly symmetric
    C = cdist(A, B)
    t = params.theta[0]
    if spec.family == GAUSSIAN:
        C /= spec.length_scale
        np.multiply(C, C, out=C)
    C *= -t
    np.exp(C, out=C)
    C *= params.sigma2
    return C


def cov_pairs(spec: KernelSpec, params: CovParams, A, B, rows, cols) -> np.ndarray:
    """Covariance values for the index pairs ``(A[rows], B[cols])``."""
    return params.sigma2 * spec.corr_pairs(A[rows], B[cols], params.theta)


def taper_pattern(spec: TaperSpec, A, B=None, dense_threshold: int = DENSE_PAIR_THRESHOLD):
    """Index pairs and distances with ``||a_i - b_j|| < gamma``.

    Returns ``rows, cols, dist`` sorted by (row, col). Uses a k-d tree
    neighbour search unless the number of candidate pairs is at most
    ``dense_threshold``.
    """
    A = _as_points(A)
    B = A if B is None else _as_points(B)
    if spec.family == ONE:
        raise ValueError("the constant taper has no compact support")
    if len(A) * len(B) <= dense_threshold:
        D = cdist(A, B)
        rows, cols = np.nonzero(D < spec.gamma)
        dist = D[rows, cols]
    else:
        ta, tb = cKDTree(A), cKDTree(B)
        rec = ta.sparse_distance_matrix(tb, spec.gamma, output_type="ndarray")
        keep = rec["v"] < spec.gamma
        rows, cols = rec["i"][keep].astype(np.int64), rec["j"][keep].astype(np.int64)
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        dist = np.sqrt(np.sum((A[rows] - B[cols]) ** 2, axis=1))
    return rows, cols, dist


def taper_matrix_sparse(spec: TaperSpec, A, B=None, dense_threshold: int = DENSE_PAIR_THRESHOLD):
    """Sparse CSR matrix of taper values, storing only pairs closer than gamma."""
    A = _as_points(A)
    Bp = A if B is None else _as_points(B)
    rows, cols, dist = taper_pattern(spec, A, Bp, dense_threshold)
    vals = spec.from_dist(dist)
    keep = vals != 0.0
    return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(len(A), len(Bp)))
