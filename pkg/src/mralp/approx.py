"""The multi-resolution linear-projection prior.

``build_basis`` computes the per-node quantities that the fast likelihood and
prediction passes consume. Projected covariances are kept in whitened form:
for a point set ``X`` inside node ``p`` and each ancestor level ``l``,

    F_l(X) = chol(Phi_l K_l Phi_l^T)^{-1} Phi_l C_l(Q_l, X)

so that the level-``l`` projection term between two point sets is simply
``F_l(X)^T F_l(Y)``. ``DenseOracle`` evaluates the same covariance with the
textbook recursions (explicit knot matrices, plain solves) and serves as the
independent reference.
"""
from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import geom
from .kernels import (ONE, CovParams, KernelSpec, TaperSpec, cov_matrix, cov_pairs,
                      taper_pattern)
from .rangefinder import (RangeFinderConfig, RangeFinderError, adaptive_range_finder,
                          numerical_rank, rank_targeted_phi)

MRALP = "mralp"
MRA = "mra"
MLP = "mlp"

PSD_RTOL = 1e-8
DENSE_CAP = 2000
# leaves at or below this size, or denser than this fraction, are factorized densely
SMALL_LEAF = 64
DENSE_FRACTION = 0.25


class BasisError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhiPolicy:
    """How projection matrices are chosen at each resolution.

    ``ranks[m]``: rank target at resolution m. ``epsilon[m]``: tolerance for
    the adaptive finder (``ranks`` then acts as a cap). ``identity`` forces
    ``Phi = I``. ``rank_overflow`` is ``"error"`` or ``"clip"``: what to do
    when a rank target is not below the numerical rank of the knot matrix.
    """

    ranks: Optional[tuple] = None
    epsilon: Optional[tuple] = None
    c: Optional[int] = None
    seed: int = 0
    identity: bool = False
    rank_overflow: str = "error"

    def __post_init__(self):
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(int(r) for r in np.atleast_1d(self.ranks)))
        if self.epsilon is not None:
            object.__setattr__(self, "epsilon", tuple(float(e) for e in np.atleast_1d(self.epsilon)))
        if self.rank_overflow not in ("error", "clip"):
            raise ValueError("rank_overflow must be 'error' or 'clip'")
        if not self.identity and self.ranks is None and self.epsilon is None:
            raise ValueError("PhiPolicy needs ranks, epsilon or identity=True")

    def _at(self, seq, m):
        if seq is None:
            return None
        return seq[m] if m < len(seq) else seq[-1]

    def rank_at(self, m):
        return self._at(self.ranks, m)

    def epsilon_at(self, m):
        return self._at(self.epsilon, m)


@dataclass(frozen=True)
class ModelConfig:
    tree: geom.PartitionTree = field(compare=False)
    knots: geom.KnotAllocation = field(compare=False)
    kernel: KernelSpec
    taper: TaperSpec
    params: CovParams
    phi: PhiPolicy
    mode: str = MRALP

    def __post_init__(self):
        if self.mode not in (MRALP, MRA, MLP):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.tree.locations is None:
            raise ValueError("tree needs point assignments")
        if self.mode == MRA:
            if self.taper.family != ONE:
                raise ValueError("MRA mode requires the constant taper")
            if not self.phi.identity:
                raise ValueError("MRA mode requires identity projections")
        if self.mode == MLP:
            if self.tree.M != 1 or self.tree.spec.J != (1,):
                raise ValueError("MLP mode requires the one-resolution, one-child tree")
            if len(self.knots[()]) != self.tree.n:
                raise ValueError("MLP mode requires Q0 = S0")

    @property
    def M(self):
        return self.tree.M

    def with_params(self, params: CovParams) -> "ModelConfig":
        return dataclasses.replace(self, params=params)


def make_config(locations, *, domain=None, J=(2, 2), rule=geom.LONGEST, knot_sizes=None,
                knot_strategy=None, kernel=None, params=None, taper=None, ranks=None,
                epsilon=None, c=None, mode=MRALP, seed=0, phi_seed=None,
                rank_overflow="error") -> ModelConfig:
    """Convenience constructor wiring partition, knots and projections.

    ``mode="mra"`` sets identity projections and the constant taper;
    ``mode="mlp"`` ignores ``J`` and uses every point as a knot.
    """
    X = np.atleast_2d(np.asarray(locations, dtype=float))
    domain = geom.Domain.bounding(X) if domain is None else domain
    kernel = KernelSpec() if kernel is None else kernel
    params = CovParams(1.0) if params is None else params
    phi_seed = seed if phi_seed is None else phi_seed
    if mode == MLP:
        tree = geom.mlp_partition(domain)
        strategy = geom.RandomSubset(sizes=(None,))
    else:
        tree = geom.build_partition(domain, geom.PartitionSpec(J=tuple(J), rule=rule))
        # identity projections need knots disjoint from ancestor knots, else K^m is singular
        strategy = knot_strategy or geom.RandomSubset(sizes=tuple(knot_sizes),
                                                      exclude_ancestors=(mode == MRA))
    tree = geom.assign_points(tree, X)
    if mode != MLP:
        geom.require_nonempty_leaves(tree)
    knots = geom.select_knots(tree, strategy, seed=seed)
    if mode == MRA:
        taper = TaperSpec(ONE)
        phi = PhiPolicy(identity=True, seed=phi_seed)
    else:
        taper = TaperSpec() if taper is None else taper
        phi = PhiPolicy(ranks=ranks, epsilon=epsilon, c=c, seed=phi_seed, rank_overflow=rank_overflow)
    return ModelConfig(tree, knots, kernel, taper, params, phi, mode)


# ---------------------------------------------------------------- cache

@dataclass
class NodeBasis:
    path: tuple
    knots: np.ndarray
    K: np.ndarray  # remainder covariance of the node's own knots
    phi: np.ndarray  # r x q
    chol: np.ndarray  # lower factor of Phi K Phi^T, the inverse of K-hat
    coefs: list  # F_l(knots) for ancestor levels l < m
    cross: list  # Phi F_l(knots)^T, used when projecting descendants
    stop: str = ""

    @property
    def rank(self):
        return self.phi.shape[0]

    def khat_inv(self):
        return self.chol @ self.chol.T


class LeafFactor:
    """Factorization of a leaf covariance, sparse (LU with symmetric fill-reducing order) or dense."""

    def __init__(self, matrix, path):
        self.path = path
        self.sparse = sp.issparse(matrix)
        self.matrix = matrix
        if self.sparse:
            A = matrix.tocsc()
            self.nnz = int(A.nnz)
            try:
                self._lu = splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=True))
            except RuntimeError as exc:
                raise self._failure(A.diagonal()) from exc
            diag = self._lu.U.diagonal()
            if not np.all(diag > 0):
                raise self._failure(A.diagonal())
            self.logdet = float(np.sum(np.log(diag)))
        else:
            A = np.asarray(matrix)
            self.nnz = int(A.size)
            try:
                self._cho = sla.cho_factor(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise self._failure(np.diag(A)) from exc
            self.logdet = 2.0 * float(np.sum(np.log(np.diag(self._cho[0]))))

    def _failure(self, diag):
        return BasisError(f"leaf covariance at {self.path} is not positive definite "
                          f"(min diagonal {float(np.min(diag)):.3e})")

    def solve(self, B):
        if self.sparse:
            return self._lu.solve(np.asarray(B, dtype=float))
        return sla.cho_solve(self._cho, B, check_finite=False)

    def dense(self):
        return self.matrix.toarray() if self.sparse else np.asarray(self.matrix)


@dataclass
class LeafBasis:
    path: tuple
    ids: np.ndarray
    coefs: list  # F_l(S_leaf) for l < M
    sigma: LeafFactor


@dataclass
class BasisCache:
    config: ModelConfig
    nodes: Dict[tuple, NodeBasis]
    leaves: Dict[tuple, LeafBasis]
    stats: dict = field(default_factory=dict)
    _oracle: object = field(default=None, repr=False)

    @property
    def tree(self):
        return self.config.tree

    @property
    def M(self):
        return self.config.M

    @property
    def locations(self):
        return self.config.tree.locations

    def ranks(self):
        return {p: nb.rank for p, nb in self.nodes.items()}


def _kernel(cache_or_cfg):
    cfg = cache_or_cfg.config if isinstance(cache_or_cfg, BasisCache) else cache_or_cfg
    return cfg.kernel, cfg.params


def point_coefs(cfg: ModelConfig, nodes, path, X, depth):
    """Whitened projections ``F_l(X)`` for ``l < depth`` along ancestors of ``path``."""
    kernel, params = cfg.kernel, cfg.params
    out = []
    for l in range(depth):
        nb = nodes[path[:l]]
        H = nb.phi @ cov_matrix(kernel, params, nb.knots, X)
        for i in range(l):
            H -= nb.cross[i] @ out[i]
        out.append(sla.solve_triangular(nb.chol, H, lower=True, check_finite=False))
    return out


def _choose_phi(cfg: ModelConfig, K, path):
    m = len(path)
    pol = cfg.phi
    if pol.identity:
        return np.eye(K.shape[0]), "identity"
    r = pol.rank_at(m)
    eps = pol.epsilon_at(m)
    try:
        if eps is not None:
            out = adaptive_range_finder(K, RangeFinderConfig(epsilon=eps, c=pol.c, max_rank=r,
                                                             seed=pol.seed), path=path)
            return out.rows, out.stop
        q = K.shape[0]
        if r >= q or pol.rank_overflow == "clip":
            nr = numerical_rank(K)
            if r >= nr and not (r == q == nr):
                if pol.rank_overflow == "error":
                    raise RangeFinderError(f"rank target {r} is not below the numerical rank {nr}")
                r = q if nr == q else max(1, nr - 1)
        out = rank_targeted_phi(K, r, seed=pol.seed, path=path, c=pol.c)
        return out.rows, out.stop
    except RangeFinderError as exc:
        raise BasisError(f"projection at node {path} failed: {exc}") from exc


def _build_node(cfg, nodes, path, check_psd):
    knots = cfg.knots[path]
    m = len(path)
    coefs = point_coefs(cfg, nodes, path, knots, m)
    K = cov_matrix(cfg.kernel, cfg.params, knots)
    for F in coefs:
        K -= F.T @ F
    K = 0.5 * (K + K.T)
    if check_psd:
        ev = np.linalg.eigvalsh(K)
        if ev[0] < -PSD_RTOL * max(ev[-1], 0.0):
            raise BasisError(f"knot covariance at node {path} is not PSD "
                             f"(min eig {ev[0]:.3e}, max eig {ev[-1]:.3e})")
    phi, stop = _choose_phi(cfg, K, path)
    G = phi @ K @ phi.T
    G = 0.5 * (G + G.T)
    try:
        chol = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise BasisError(f"K-hat factorization failed at node {path}") from exc
    cross = [phi @ F.T for F in coefs]
    return NodeBasis(path, knots, K, phi, chol, coefs, cross, stop)


def _leaf_matrix(cfg, S, coefs, dense):
    kernel, params, taper = cfg.kernel, cfg.params, cfg.taper
    n = len(S)
    if dense:
        C = cov_matrix(kernel, params, S)
        for F in coefs:
            C -= F.T @ F
        if taper.family != ONE:
            C *= taper.from_dist(np.linalg.norm(S[:, None, :] - S[None, :, :], axis=2))
        C = 0.5 * (C + C.T)
        C[np.diag_indices(n)] += params.tau2
        return C
    rows, cols, dist = taper_pattern(taper, S)
    vals = cov_pairs(kernel, params, S, S, rows, cols)
    for F in coefs:
        vals -= np.einsum("ri,ri->i", F[:, rows], F[:, cols])
    vals *= taper.from_dist(dist)
    vals[rows == cols] += params.tau2
    return sp.csc_matrix((vals, (rows, cols)), shape=(n, n))


def _leaf_is_dense(cfg, S):
    n = len(S)
    if cfg.taper.family == ONE or n <= SMALL_LEAF:
        return True
    # cheap density estimate from the bounding box
    span = np.ptp(S, axis=0)
    gamma = cfg.taper.gamma
    frac = np.prod(np.minimum(2.0 * gamma, np.maximum(span, 1e-300)) / np.maximum(span, 1e-300))
    return frac > DENSE_FRACTION


def _build_leaf(cfg, nodes, path):
    ids = cfg.tree.assignments[path]
    S = cfg.tree.locations[ids]
    coefs = point_coefs(cfg, nodes, path, S, cfg.M)
    dense = _leaf_is_dense(cfg, S)
    return LeafBasis(path, ids, coefs, LeafFactor(_leaf_matrix(cfg, S, coefs, dense), path))


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def build_basis(cfg: ModelConfig, workers: int = 1, check_psd: bool = True,
                leaves: bool = True, paths=None) -> BasisCache:
    """Knot matrices, projections and leaf factorizations for every node.

    Resolutions are processed root to leaf; nodes within a resolution are
    independent. ``paths`` restricts construction to the listed non-leaf
    nodes and their ancestors (used by diagnostics that follow one branch).
    """
    tree = cfg.tree
    if cfg.mode != MLP:
        geom.require_nonempty_leaves(tree)
    keep = None
    if paths is not None:
        keep = {p[:k] for p in paths for k in range(len(p) + 1)}
    nodes: Dict[tuple, NodeBasis] = {}
    for m in range(cfg.M):
        level = [p for p in tree.nodes_at(m) if keep is None or p in keep]
        built = _map(lambda p: _build_node(cfg, nodes, p, check_psd), level, workers)
        for p, nb in zip(level, built):
            nodes[p] = nb
    leaf_map: Dict[tuple, LeafBasis] = {}
    if leaves and keep is None:
        if cfg.M == 0:
            # no projection: the single leaf carries the full covariance untapered
            cfg0 = dataclasses.replace(cfg, taper=TaperSpec(ONE))
            leaf_map[()] = _build_leaf(cfg0, nodes, ())
        else:
            lps = tree.leaves()
            for p, lb in zip(lps, _map(lambda p: _build_leaf(cfg, nodes, p), lps, workers)):
                leaf_map[p] = lb
    stats = {
        "leaf_nnz": int(sum(lb.sigma.nnz for lb in leaf_map.values())),
        "leaf_dense_entries": int(sum(len(lb.ids) ** 2 for lb in leaf_map.values())),
        "sparse_leaves": int(sum(lb.sigma.sparse for lb in leaf_map.values())),
        "ranks": {p: nb.rank for p, nb in nodes.items()},
    }
    return BasisCache(cfg, nodes, leaf_map, stats)


def khat_condition_numbers(cache: BasisCache, path) -> list:
    """Condition numbers of ``Phi K Phi^T`` along the ancestors of ``path``."""
    out = []
    for m in range(len(path)):
        L = cache.nodes[path[:m]].chol
        s = np.linalg.svd(L, compute_uv=False)
        out.append(float((s[0] / s[-1]) ** 2))
    return out


# ---------------------------------------------------------------- dense oracle

class DenseOracle:
    """Reference evaluation of the approximated covariance.

    Rebuilds every knot matrix with the direct recursion
    ``C_k(x, Q) = C_0(x, Q) - sum_l C_l(x, Q_l) Phi_l^T Khat_l Phi_l C_l(Q_l, Q)``
    using only the tree, knots, kernel, taper and the projection matrices.
    """

    def __init__(self, cache: BasisCache):
        cfg = cache.config
        self.tree = cfg.tree
        self.kernel, self.params, self.taper = cfg.kernel, cfg.params, cfg.taper
        self.M = cfg.M
        self.phi = {p: nb.phi for p, nb in cache.nodes.items()}
        self.knots = {p: nb.knots for p, nb in cache.nodes.items()}
        self._kk = {}  # node -> list of C_l(Q_{p[:l]}, Q_p) for l <= m
        self.khat = {}
        for m in range(self.M):
            for p in self.tree.nodes_at(m):
                if p not in self.phi:
                    continue
                Q = self.knots[p]
                rows = self.basis(p, Q, m)
                Km = self.C0(Q, Q)
                for l, b in enumerate(rows):
                    Km = Km - self.term(p, l, b, b)
                Km = 0.5 * (Km + Km.T)
                self._kk[p] = [b.T for b in rows] + [Km]
                self.khat[p] = np.linalg.inv(self.phi[p] @ Km @ self.phi[p].T)

    def C0(self, A, B):
        return cov_matrix(self.kernel, self.params, A, B)

    def basis(self, path, X, depth):
        """``[C_k(X, Q_{path[:k]}) for k < depth]``, each |X| x |Q|."""
        out = []
        for k in range(depth):
            anc = path[:k]
            b = self.C0(X, self.knots[anc])
            for l in range(k):
                node_l = path[:l]
                P = self.phi[node_l]
                b = b - out[l] @ P.T @ self.khat[node_l] @ P @ self._kk[anc][l]
            out.append(b)
        return out

    def term(self, path, k, bx, by):
        P = self.phi[path[:k]]
        return bx @ P.T @ self.khat[path[:k]] @ P @ by.T

    def leaf_of(self, X):
        return self.tree.locate(X)

    def cov_eval(self, s1, s2) -> float:
        s1 = np.asarray(s1, dtype=float).reshape(1, -1)
        s2 = np.asarray(s2, dtype=float).reshape(1, -1)
        if self.M == 0:
            return float(self.C0(s1, s2)[0, 0])
        p1, p2 = self.leaf_of(s1)[0], self.leaf_of(s2)[0]
        b1 = self.basis(p1, s1, self.M)
        b2 = self.basis(p2, s2, self.M)
        total = 0.0
        for m in range(self.M):
            if p1[:m] != p2[:m]:
                break
            total += float(self.term(p1, m, b1[m], b2[m])[0, 0])
        if p1 == p2:
            cm = float(self.C0(s1, s2)[0, 0])
            for m in range(self.M):
                cm -= float(self.term(p1, m, b1[m], b2[m])[0, 0])
            total += cm * float(self.taper.from_dist(np.linalg.norm(s1 - s2)))
        return total

    def terms(self, X, Y=None):
        """Per-resolution block matrices; the last entry is the tapered leaf term."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
        if self.M == 0:
            return [self.C0(X, Y)]
        px, py = self.leaf_of(X), self.leaf_of(Y)
        out = [np.zeros((len(X), len(Y))) for _ in range(self.M + 1)]
        leaves = sorted(set(px) | set(py))
        gx = {p: np.array([i for i, q in enumerate(px) if q == p], dtype=int) for p in leaves}
        gy = {p: np.array([i for i, q in enumerate(py) if q == p], dtype=int) for p in leaves}
        bx = {p: self.basis(p, X[gx[p]], self.M) for p in leaves if len(gx[p])}
        by = {p: self.basis(p, Y[gy[p]], self.M) for p in leaves if len(gy[p])}
        for a in bx:
            for b in by:
                shared = 0
                while shared < self.M and a[shared] == b[shared]:
                    shared += 1
                ix = np.ix_(gx[a], gy[b])
                for m in range(min(shared + 1, self.M)):
                    out[m][ix] = self.term(a, m, bx[a][m], by[b][m])
                if a == b:
                    cm = self.C0(X[gx[a]], Y[gy[b]])
                    for m in range(self.M):
                        cm = cm - out[m][ix]
                    d = np.linalg.norm(X[gx[a]][:, None, :] - Y[gy[b]][None, :, :], axis=2)
                    out[self.M][ix] = cm * self.taper.from_dist(d)
        return out

    def matrix(self, X, Y=None):
        return np.sum(self.terms(X, Y), axis=0)


def oracle(cache: BasisCache) -> DenseOracle:
    if cache._oracle is None:
        cache._oracle = DenseOracle(cache)
    return cache._oracle


def approx_cov_eval(cache: BasisCache, s1, s2) -> float:
    return oracle(cache).cov_eval(s1, s2)


def _check_cap(n, cap):
    if n > cap:
        raise ValueError(f"dense approximation limited to {cap} points, got {n}")


def approx_cov_matrix(cache: BasisCache, S, S2=None, cap: int = DENSE_CAP) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    _check_cap(len(S), cap)
    if S2 is not None:
        S2 = np.atleast_2d(np.asarray(S2, dtype=float))
        _check_cap(len(S2), cap)
        return oracle(cache).matrix(S, S2)
    C = oracle(cache).matrix(S)
    return 0.5 * (C + C.T)


def approx_cov_terms(cache: BasisCache, S, cap: int = DENSE_CAP) -> list:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    _check_cap(len(S), cap)
    return oracle(cache).terms(S)


def frobenius_gap(cache: BasisCache, S, cap: int = DENSE_CAP) -> float:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    C0 = cov_matrix(cache.config.kernel, cache.config.params, S)
    return float(np.linalg.norm(C0 - approx_cov_matrix(cache, S, cap=cap)))
