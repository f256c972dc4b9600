"""Recursive log-likelihood and predictive distribution.

The upward pass solves each leaf covariance once, then folds the children of
every node into small matrices. All matrices indexed by ancestor levels are
carried in projected coordinates: ``A[k, l]`` stands for
``Phi_k B_k^T Sigma^{-1} B_l Phi_l^T`` and ``omega[k]`` for
``Phi_k B_k^T Sigma^{-1} z``. Every quantity of the recursion only ever
appears sandwiched between projection matrices, so nothing is lost.

Leaves are processed independently and nodes of one resolution are
processed independently; child contributions are always summed in ascending
child order, so results do not depend on the worker count.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .approx import BasisCache, _map, oracle, point_coefs
from .kernels import ONE, TaperSpec, cov_matrix, cov_pairs, taper_pattern

LOG2PI = float(np.log(2.0 * np.pi))


class FastPathError(RuntimeError):
    pass


@dataclass
class LeafSummary:
    path: tuple
    At: dict
    omega_t: list
    d: float
    u: float
    sig_G: list  # Sigma^{-1} B_k Phi_k^T per level
    sig_z: np.ndarray


@dataclass
class NodeSummary:
    path: tuple
    A: dict
    omega: list
    kt_inv: np.ndarray  # inverse of K-tilde: Phi K Phi^T + A[m, m]
    kt_cho: tuple
    At: dict
    omega_t: list
    d: float
    u: float

    def kt_solve(self, B):
        return sla.cho_solve(self.kt_cho, B, check_finite=False)


@dataclass
class Summaries:
    cache: BasisCache
    z: np.ndarray
    nodes: Dict[tuple, NodeSummary]
    leaves: Dict[tuple, LeafSummary]
    d0: float
    u0: float
    n: int

    @property
    def loglik(self) -> float:
        return -0.5 * self.n * LOG2PI - 0.5 * self.d0 - 0.5 * self.u0


@dataclass
class LoglikResult:
    d0: float
    u0: float
    loglik: float
    summaries: Summaries = field(repr=False)


def _leaf_taper(cache):
    return TaperSpec(ONE) if cache.M == 0 else cache.config.taper


def _projected(cache, path, coefs):
    """``B_k Phi_k^T`` from whitened coefficients, one n x r_k block per level."""
    return [(cache.nodes[path[:k]].chol @ F).T for k, F in enumerate(coefs)]


def _leaf_pass(cache, z, path):
    lb = cache.leaves[path]
    M = cache.M
    zp = z[lb.ids]
    G = _projected(cache, path, lb.coefs)
    W = np.column_stack(G + [zp]) if G else zp[:, None]
    Y = lb.sigma.solve(W)
    if Y.ndim == 1:
        Y = Y[:, None]
    offs = np.cumsum([0] + [g.shape[1] for g in G])
    sig_G = [Y[:, offs[k]:offs[k + 1]] for k in range(M)]
    sig_z = Y[:, -1]
    At = {(k, l): G[k].T @ sig_G[l] for k in range(M) for l in range(k, M)}
    omega_t = [G[k].T @ sig_z for k in range(M)]
    return LeafSummary(path, At, omega_t, lb.sigma.logdet, float(zp @ sig_z), sig_G, sig_z)


def _sum_ordered(items):
    total = items[0].copy() if isinstance(items[0], np.ndarray) else items[0]
    for x in items[1:]:
        total = total + x
    return total


def _node_pass(cache, path, kids):
    m = len(path)
    nb = cache.nodes[path]
    A = {(k, l): _sum_ordered([c.At[(k, l)] for c in kids]) for k in range(m + 1) for l in range(k, m + 1)}
    omega = [_sum_ordered([c.omega_t[k] for c in kids]) for k in range(m + 1)]
    kt_inv = nb.khat_inv() + A[(m, m)]
    kt_inv = 0.5 * (kt_inv + kt_inv.T)
    try:
        kt_cho = sla.cho_factor(kt_inv, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FastPathError(f"K-tilde factorization failed at node {path}") from exc
    logdet_kt_inv = 2.0 * float(np.sum(np.log(np.diag(kt_cho[0]))))
    logdet_khat_inv = 2.0 * float(np.sum(np.log(np.diag(nb.chol))))
    w = sla.cho_solve(kt_cho, omega[m], check_finite=False)
    d = _sum_ordered([c.d for c in kids]) + logdet_kt_inv - logdet_khat_inv
    u = _sum_ordered([c.u for c in kids]) - float(omega[m] @ w)
    At, omega_t = {}, []
    if m > 0:
        X = {l: sla.cho_solve(kt_cho, A[(l, m)].T, check_finite=False) for l in range(m)}
        for k in range(m):
            for l in range(k, m):
                At[(k, l)] = A[(k, l)] - A[(k, m)] @ X[l]
            omega_t.append(omega[k] - A[(k, m)] @ w)
    return NodeSummary(path, A, omega, kt_inv, kt_cho, At, omega_t, d, u)


def _check_z(cache, z):
    z = np.asarray(z, dtype=float).ravel()
    if len(z) != cache.tree.n:
        raise ValueError(f"z has length {len(z)}, expected {cache.tree.n}")
    if not np.all(np.isfinite(z)):
        raise ValueError("z contains non-finite values")
    return z


def upward(cache: BasisCache, z, workers: int = 1) -> Summaries:
    """Leaf solves followed by the per-resolution reductions up to the root.

    ``z`` is aligned with the locations the tree was built from.
    """
    z = _check_z(cache, z)
    tree = cache.tree
    if any(len(lb.ids) == 0 for lb in cache.leaves.values()):
        raise FastPathError("empty leaf")
    lps = sorted(cache.leaves)
    leaves = dict(zip(lps, _map(lambda p: _leaf_pass(cache, z, p), lps, workers)))
    nodes: Dict[tuple, NodeSummary] = {}
    below = dict(leaves)
    for m in range(cache.M - 1, -1, -1):
        level = tree.nodes_at(m)
        done = _map(lambda p: _node_pass(cache, p, [below[c] for c in tree.children(p)]), level, workers)
        below = {}
        for p, s in zip(level, done):
            nodes[p] = s
            below[p] = s
    root = nodes[()] if cache.M > 0 else leaves[()]
    return Summaries(cache, z, nodes, leaves, root.d, root.u, len(z))


def loglik(cache: BasisCache, z, workers: int = 1) -> LoglikResult:
    s = upward(cache, z, workers)
    return LoglikResult(s.d0, s.u0, s.loglik, s)


# ---------------------------------------------------------------- prediction

def _remainder_cross(cache, Fa, Fb, A, B, taper):
    """Tapered leaf-level remainder covariance between point sets A and B."""
    cfg = cache.config
    if taper.family == ONE:
        C = cov_matrix(cfg.kernel, cfg.params, A, B)
        for fa, fb in zip(Fa, Fb):
            C -= fa.T @ fb
        return C
    rows, cols, dist = taper_pattern(taper, A, B)
    vals = cov_pairs(cfg.kernel, cfg.params, A, B, rows, cols)
    for fa, fb in zip(Fa, Fb):
        vals -= np.einsum("ri,ri->i", fa[:, rows], fb[:, cols])
    vals *= taper.from_dist(dist)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(A), len(B)))


def predict(cache: BasisCache, z_or_summaries, leaf: tuple, s_pred, workers: int = 1):
    """Mean and covariance of the latent field at ``s_pred`` (all inside ``leaf``)."""
    s = z_or_summaries if isinstance(z_or_summaries, Summaries) else upward(cache, z_or_summaries, workers)
    leaf = tuple(leaf)
    if leaf not in cache.leaves:
        raise ValueError(f"{leaf} is not a leaf")
    X = np.atleast_2d(np.asarray(s_pred, dtype=float))
    if len(X) == 0:
        raise ValueError("no prediction locations")
    inside = cache.tree.contains(leaf, X)
    if not np.all(inside):
        bad = int(np.nonzero(~inside)[0][0])
        raise ValueError(f"prediction location {bad} is not in leaf {leaf}")
    return _predict_leaf(cache, s, leaf, X)


def _predict_leaf(cache, s, leaf, X):
    cfg = cache.config
    M = cache.M
    taper = _leaf_taper(cache)
    lb = cache.leaves[leaf]
    ls = s.leaves[leaf]
    S = cache.locations[lb.ids]
    Fx = point_coefs(cfg, cache.nodes, leaf, X, M)
    GP = _projected(cache, leaf, Fx)
    L = _remainder_cross(cache, Fx, lb.coefs, X, S, taper)
    V = cov_matrix(cfg.kernel, cfg.params, X)
    for f in Fx:
        V -= f.T @ f
    if taper.family != ONE:
        V *= taper.from_dist(np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2))
    Ld = L.toarray() if sp.issparse(L) else L
    mu = Ld @ ls.sig_z
    Psi = V - Ld @ lb.sigma.solve(Ld.T)
    Bt = [GP[k] - Ld @ ls.sig_G[k] for k in range(M)]
    for l in range(M - 1, -1, -1):
        ns = s.nodes[leaf[:l]]
        Bl = Bt[l]
        KB = ns.kt_solve(Bl.T)  # K-tilde (B-tilde Phi^T)^T
        Psi = Psi + Bl @ KB
        mu = mu + KB.T @ ns.omega[l]
        for k in range(l):
            Bt[k] = Bt[k] - KB.T @ ns.A[(k, l)].T
    Psi = 0.5 * (Psi + Psi.T)
    return mu, Psi


def predict_all(cache: BasisCache, z_or_summaries, queries: dict, workers: int = 1) -> dict:
    """Per-leaf predictions; identical to calling ``predict`` leaf by leaf."""
    s = z_or_summaries if isinstance(z_or_summaries, Summaries) else upward(cache, z_or_summaries, workers)
    keys = sorted(tuple(k) for k in queries)
    out = _map(lambda p: predict(cache, s, p, queries[p]), keys, workers)
    return dict(zip(keys, out))


def route(cache: BasisCache, X) -> dict:
    """Indices of ``X`` grouped by the leaf containing each row."""
    paths = cache.tree.locate(X)
    groups: dict = {}
    for i, p in enumerate(paths):
        groups.setdefault(p, []).append(i)
    return {p: np.array(ix, dtype=np.int64) for p, ix in sorted(groups.items())}


def predict_points(cache: BasisCache, z_or_summaries, X, workers: int = 1):
    """Pointwise predictive mean and latent variance for arbitrary locations in the domain."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    groups = route(cache, X)
    res = predict_all(cache, z_or_summaries, {p: X[ix] for p, ix in groups.items()}, workers)
    mean, var = np.empty(len(X)), np.empty(len(X))
    for p, ix in groups.items():
        mu, Psi = res[p]
        mean[ix], var[ix] = mu, np.diag(Psi)
    return mean, var


# ---------------------------------------------------------------- identity checks

@dataclass
class IdentityReport:
    rows: list = field(default_factory=list)  # (node, identity, error, passed)
    tol: float = 1e-8

    def add(self, node, name, err):
        self.rows.append((node, name, float(err), bool(err <= self.tol)))

    @property
    def passed(self) -> bool:
        return all(r[3] for r in self.rows)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r[3]]


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def _logdet(A):
    sign, val = np.linalg.slogdet(A)
    return val if sign > 0 else np.nan


def identity_checks(cache: BasisCache, z, tol: float = 1e-8, max_n: int = 500) -> IdentityReport:
    """Dense verification of the algebra behind the fast path at every non-leaf node.

    Checked per node: the K-tilde / K-hat exchange identity, the inverse and
    determinant expansions of the node covariance, the fast-path d and u
    against dense values, and ``Phi A Phi^T = K-tilde^{-1} - K-hat^{-1}``.
    The dense side rebuilds K-hat from the oracle, independent of the cache.
    """
    z = _check_z(cache, z)
    if cache.tree.n > max_n:
        raise ValueError(f"identity checks are limited to {max_n} points")
    rep = IdentityReport(tol=tol)
    s = upward(cache, z)
    orc = oracle(cache)
    tau2 = cache.config.params.tau2
    for m in range(cache.M):
        for p in cache.tree.nodes_at(m):
            ids = cache.tree.assignments[p]
            X = cache.locations[ids]
            zp = z[ids]
            terms = orc.terms(X)
            I = np.eye(len(X))
            V = np.sum(terms[m + 1:], axis=0) + tau2 * I
            Sig = V + terms[m]
            B = orc.basis(p, X, m + 1)[m]
            Phi = orc.phi[p]
            khat = orc.khat[p]
            khat_inv = np.linalg.inv(khat)
            PB = Phi @ B.T  # r x n
            Vi = np.linalg.inv(V)
            Si = np.linalg.inv(Sig)
            inner = khat_inv + PB @ Vi @ PB.T
            ns = s.nodes[p]
            kt = np.linalg.inv(ns.kt_inv)
            rep.add(p, "exchange", _rel(kt @ PB @ Vi, khat @ PB @ Si))
            rep.add(p, "inverse_expansion", _rel(Si, Vi - Vi @ PB.T @ np.linalg.solve(inner, PB @ Vi)))
            ld = _logdet(Sig)
            rhs = _logdet(inner) + _logdet(khat) + _logdet(V)
            rep.add(p, "determinant_expansion", abs(ld - rhs) / max(abs(ld), 1.0))
            rep.add(p, "fast_logdet", abs(ns.d - ld) / max(abs(ld), 1.0))
            u = float(zp @ Si @ zp)
            rep.add(p, "fast_quadratic", abs(ns.u - u) / max(abs(u), 1e-300))
            rep.add(p, "projected_A", _rel(PB @ Vi @ PB.T, ns.kt_inv - khat_inv))
    return rep
