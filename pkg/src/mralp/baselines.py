"""Exact Gaussian process, dedicated MLP path and comparison diagnostics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import geom
from .approx import (MLP, MRA, MRALP, BasisError, LeafFactor, _build_node, build_basis,
                     frobenius_gap, make_config)
from .kernels import (GAUSSIAN, CovParams, KernelSpec, TaperSpec, cov_matrix, cov_pairs,
                      taper_pattern)
from .rangefinder import rank_targeted_phi

EXACT_CAP = 5000
LOG2PI = math.log(2.0 * math.pi)


def _dense_factor(kernel, params, S0, cap):
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    if len(S0) > cap:
        raise ValueError(f"exact GP limited to {cap} points, got {len(S0)}")
    C = cov_matrix(kernel, params, S0)
    C[np.diag_indices_from(C)] += params.tau2
    try:
        return S0, sla.cho_factor(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("exact covariance is not positive definite "
                                    "(duplicated locations with zero nugget?)") from exc


def exact_loglik(kernel, params, S0, z, cap: int = EXACT_CAP) -> float:
    _, cho = _dense_factor(kernel, params, S0, cap)
    z = np.asarray(z, dtype=float).ravel()
    logdet = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    quad = float(z @ sla.cho_solve(cho, z, check_finite=False))
    return -0.5 * len(z) * LOG2PI - 0.5 * logdet - 0.5 * quad


def exact_predict(kernel, params, S0, z, S_pred, cap: int = EXACT_CAP):
    """Mean and covariance of the latent field at ``S_pred`` given all observations."""
    S0, cho = _dense_factor(kernel, params, S0, cap)
    X = np.atleast_2d(np.asarray(S_pred, dtype=float))
    Cxs = cov_matrix(kernel, params, X, S0)
    W = sla.cho_solve(cho, Cxs.T, check_finite=False)
    mean = W.T @ np.asarray(z, dtype=float).ravel()
    cov = cov_matrix(kernel, params, X) - Cxs @ W
    return mean, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------- MLP

@dataclass
class MlpModel:
    kernel: KernelSpec
    params: CovParams
    taper: TaperSpec
    S0: np.ndarray
    phi: np.ndarray  # r0 x n
    khat_inv: np.ndarray  # Phi C0 Phi^T
    U: np.ndarray  # C0(S0, S0) Phi^T, n x r0
    sparse: LeafFactor  # C_sparse + tau2 I

    @property
    def rank(self):
        return self.phi.shape[0]


def build_mlp(kernel, params, S0, taper, r0: int, seed: int = 0, c=None) -> MlpModel:
    """Whole-domain projection at rank ``r0`` plus a tapered correction.

    Probes are keyed to the root node, so the projection matches the generic
    path run in MLP mode with the same seed.
    """
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    C0 = cov_matrix(kernel, params, S0)
    phi = rank_targeted_phi(C0, r0, seed=seed, path=(), c=c).rows
    U = C0 @ phi.T
    khat_inv = phi @ U
    khat_inv = 0.5 * (khat_inv + khat_inv.T)
    # C_tau0 entries on the taper pattern: U khat U^T, via a triangular factor
    R = np.linalg.cholesky(khat_inv)
    W = sla.solve_triangular(R, U.T, lower=True)
    rows, cols, dist = taper_pattern(taper, S0)
    vals = C0[rows, cols] - np.einsum("ri,ri->i", W[:, rows], W[:, cols])
    vals *= taper.from_dist(dist)
    vals[rows == cols] += params.tau2
    n = len(S0)
    Cs = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
    return MlpModel(kernel, params, taper, S0, phi, khat_inv, U, LeafFactor(Cs, ("mlp",)))


def _mlp_inner(model):
    SU = model.sparse.solve(model.U)
    G = model.khat_inv + model.U.T @ SU
    return SU, sla.cho_factor(0.5 * (G + G.T), lower=True)


def mlp_loglik(model: MlpModel, z) -> float:
    """Log-likelihood through the rank-r0 inverse and determinant expansions."""
    z = np.asarray(z, dtype=float).ravel()
    SU, Gc = _mlp_inner(model)
    Sz = model.sparse.solve(z)
    w = model.U.T @ Sz
    logdet = (model.sparse.logdet - 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(model.khat_inv)))))
              + 2.0 * float(np.sum(np.log(np.diag(Gc[0])))))
    quad = float(z @ Sz - w @ sla.cho_solve(Gc, w))
    return -0.5 * len(z) * LOG2PI - 0.5 * logdet - 0.5 * quad


def mlp_cov(model: MlpModel, X, Y=None) -> np.ndarray:
    """Dense MLP covariance between location sets (desk scale)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=float))
    k, p = model.kernel, model.params
    Px = cov_matrix(k, p, X, model.S0) @ model.phi.T
    Py = cov_matrix(k, p, Y, model.S0) @ model.phi.T
    Ct = Px @ np.linalg.solve(model.khat_inv, Py.T)
    C0 = cov_matrix(k, p, X, Y)
    d = np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    return Ct + (C0 - Ct) * model.taper.from_dist(d)


def mlp_predict(model: MlpModel, z, S_pred):
    z = np.asarray(z, dtype=float).ravel()
    X = np.atleast_2d(np.asarray(S_pred, dtype=float))
    SU, Gc = _mlp_inner(model)
    Cxs = mlp_cov(model, X, model.S0)

    def sigma_solve(B):
        SB = model.sparse.solve(B)
        return SB - SU @ sla.cho_solve(Gc, model.U.T @ SB)

    mean = Cxs @ sigma_solve(z)
    cov = mlp_cov(model, X) - Cxs @ sigma_solve(Cxs.T)
    return mean, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------- condition numbers

def condition_number(matrix) -> float:
    """Ratio of extreme eigenvalues of a symmetric positive definite matrix."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    if ev[0] <= 0:
        raise ValueError(f"matrix is not positive definite (min eigenvalue {ev[0]:.3e})")
    return float(ev[-1] / ev[0])


@dataclass
class CondnumDesign:
    n: int = 2000
    M: int = 5
    J: int = 2
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec(GAUSSIAN, length_scale=100.0))
    params: CovParams = field(default_factory=lambda: CovParams(1.0, (2.5,), 0.0))
    ranks: tuple = (5, 10, 15)
    knot_sizes: tuple = (300, 100, 50, 30, 20)
    seeds: tuple = tuple(range(10))
    side: float = 100.0


def _path_log10_cond(cfg, path_len):
    """log10 condition numbers of Phi K Phi^T along nodes (), (1,), (1,1), ...

    If a node's matrix is numerically not positive definite the value is
    ``inf`` and deeper nodes, which cannot be formed, are ``nan``.
    """
    nodes, out = {}, []
    for m in range(path_len):
        p = (1,) * m
        try:
            nb = _build_node(cfg, nodes, p, check_psd=False)
        except BasisError:
            out.extend([math.inf] + [math.nan] * (path_len - m - 1))
            break
        nodes[p] = nb
        try:
            out.append(math.log10(condition_number(nb.khat_inv())))
        except ValueError:
            out.append(math.inf)
    return out


def condnum_experiment(design: CondnumDesign = CondnumDesign(), methods=(MRA, MRALP)) -> list:
    """Mean log10 condition numbers per (method, rank, resolution) over seeded datasets.

    M-RA uses ``rank`` random knots per node with identity projections;
    M-RA-lp uses ``design.knot_sizes`` knots and rank-targeted projections.
    """
    dom = geom.Domain((0.0, 0.0), (design.side, design.side))
    J = (design.J,) * design.M
    rows = []
    for method in methods:
        for r in design.ranks:
            per_seed = []
            for seed in design.seeds:
                rng = np.random.default_rng([seed, 7])
                X = rng.uniform(0.0, design.side, (design.n, 2))
                if method == MRA:
                    cfg = make_config(X, domain=dom, J=J, knot_sizes=(r,) * design.M, kernel=design.kernel,
                                      params=design.params, mode=MRA, seed=seed)
                else:
                    cfg = make_config(X, domain=dom, J=J, knot_sizes=design.knot_sizes, kernel=design.kernel,
                                      params=design.params, taper=TaperSpec(), ranks=(r,) * design.M,
                                      mode=MRALP, seed=seed)
                per_seed.append(_path_log10_cond(cfg, design.M))
            arr = np.array(per_seed)
            for m in range(design.M):
                col = arr[:, m]
                rows.append(dict(method=method, rank=r, resolution=m, mean_log10_cond=float(np.mean(col)),
                                 values=[float(v) for v in col]))
    return rows


def condnum_lower(lp_value: float, ref_value: float) -> bool:
    """True when the first mean log10 condition number is finite and below the reference.

    A non-finite reference (its matrix could not be factorized or formed) counts
    as worse than any finite value; two non-finite values are not ordered.
    """
    if not math.isfinite(lp_value):
        return False
    return (not math.isfinite(ref_value)) or lp_value < ref_value


def condnum_cells(rows) -> list:
    """Pair M-RA and M-RA-lp rows per (rank, resolution) with the comparison outcome."""
    by = {(r["method"], r["rank"], r["resolution"]): r["mean_log10_cond"] for r in rows}
    out = []
    for (method, rank, res), v in sorted(by.items(), key=lambda kv: (kv[0][1], kv[0][2])):
        if method != MRALP or (MRA, rank, res) not in by:
            continue
        ref = by[(MRA, rank, res)]
        out.append(dict(rank=rank, resolution=res, mra=ref, mralp=v, lower=condnum_lower(v, ref)))
    return out


# ---------------------------------------------------------------- covariance gap comparison

@dataclass
class GapDesign:
    n: int = 500
    side: float = 100.0
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec(GAUSSIAN, length_scale=1.0))
    params: CovParams = field(default_factory=lambda: CovParams(1.0, (0.002,), 0.0))
    gamma: float = 10.0
    J: tuple = (2, 2)
    mlp_rank: int = 15
    mra_knots: int = 16
    lp_ranks: tuple = (16, 15)


def gap_comparison(seed: int, design: GapDesign = GapDesign()) -> dict:
    """Frobenius gaps of the MLP, M-RA and M-RA-lp covariance matrices on one draw."""
    rng = np.random.default_rng([seed, 11])
    X = rng.uniform(0.0, design.side, (design.n, 2))
    dom = geom.Domain((0.0, 0.0), (design.side, design.side))
    taper = TaperSpec("spherical", design.gamma)
    out = {}
    mlp = make_config(X, domain=dom, kernel=design.kernel, params=design.params, taper=taper,
                      ranks=(design.mlp_rank,), mode=MLP, seed=seed)
    M = len(design.J)
    mra = make_config(X, domain=dom, J=design.J, knot_sizes=(design.mra_knots,) * M,
                      kernel=design.kernel, params=design.params, mode=MRA, seed=seed)
    lp = make_config(X, domain=dom, J=design.J, knot_sizes=(None,) * M, kernel=design.kernel,
                     params=design.params, taper=taper, ranks=design.lp_ranks, mode=MRALP, seed=seed)
    for name, cfg in ((MLP, mlp), (MRA, mra), (MRALP, lp)):
        out[name] = frobenius_gap(build_basis(cfg, leaves=False), X)
    return out
