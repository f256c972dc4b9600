import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from helpers import EXP, GAUSS, UNIT, rel, uniform
from mralp import baselines, fastpath
from mralp.approx import MLP, approx_cov_matrix, build_basis, make_config
from mralp.baselines import (build_mlp, condition_number, condnum_lower, exact_loglik, exact_predict, mlp_cov,
                             mlp_loglik, mlp_predict)
from mralp.kernels import CovParams, TaperSpec, cov_matrix


def test_exact_single_point():
    p = CovParams(1.5, (1.0,), 0.5)
    assert exact_loglik(EXP, p, [[3.0, 4.0]], [0.0]) == pytest.approx(-0.5 * math.log(2 * math.pi * 2.0), rel=1e-15)


def test_exact_matches_scipy_density():
    X = uniform(100, 1)
    p = CovParams(1.2, (0.1,), 0.3)
    z = np.random.default_rng(0).standard_normal(100)
    C = cov_matrix(EXP, p, X) + 0.3 * np.eye(100)
    assert exact_loglik(EXP, p, X, z) == pytest.approx(multivariate_normal(np.zeros(100), C).logpdf(z), rel=1e-10)


def test_exact_prior_recovery_far_away():
    X = uniform(50, 2)
    p = CovParams(2.0, (5.0,), 0.1)
    mean, cov = exact_predict(EXP, p, X, np.ones(50), [[500.0, 500.0]])
    assert abs(mean[0]) < 1e-12 and cov[0, 0] == pytest.approx(2.0, rel=1e-12)


def test_exact_cap():
    with pytest.raises(ValueError):
        exact_loglik(EXP, CovParams(1.0), uniform(20, 3), np.zeros(20), cap=10)


def mlp_pair(n=300, r=12, gamma=8.0, seed=4, tau2=0.4):
    X = uniform(n, seed)
    p = CovParams(1.0, (2.5,), tau2)
    taper = TaperSpec("spherical", gamma)
    model = build_mlp(GAUSS, p, X, taper, r, seed=seed)
    cfg = make_config(X, domain=UNIT, kernel=GAUSS, params=p, taper=taper, ranks=(r,), mode=MLP, seed=seed)
    return model, build_basis(cfg), X


def test_mlp_dedicated_equals_generic():
    model, cache, X = mlp_pair()
    z = np.random.default_rng(1).standard_normal(len(X))
    assert mlp_loglik(model, z) == pytest.approx(fastpath.loglik(cache, z).loglik, rel=1e-8)
    S = np.random.default_rng(2).uniform(0, 100, (10, 2))
    mu, Psi = mlp_predict(model, z, S)
    mg, vg = fastpath.predict_points(cache, z, S)
    assert rel(mu, mg) <= 1e-8 and rel(np.diag(Psi), vg) <= 1e-8


def test_mlp_dedicated_equals_dense():
    model, cache, X = mlp_pair(n=200)
    z = np.random.default_rng(3).standard_normal(len(X))
    C = mlp_cov(model, X)
    assert rel(C, approx_cov_matrix(cache, X)) <= 1e-10
    Sig = C + model.params.tau2 * np.eye(len(X))
    ref = multivariate_normal(np.zeros(len(X)), Sig).logpdf(z)
    assert mlp_loglik(model, z) == pytest.approx(ref, rel=1e-8)


def test_full_rank_mlp_is_exact():
    X = uniform(60, 5)
    p = CovParams(1.0, (0.3,), 0.2)
    model = build_mlp(EXP, p, X, TaperSpec("spherical", 5.0), 60)
    z = np.random.default_rng(4).standard_normal(60)
    assert mlp_loglik(model, z) == pytest.approx(exact_loglik(EXP, p, X, z), rel=1e-8)
    assert np.max(np.abs(mlp_cov(model, X) - cov_matrix(EXP, p, X))) <= 1e-8


def test_condition_number():
    assert condition_number(np.eye(4)) == 1.0
    assert condition_number(np.diag([10.0, 1.0])) == pytest.approx(10.0)
    assert condition_number(3.7 * np.eye(3)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        condition_number(np.diag([1.0, -1.0]))


def test_condnum_comparison_rule():
    assert condnum_lower(2.0, 3.0)
    assert not condnum_lower(3.0, 2.0)
    assert condnum_lower(5.0, math.inf) and condnum_lower(5.0, math.nan)
    assert not condnum_lower(math.inf, math.nan)


def test_condnum_experiment_small():
    d = baselines.CondnumDesign(n=400, M=3, ranks=(5,), knot_sizes=(60, 30, 20), seeds=(0, 1))
    rows = baselines.condnum_experiment(d)
    assert len(rows) == 2 * 3
    cells = baselines.condnum_cells(rows)
    assert len(cells) == 3 and all("lower" in c for c in cells)


def test_gap_comparison_keys():
    d = baselines.GapDesign(n=200)
    g = baselines.gap_comparison(0, d)
    assert set(g) == {"mlp", "mra", "mralp"} and all(v > 0 for v in g.values())
