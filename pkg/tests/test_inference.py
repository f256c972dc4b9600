import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from helpers import EXP, uniform
from mralp.inference import (FitError, crps_gaussian, evaluate, exact_objective, gp_simulate, mle_fit,
                             model_objective, simulate_many)
from mralp.kernels import CovParams
from mralp.approx import make_config

from helpers import UNIT


def crps_quad(mu, sd, y):
    """Integral of (F(t) - 1{t >= y})^2 over the real line."""
    f = lambda t: norm.cdf(t, mu, sd) ** 2
    g = lambda t: (1.0 - norm.cdf(t, mu, sd)) ** 2
    a = integrate.quad(f, -np.inf, y, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    b = integrate.quad(g, y, np.inf, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return a + b


def test_crps_standard_value():
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(0.2336949772551091, abs=1e-15)
    assert crps_quad(0.0, 1.0, 0.0) == pytest.approx(0.2336950, abs=1e-7)


@pytest.mark.parametrize("z", np.linspace(-5, 5, 11))
def test_crps_matches_integration(z):
    assert abs(crps_gaussian(0.0, 1.0, z) - crps_quad(0.0, 1.0, z)) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 25), st.floats(-10, 10))
def test_crps_scale_equivariance(mu, var, y):
    sd = math.sqrt(var)
    assert crps_gaussian(mu, var, y) == pytest.approx(sd * crps_gaussian(0.0, 1.0, (y - mu) / sd), rel=1e-10, abs=1e-12)


def test_crps_grows_in_tails():
    v = [crps_gaussian(0.0, 1.0, y) for y in (0, 1, 2, 5, 10, 100)]
    assert all(b > a for a, b in zip(v, v[1:]))


def test_crps_needs_positive_variance():
    with pytest.raises(ValueError):
        crps_gaussian(0.0, 0.0, 1.0)


def test_evaluate_cases():
    t = np.array([1.0, -2.0, 0.5])
    s = evaluate(t, np.ones(3), t)
    assert s.mspe == 0.0
    assert evaluate([0.0], [1.0], [0.0]).crps_mean == pytest.approx(0.2336950, abs=1e-7)
    s = evaluate([0.0, 1.0], [1.0, 4.0], [2.0, 1.0], log_score=-3.0)
    assert s.mspe == pytest.approx(2.0) and s.log_score == -3.0
    with pytest.raises(ValueError):
        evaluate([0.0], [1.0], [0.0, 1.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_evaluate_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    m, v, t = rng.standard_normal(9), rng.uniform(0.1, 2, 9), rng.standard_normal(9)
    perm = rng.permutation(9)
    a, b = evaluate(m, v, t), evaluate(m[perm], v[perm], t[perm])
    assert a.mspe == pytest.approx(b.mspe, rel=1e-14) and a.crps_mean == pytest.approx(b.crps_mean, rel=1e-14)


def test_simulate_degenerate_and_reproducible():
    X = uniform(30, 0)
    assert np.array_equal(gp_simulate(EXP, CovParams(0.0, (1.0,), 0.0), X, 1), np.zeros(30))
    p = CovParams(1.0, (0.2,), 0.5)
    a, b = gp_simulate(EXP, p, X, 7), gp_simulate(EXP, p, X, 7)
    assert np.array_equal(a, b)
    assert np.array_equal(simulate_many(EXP, p, X, [7, 8])[0], a)


def test_simulated_variance():
    X = np.array([[0.0, 0.0], [50.0, 50.0]])
    p = CovParams(1.0, (5.0,), 0.5)
    Z = simulate_many(EXP, p, X, list(range(200)))
    v = np.mean(Z[:, 0] ** 2)
    # chi-square with 200 degrees of freedom: sd of the mean square is sqrt(2/200) * 1.5
    assert abs(v - 1.5) <= 5 * 1.5 * math.sqrt(2 / 200)


def test_effective_range_correlation():
    X = np.array([[0.0, 0.0], [0.6, 0.0]])
    p = CovParams(1.0, (5.0,), 0.0)
    Y = simulate_many(EXP, p, X, list(range(20000)))
    r = np.corrcoef(Y.T)[0, 1]
    assert abs(r - math.exp(-3.0)) <= 5 / math.sqrt(20000)
    assert math.exp(-3.0) < 0.05


def test_fit_improves_and_is_deterministic():
    X = uniform(300, 1)
    true = CovParams(1.0, (0.1,), 0.5)
    z = gp_simulate(EXP, true, X, 3)
    obj = exact_objective(EXP, X, z)
    assert obj(true) == obj(true)
    res = mle_fit(obj, CovParams(0.5, (0.3,), 0.2))
    assert res.final_loglik >= res.initial_loglik
    assert res.converged and res.evaluations <= 500
    assert res.final_loglik == pytest.approx(max(v for _, v in res.trace))


def test_fit_flat_direction_stays_bounded():
    f = lambda p: -math.log(p.sigma2) ** 2 - math.log(p.theta[0]) ** 2
    init = CovParams(2.0, (3.0,), 0.5)
    res = mle_fit(f, init, bounds=([0.01, 0.01, 0.1], [100.0, 100.0, 5.0]))
    assert res.converged
    assert 0.1 <= res.params_hat.tau2 <= 5.0
    assert res.params_hat.sigma2 == pytest.approx(1.0, abs=1e-3)


def test_fit_errors():
    with pytest.raises(FitError):
        mle_fit(lambda p: math.nan, CovParams(1.0, (1.0,), 0.1))
    with pytest.raises(ValueError):
        mle_fit(lambda p: 0.0, CovParams(1.0, (1.0,), 0.1), bounds=([2.0, 0.1, 0.01], [3.0, 2.0, 1.0]))
    with pytest.raises(FitError, match="bound"):
        mle_fit(lambda p: p.sigma2 + p.theta[0] + p.tau2, CovParams(1.0, (1.0,), 0.1),
                bounds=([0.5, 0.5, 0.05], [2.0, 2.0, 0.2]))


def test_model_objective_deterministic():
    X = uniform(200, 2)
    z = np.random.default_rng(0).standard_normal(200)
    cfg = make_config(X, domain=UNIT, J=(2,), knot_sizes=(40,), kernel=EXP, params=CovParams(1.0, (0.1,), 0.5),
                      ranks=(8,), taper=None)
    f = model_objective(cfg, z)
    p = CovParams(0.8, (0.2,), 0.4)
    assert f(p) == f(p)


def test_mle_recovers_truth_over_replicates():
    # reduced scale of the n=2000 study (see demos/mle_simulation.py), with an identifiable range
    true = CovParams(1.0, (0.1,), 0.5)
    est = []
    for i in range(10):
        X = np.random.default_rng([i, 0]).uniform(0, 100, (400, 2))
        z = gp_simulate(EXP, true, X, [i, 1])
        est.append(mle_fit(exact_objective(EXP, X, z), CovParams(0.8, (0.2,), 0.7)).params_hat.as_vector())
    est = np.array(est)
    se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
    assert np.all(np.abs(est.mean(axis=0) - true.as_vector()) <= 3 * se)
