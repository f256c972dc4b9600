"""Simulate a field, fit nothing, and compare the fast approximation with the exact model.

    python3 demos/quickstart.py
"""
import time

import numpy as np

from mralp import fastpath
from mralp.approx import build_basis, make_config
from mralp.baselines import exact_loglik, exact_predict
from mralp.geom import Domain
from mralp.inference import evaluate, gp_simulate
from mralp.kernels import CovParams, KernelSpec, TaperSpec

rng = np.random.default_rng(0)
n, n_test = 3000, 200
kernel = KernelSpec("exponential")
params = CovParams(1.0, (0.05,), 0.5)
X = rng.uniform(0, 100, (n + n_test, 2))
z_all = gp_simulate(kernel, params, X, seed=1)
X_tr, z_tr, X_te, z_te = X[:n], z_all[:n], X[n:], z_all[n:]

t0 = time.perf_counter()
cfg = make_config(X_tr, domain=Domain((0, 0), (100, 100)), J=(2, 2), knot_sizes=(300, 100), kernel=kernel,
                  params=params, taper=TaperSpec("spherical", 5.0), ranks=(20, 20), seed=0)
cache = build_basis(cfg)
res = fastpath.loglik(cache, z_tr)
mean, var = fastpath.predict_points(cache, res.summaries, X_te)
t_fast = time.perf_counter() - t0

t0 = time.perf_counter()
ll_exact = exact_loglik(kernel, params, X_tr, z_tr)
m_ex, cov_ex = exact_predict(kernel, params, X_tr, z_tr, X_te)
t_exact = time.perf_counter() - t0

fast = evaluate(mean, var + params.tau2, z_te, res.loglik)
exact = evaluate(m_ex, np.diag(cov_ex) + params.tau2, z_te, ll_exact)
print(f"{'model':8s} {'loglik':>12s} {'MSPE':>8s} {'CRPS':>8s} {'seconds':>8s}")
print(f"{'exact':8s} {exact.log_score:12.2f} {exact.mspe:8.4f} {exact.crps_mean:8.4f} {t_exact:8.2f}")
print(f"{'mralp':8s} {fast.log_score:12.2f} {fast.mspe:8.4f} {fast.crps_mean:8.4f} {t_fast:8.2f}")
print("projection ranks per node:", cache.ranks())
