"""Shared builders for the test suite."""
import numpy as np

from mralp import geom
from mralp.approx import MRALP, build_basis, make_config
from mralp.kernels import GAUSSIAN, CovParams, KernelSpec, TaperSpec

UNIT = geom.Domain((0.0, 0.0), (100.0, 100.0))
EXP = KernelSpec()
GAUSS = KernelSpec(GAUSSIAN, length_scale=100.0)


def uniform(n, seed, side=100.0):
    return np.random.default_rng([seed, 99]).uniform(0.0, side, (n, 2))


def small_model(n=200, M=2, J=2, kernel="exp", gamma=10.0, seed=0, rank=6, tau2=0.3, knots=None,
                mode=MRALP, workers=1):
    """A built cache on uniform points with moderately correlated fields."""
    X = uniform(n, seed)
    if kernel == "exp":
        k, p = EXP, CovParams(1.3, (0.08,), tau2)
    else:
        k, p = GAUSS, CovParams(0.9, (2.5,), tau2)
    knots = knots or tuple(max(12, n // (4 * (m + 1))) for m in range(M))
    cfg = make_config(X, domain=UNIT, J=(J,) * M, knot_sizes=knots, kernel=k, params=p,
                      taper=TaperSpec("spherical", gamma), ranks=(rank,) * M, mode=mode, seed=seed,
                      rank_overflow="clip")
    return build_basis(cfg, workers=workers), X


def rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300))
