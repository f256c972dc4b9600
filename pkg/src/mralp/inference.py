"""Maximum-likelihood fitting, predictive scores and Gaussian process simulation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.stats import norm

from .kernels import CovParams, cov_matrix

XATOL = 1e-4
MAX_EVALS = 500
TAU2_FLOOR = 1e-8
# init * 10**(+-BOUND_DECADES) when bounds are not given
BOUND_DECADES = 3.0
SIM_CAP = 20000
_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    params_hat: CovParams
    final_loglik: float
    initial_loglik: float
    iterations: int
    evaluations: int
    converged: bool
    trace: list = field(default_factory=list)  # (CovParams, loglik) per evaluation

    def to_dict(self) -> dict:
        return dict(params=self.params_hat.to_dict(), final_loglik=self.final_loglik,
                    initial_loglik=self.initial_loglik, iterations=self.iterations,
                    evaluations=self.evaluations, converged=self.converged)


def default_bounds(init: CovParams, tau2_floor: float = TAU2_FLOOR):
    """Box of +-3 decades around ``init``; the nugget floor is ``tau2_floor * sigma2_init``."""
    x = init.as_vector()
    f = 10.0 ** BOUND_DECADES
    lo, hi = x / f, x * f
    lo[-1] = max(lo[-1], tau2_floor * init.sigma2)
    return lo, hi


def mle_fit(objective: Callable[[CovParams], float], init: CovParams, bounds=None,
            xatol: float = XATOL, max_evals: int = MAX_EVALS, fixed: Sequence[bool] = ()) -> FitResult:
    """Nelder-Mead over log parameters maximizing ``objective``.

    ``objective`` maps parameters to a log-likelihood and must be deterministic.
    ``bounds`` is a pair of arrays over ``(sigma2, theta..., tau2)``. ``fixed``
    masks coordinates held at their initial value.
    """
    x0 = init.as_vector()
    lo, hi = default_bounds(init) if bounds is None else (np.asarray(b, dtype=float) for b in bounds)
    lo, hi = np.broadcast_to(lo, x0.shape).astype(float), np.broadcast_to(hi, x0.shape).astype(float)
    if np.any(lo <= 0) or np.any(hi <= lo):
        raise ValueError("bounds must be positive with lo < hi")
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError(f"init {x0} is outside bounds [{lo}, {hi}]")
    mask = np.zeros(len(x0), bool)
    mask[:len(fixed)] = np.asarray(fixed, bool)
    free = ~mask
    if not free.any():
        raise ValueError("every parameter is fixed")

    trace = []

    def params_of(y):
        x = x0.copy()
        x[free] = np.clip(np.exp(y), lo[free], hi[free])
        return CovParams.from_vector(x)

    def neg(y):
        p = params_of(y)
        try:
            val = float(objective(p))
        except (np.linalg.LinAlgError, ArithmeticError, RuntimeError, ValueError):
            val = math.nan
        trace.append((p, val))
        return -val if math.isfinite(val) else math.inf

    y0 = np.log(x0[free])
    f0 = neg(y0)
    if not math.isfinite(f0):
        raise FitError(f"objective is not finite at the initial parameters {init}")
    bnds = optimize.Bounds(np.log(lo[free]), np.log(hi[free]))
    res = optimize.minimize(neg, y0, method="Nelder-Mead", bounds=bnds,
                            options=dict(xatol=xatol, fatol=math.inf, maxfev=max_evals - 1))
    y_best, f_best = (res.x, res.fun) if res.fun <= f0 else (y0, f0)
    p_best = params_of(y_best)
    at_lo = np.isclose(y_best, np.log(lo[free]), rtol=0, atol=1e-6)
    at_hi = np.isclose(y_best, np.log(hi[free]), rtol=0, atol=1e-6)
    if len(y_best) > 1 and np.all(at_lo | at_hi):
        raise FitError(f"every free parameter ended on a bound: {p_best}")
    return FitResult(p_best, -float(f_best), -f0, int(res.nit), len(trace),
                     bool(res.status == 0), trace)


# ---------------------------------------------------------------- scores

def crps_gaussian(mu, var, y):
    """Continuous ranked probability score of N(mu, var) at ``y`` (vectorized)."""
    var = np.asarray(var, dtype=float)
    if np.any(~(var > 0)):
        raise ValueError("var must be positive")
    sd = np.sqrt(var)
    z = (np.asarray(y, dtype=float) - np.asarray(mu, dtype=float)) / sd
    out = sd * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - _INV_SQRT_PI)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class PredictiveScore:
    mspe: float
    crps_mean: float
    log_score: Optional[float] = None


def evaluate(means, variances, truths, log_score: Optional[float] = None) -> PredictiveScore:
    """MSPE and mean CRPS of pointwise Gaussian predictions; the log-score is passed through."""
    m = np.asarray(means, dtype=float).ravel()
    v = np.asarray(variances, dtype=float).ravel()
    t = np.asarray(truths, dtype=float).ravel()
    if not (len(m) == len(v) == len(t)):
        raise ValueError(f"length mismatch: {len(m)} means, {len(v)} variances, {len(t)} truths")
    if len(m) == 0:
        raise ValueError("no predictions")
    return PredictiveScore(float(np.mean((m - t) ** 2)), float(np.mean(crps_gaussian(m, v, t))),
                           log_score)


# ---------------------------------------------------------------- simulation

def _factor(C, jitter):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    C[np.diag_indices_from(C)] += jitter
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"covariance factorization failed after jitter {jitter:.1e}") from exc


def gp_simulate(kernel, params: CovParams, S0, seed, return_latent: bool = False, cap: int = SIM_CAP):
    """Observations ``Y0 + eps`` at ``S0`` with ``Y0 ~ N(0, C0)`` and ``eps ~ N(0, tau2)``.

    Dense Cholesky, so memory is about n**2 doubles. With ``return_latent`` the
    pair ``(z, y0)`` is returned.
    """
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    n = len(S0)
    if n > cap:
        raise ValueError(f"dense simulation limited to {cap} points, got {n}")
    rng = np.random.default_rng(seed)
    e_lat = rng.standard_normal(n)
    e_nug = rng.standard_normal(n)
    if params.sigma2 == 0:
        y = np.zeros(n)
    else:
        L = _factor(cov_matrix(kernel, params, S0), 1e-10 * params.sigma2)
        y = L @ e_lat
    z = y + math.sqrt(params.tau2) * e_nug
    return (z, y) if return_latent else z


def simulate_many(kernel, params: CovParams, S0, seeds, cap: int = SIM_CAP) -> np.ndarray:
    """One observation vector per seed, sharing a single factorization (rows = replicates).

    Each row equals ``gp_simulate(kernel, params, S0, seed)`` for its seed.
    """
    S0 = np.atleast_2d(np.asarray(S0, dtype=float))
    n = len(S0)
    if n > cap:
        raise ValueError(f"dense simulation limited to {cap} points, got {n}")
    L = None if params.sigma2 == 0 else _factor(cov_matrix(kernel, params, S0), 1e-10 * params.sigma2)
    out = np.empty((len(seeds), n))
    for i, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        e_lat = rng.standard_normal(n)
        e_nug = rng.standard_normal(n)
        y = np.zeros(n) if L is None else L @ e_lat
        out[i] = y + math.sqrt(params.tau2) * e_nug
    return out


# ---------------------------------------------------------------- objectives

def exact_objective(kernel, S0, z):
    from .baselines import exact_loglik

    return lambda p: exact_loglik(kernel, p, S0, z)


def model_objective(cfg, z, workers: int = 1):
    """Log-likelihood of an approximate model, rebuilt per call with the config's seeds."""
    from . import fastpath
    from .approx import build_basis

    def f(p):
        cache = build_basis(cfg.with_params(p), workers=workers, check_psd=False)
        return fastpath.loglik(cache, z, workers).loglik

    return f


def replicate_se(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) / math.sqrt(len(v)))
