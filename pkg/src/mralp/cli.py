"""Command line harness: data ingestion, configuration, model files and experiments.

Usage::

    mralp <task> --config run.yaml [--workers N] [--seed S] [--out DIR]

Tasks are fit, predict, evaluate, logscore, condnum, frobenius and timing.
Tables are tab separated, preceded by a ``# config:`` line carrying the
resolved configuration as JSON. Wall-clock times and the worker count go to
``run.json`` beside the artifact so repeated runs give identical tables.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass
from typing import Optional

import jsonschema
import numpy as np
import yaml

from . import approx, baselines, fastpath, geom, inference
from .kernels import CovParams, KernelSpec, TaperSpec

MODEL_FORMAT = "mralp-model"
MODEL_VERSION = 1
TASKS = ("fit", "predict", "evaluate", "logscore", "condnum", "frobenius", "timing")
MODES = ("mralp", "mra", "mlp", "exact")

# ---------------------------------------------------------------- schema

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_list = {"type": "array", "items": _num}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_MODEL_BLOCKS = {
    "kernel": _obj({"family": {"enum": ["exponential", "gaussian"]}, "length_scale": _num}),
    "params": _obj({"sigma2": _num, "theta": {"oneOf": [_num, _pos_list]}, "tau2": _num}, ["sigma2", "theta"]),
    "taper": _obj({"family": {"enum": ["spherical", "wendland2", "one"]}, "gamma": _num}),
    "partition": _obj({"J": {"type": "array", "items": _int, "minItems": 1},
                       "rule": {"enum": ["longest", "cycle", "quadtree"]},
                       "domain": _obj({"lo": _pos_list, "hi": _pos_list}, ["lo", "hi"])}),
    "knots": _obj({"sizes": {"type": "array", "items": {"type": ["integer", "null"]}}, "seed": _int}),
    "phi": _obj({"ranks": {"type": "array", "items": _int}, "epsilon": {"type": "array", "items": _num},
                 "c": _int, "seed": _int, "rank_overflow": {"enum": ["error", "clip"]}}),
}

_METHOD = _obj(dict(label={"type": "string"}, mode={"enum": list(MODES)}, **_MODEL_BLOCKS), ["mode"])

SCHEMA = _obj(dict(
    task={"enum": list(TASKS)},
    mode={"enum": list(MODES)},
    seed=_int,
    workers=_int,
    data=_obj({
        "csv": {"type": "string"},
        "coords": {"type": "array", "items": {"type": "string"}},
        "value": {"type": "string"},
        "log_transform": {"type": "boolean"},
        "center": {"type": "boolean"},
        "simulate": _obj({"n": _int, "side": _num, "dim": _int, "seed": _int}, ["n"]),
        "holdout": _obj({"fraction": _num, "seed": _int}, ["fraction"]),
    }),
    fit=_obj({"init": _MODEL_BLOCKS["params"], "lower": _pos_list, "upper": _pos_list,
              "max_evals": _int, "xatol": _num, "fixed": {"type": "array", "items": {"type": "boolean"}}}),
    predict=_obj({"csv": {"type": "string"}, "model": {"type": "string"}}),
    evaluate=_obj({"predictions": {"type": "string"}, "truths": {"type": "string"}}),
    logscore=_obj({"n": _int, "side": _num, "replicates": _int, "location_seed": _int,
                   "methods": {"type": "array", "items": _METHOD, "minItems": 1}}),
    condnum=_obj({"n": _int, "M": _int, "J": _int, "ranks": {"type": "array", "items": _int},
                  "knot_sizes": {"type": "array", "items": _int}, "seeds": {"type": "array", "items": _int},
                  "length_scale": _num, "theta": _num, "side": _num}),
    frobenius=_obj({"n": _int, "seeds": {"type": "array", "items": _int}, "gamma": _num,
                    "length_scale": _num, "theta": _num, "J": {"type": "array", "items": _int},
                    "mlp_rank": _int, "mra_knots": _int, "lp_ranks": {"type": "array", "items": _int}}),
    timing=_obj({"n": _int, "side": _num, "repeats": _int,
                 "methods": {"type": "array", "items": _METHOD, "minItems": 1}}),
    output=_obj({"dir": {"type": "string"}}),
    **_MODEL_BLOCKS,
))

DEFAULTS = {
    "mode": "mralp",
    "seed": 0,
    "kernel": {"family": "exponential", "length_scale": 1.0},
    "params": {"sigma2": 1.0, "theta": [5.0], "tau2": 0.5},
    "taper": {"family": "spherical", "gamma": 1.0},
    "partition": {"J": [2, 2], "rule": "longest"},
    "knots": {"sizes": [300, 100]},
    "phi": {"ranks": [10, 10], "rank_overflow": "error"},
}


class ConfigError(ValueError):
    pass


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict, task: Optional[str] = None, seed: Optional[int] = None) -> dict:
    """Validate against the schema and fill defaults. Raises ``ConfigError`` before any compute."""
    raw = {} if raw is None else raw
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if task is not None:
        if "task" in raw and raw["task"] != task:
            raise ConfigError(f"task {task!r} on the command line conflicts with config task {raw['task']!r}")
        cfg["task"] = task
    if cfg.get("task") not in TASKS:
        raise ConfigError("no task given")
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg.setdefault("knots", {}).setdefault("seed", cfg["seed"])
    cfg.setdefault("phi", {}).setdefault("seed", cfg["seed"])
    if cfg["task"] in ("fit", "predict") and "data" not in cfg:
        raise ConfigError(f"task {cfg['task']} needs a data block")
    data = cfg.get("data", {})
    if "csv" in data and "simulate" in data:
        raise ConfigError("data: give either csv or simulate, not both")
    if data and "csv" not in data and "simulate" not in data:
        raise ConfigError("data: needs csv or simulate")
    return cfg


def load_config(path: str, task=None, seed=None) -> dict:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return resolve_config(raw or {}, task, seed)


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    locations: np.ndarray
    values: np.ndarray
    offset: float = 0.0  # mean removed after the optional log transform
    log_transform: bool = False

    def back_transform(self, v):
        v = np.asarray(v, dtype=float) + self.offset
        return np.exp(v) if self.log_transform else v


def ingest_csv(path, coords=None, value=None, log_transform=False, center=False) -> Dataset:
    """Read coordinates and one value column from a headed CSV file.

    Without ``coords``/``value`` the last column is the value and the others are
    coordinates. The log transform, then centering, are applied in that order.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        value = header[-1] if value is None else value
        coords = [h for h in header if h != value] if coords is None else list(coords)
        missing = [c for c in list(coords) + [value] if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        if not coords:
            raise ValueError(f"{path}: no coordinate columns")
        idx = [header.index(c) for c in coords] + [header.index(value)]
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(row[i]) for i in idx]
            except (ValueError, IndexError):
                raise ValueError(f"{path}: line {line_no}: cannot parse numeric fields") from None
            if not all(math.isfinite(v) for v in vals):
                raise ValueError(f"{path}: line {line_no}: non-finite value")
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.array(rows)
    X, z = arr[:, :-1], arr[:, -1]
    _, counts = np.unique(X, axis=0, return_counts=True)
    if np.any(counts > 1):
        warnings.warn(f"{path}: {int(np.sum(counts > 1))} duplicated locations", stacklevel=2)
    if log_transform:
        if np.any(z <= 0):
            raise ValueError(f"{path}: log transform needs positive values")
        z = np.log(z)
    offset = 0.0
    if center:
        offset = float(np.mean(z))
        z = z - offset
    return Dataset(X, z, offset, bool(log_transform))


def _domain(cfg, X):
    dom = cfg.get("partition", {}).get("domain")
    if dom is not None:
        return geom.Domain(tuple(dom["lo"]), tuple(dom["hi"]))
    sim = cfg.get("data", {}).get("simulate")
    if sim is not None:
        side = float(sim.get("side", 100.0))
        return geom.Domain((0.0,) * X.shape[1], (side,) * X.shape[1])
    return geom.Domain.bounding(X)


def kernel_of(cfg) -> KernelSpec:
    k = cfg["kernel"]
    return KernelSpec(k.get("family", "exponential"), length_scale=float(k.get("length_scale", 1.0)))


def params_of(block) -> CovParams:
    return CovParams(block["sigma2"], tuple(np.atleast_1d(block["theta"])), block.get("tau2", 0.0))


def load_data(cfg):
    """(train, test) datasets; ``test`` is None without a holdout block."""
    d = cfg["data"]
    if "csv" in d:
        ds = ingest_csv(d["csv"], d.get("coords"), d.get("value"), d.get("log_transform", False),
                        d.get("center", False))
    else:
        sim = d["simulate"]
        side, dim = float(sim.get("side", 100.0)), int(sim.get("dim", 2))
        sseed = int(sim.get("seed", cfg["seed"]))
        X = np.random.default_rng([sseed, 0]).uniform(0.0, side, (int(sim["n"]), dim))
        z = inference.gp_simulate(kernel_of(cfg), params_of(cfg["params"]), X, [sseed, 1])
        ds = Dataset(X, z)
    ho = d.get("holdout")
    if ho is None:
        return ds, None
    n = len(ds.values)
    k = int(round(float(ho["fraction"]) * n))
    if not 1 <= k < n:
        raise ConfigError(f"holdout fraction {ho['fraction']} leaves no train or no test points")
    perm = np.random.default_rng([int(ho.get("seed", cfg["seed"])), 2]).permutation(n)
    te, tr = np.sort(perm[:k]), np.sort(perm[k:])
    mk = lambda ix: Dataset(ds.locations[ix], ds.values[ix], ds.offset, ds.log_transform)
    return mk(tr), mk(te)


# ---------------------------------------------------------------- models

def model_config(cfg, X, params=None, mode=None):
    """Approximate model configuration for locations ``X`` (not for mode exact)."""
    mode = cfg["mode"] if mode is None else mode
    params = params_of(cfg["params"]) if params is None else params
    part, kn, phi, tp = cfg["partition"], cfg["knots"], cfg["phi"], cfg["taper"]
    taper = TaperSpec(tp.get("family", "spherical"), float(tp.get("gamma", 1.0)))
    M = len(part["J"])
    sizes = kn.get("sizes")
    if mode != "mlp" and (sizes is None or len(sizes) < M):
        raise ConfigError(f"knots.sizes needs {M} entries for J={part['J']}")
    return approx.make_config(
        X, domain=_domain(cfg, X), J=tuple(part["J"]), rule=part.get("rule", "longest"),
        knot_sizes=None if sizes is None else tuple(sizes[:M]), kernel=kernel_of(cfg), params=params,
        taper=taper, ranks=phi.get("ranks"), epsilon=phi.get("epsilon"), c=phi.get("c"), mode=mode,
        seed=int(kn["seed"]), phi_seed=int(phi["seed"]), rank_overflow=phi.get("rank_overflow", "error"))


def _with_context(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except approx.BasisError:
        raise
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"{getattr(fn, '__name__', fn)}: {exc}") from exc


class Predictor:
    """A fitted model bound to its data, ready for pointwise prediction."""

    def __init__(self, cfg, train: Dataset, params: CovParams, workers: int = 1):
        self.cfg, self.train, self.params, self.workers = cfg, train, params, workers
        self.mode = cfg["mode"]
        self._summ = None
        if self.mode != "exact":
            mcfg = model_config(cfg, train.locations, params)
            self.cache = approx.build_basis(mcfg, workers=workers, check_psd=False)

    def loglik(self) -> float:
        if self.mode == "exact":
            return baselines.exact_loglik(kernel_of(self.cfg), self.params, self.train.locations, self.train.values)
        return self._summaries().loglik

    def _summaries(self):
        if self._summ is None:
            self._summ = fastpath.upward(self.cache, self.train.values, self.workers)
        return self._summ

    def predict(self, X):
        """Latent mean and variance at ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.mode == "exact":
            mean, cov = baselines.exact_predict(kernel_of(self.cfg), self.params, self.train.locations,
                                                self.train.values, X)
            return mean, np.diag(cov).copy()
        return fastpath.predict_points(self.cache, self._summaries(), X, self.workers)


# ---------------------------------------------------------------- model files

def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def persist_model(path, fit: inference.FitResult, cfg, train: Dataset) -> dict:
    """Write config, seeds, fitted parameters and training data with a sha256 checksum."""
    payload = dict(format=MODEL_FORMAT, version=MODEL_VERSION, config=_clean(cfg),
                   params=fit.params_hat.to_dict(), fit=fit.to_dict(),
                   data=dict(locations=train.locations.tolist(), values=train.values.tolist(),
                             offset=train.offset, log_transform=train.log_transform))
    doc = dict(payload, sha256=hashlib.sha256(_canonical(payload)).hexdigest())
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return doc


def load_model(path, workers: int = 1) -> Predictor:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: corrupted model file ({exc})") from None
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a model file")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"{path}: model version {doc.get('version')} != supported {MODEL_VERSION}")
    payload = {k: v for k, v in doc.items() if k != "sha256"}
    if hashlib.sha256(_canonical(payload)).hexdigest() != doc.get("sha256"):
        raise ValueError(f"{path}: checksum mismatch, file is corrupted or edited")
    d = doc["data"]
    train = Dataset(np.array(d["locations"], dtype=float), np.array(d["values"], dtype=float),
                    d["offset"], d["log_transform"])
    return Predictor(doc["config"], train, params_of(doc["params"]), workers)


# ---------------------------------------------------------------- artifacts

def _clean(cfg):
    return {k: v for k, v in cfg.items() if k not in ("workers", "output")}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, cfg, header, rows):
    with open(path, "w") as fh:
        fh.write("# config: " + json.dumps(_clean(cfg), sort_keys=True) + "\n")
        fh.write("\t".join(header) + "\n")
        for r in rows:
            fh.write("\t".join(_fmt(v) for v in r) + "\n")
    return path


def read_table(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    header = lines[0].split("\t")
    return header, [ln.split("\t") for ln in lines[1:] if ln]


# ---------------------------------------------------------------- tasks

def _objective(cfg, train, workers):
    if cfg["mode"] == "exact":
        return inference.exact_objective(kernel_of(cfg), train.locations, train.values)
    mcfg = model_config(cfg, train.locations)
    return inference.model_objective(mcfg, train.values, workers)


def task_fit(cfg, out, workers):
    train, _ = load_data(cfg)
    f = cfg.get("fit", {})
    init = params_of(f.get("init", cfg["params"]))
    bounds = None
    if "lower" in f or "upper" in f:
        lo, hi = inference.default_bounds(init)
        bounds = (np.asarray(f.get("lower", lo), float), np.asarray(f.get("upper", hi), float))
    res = inference.mle_fit(_objective(cfg, train, workers), init, bounds,
                            xatol=f.get("xatol", inference.XATOL), max_evals=f.get("max_evals", inference.MAX_EVALS),
                            fixed=f.get("fixed", ()))
    doc = dict(config=_clean(cfg), result=res.to_dict(),
               trace=[dict(params=p.to_dict(), loglik=v) for p, v in res.trace])
    with open(os.path.join(out, "fit.json"), "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    persist_model(os.path.join(out, "model.json"), res, cfg, train)
    return ["fit.json", "model.json"]


def _prediction_sites(cfg, test):
    p = cfg.get("predict", {})
    if "csv" in p:
        with open(p["csv"], newline="") as fh:
            rows = list(csv.reader(fh))
        return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if test is None:
        raise ConfigError("predict needs predict.csv or a data.holdout block")
    return test.locations


def task_predict(cfg, out, workers):
    p = cfg.get("predict", {})
    if "model" in p:
        pred = load_model(p["model"], workers)
        _, test = load_data(cfg) if "data" in cfg else (None, None)
    else:
        train, test = load_data(cfg)
        pred = Predictor(cfg, train, params_of(cfg["params"]), workers)
    X = _prediction_sites(cfg, test)
    mean, var = _with_context(pred.predict, X)
    tau2 = pred.params.tau2
    rows = [(*x, m, v, v + tau2) for x, m, v in zip(X, mean, var)]
    header = [f"x{i}" for i in range(X.shape[1])] + ["mean", "latent_var", "obs_var"]
    write_table(os.path.join(out, "predictions.csv"), cfg, header, rows)
    return ["predictions.csv"]


def task_evaluate(cfg, out, workers):
    e = cfg.get("evaluate", {})
    ppath = e.get("predictions", os.path.join(out, "predictions.csv"))
    if not os.path.exists(ppath):
        task_predict(cfg, out, workers)
        ppath = os.path.join(out, "predictions.csv")
    header, rows = read_table(ppath)
    arr = np.array(rows, dtype=float)
    d = header.index("mean")
    X, mean, var = arr[:, :d], arr[:, d], arr[:, header.index("obs_var")]
    if "truths" in e:
        truths = ingest_csv(e["truths"])
        tX, tz = truths.locations, truths.values
    else:
        _, test = load_data(cfg)
        if test is None:
            raise ConfigError("evaluate needs evaluate.truths or a data.holdout block")
        tX, tz = test.locations, test.values
    if len(tX) != len(X) or not np.allclose(tX, X, rtol=0, atol=1e-12):
        raise ValueError("truth locations do not match prediction locations")
    log_score = None
    if "data" in cfg:
        train, _ = load_data(cfg)
        log_score = Predictor(cfg, train, params_of(cfg["params"]), workers).loglik()
    sc = inference.evaluate(mean, var, tz, log_score)
    write_table(os.path.join(out, "scores.tsv"), cfg, ["mode", "n_test", "mspe", "crps", "log_score"],
                [(cfg["mode"], len(tz), sc.mspe, sc.crps_mean, "nan" if log_score is None else log_score)])
    return ["scores.tsv"]


def _method_cfg(cfg, method):
    blocks = {k: v for k, v in method.items() if k not in ("label", "mode")}
    m = _merge(cfg, blocks)
    m["mode"] = method["mode"]
    return m


def _label(method):
    return method.get("label", method["mode"])


def _sites(n, side, seed):
    return np.random.default_rng([seed, 0]).uniform(0.0, side, (n, 2))


def task_logscore(cfg, out, workers):
    ls = cfg.get("logscore", {})
    n, side = int(ls.get("n", 2000)), float(ls.get("side", 100.0))
    reps = int(ls.get("replicates", 50))
    methods = ls.get("methods", [{"mode": "exact"}, {"mode": "mralp"}])
    X = _sites(n, side, int(ls.get("location_seed", cfg["seed"])))
    true = params_of(cfg["params"])
    Z = inference.simulate_many(kernel_of(cfg), true, X, [[cfg["seed"], 1, i] for i in range(reps)])
    scores = {}
    for method in methods:
        mc = _method_cfg(cfg, method)
        mc.setdefault("partition", {})["domain"] = {"lo": [0.0, 0.0], "hi": [side, side]}
        if method["mode"] == "exact":
            vals = [baselines.exact_loglik(kernel_of(mc), true, X, z) for z in Z]
        else:
            cache = approx.build_basis(model_config(mc, X, true), workers=workers, check_psd=False)
            vals = [fastpath.loglik(cache, z, workers).loglik for z in Z]
        scores[_label(method)] = np.array(vals)
    ref = scores.get("exact")
    rows = []
    for name, v in scores.items():
        diff = (ref - v) if ref is not None else None
        rows.append((name, reps, float(np.mean(v)), inference.replicate_se(v),
                     "nan" if diff is None else float(np.mean(diff)),
                     "nan" if diff is None else inference.replicate_se(diff)))
    write_table(os.path.join(out, "logscore.tsv"), cfg,
                ["method", "replicates", "mean_log_score", "se", "exact_minus_method", "se_diff"], rows)
    return ["logscore.tsv"]


def task_condnum(cfg, out, workers):
    c = cfg.get("condnum", {})
    d = baselines.CondnumDesign()
    kw = {}
    for key in ("n", "M", "J", "side"):
        if key in c:
            kw[key] = c[key]
    for key in ("ranks", "knot_sizes", "seeds"):
        if key in c:
            kw[key] = tuple(c[key])
    if "length_scale" in c:
        kw["kernel"] = KernelSpec("gaussian", length_scale=float(c["length_scale"]))
    if "theta" in c:
        kw["params"] = CovParams(1.0, (float(c["theta"]),), 0.0)
    design = baselines.CondnumDesign(**{**d.__dict__, **kw})
    rows = baselines.condnum_experiment(design)
    write_table(os.path.join(out, "condnum.tsv"), cfg, ["method", "rank", "resolution", "mean_log10_cond"],
                [(r["method"], r["rank"], r["resolution"], r["mean_log10_cond"]) for r in rows])
    return ["condnum.tsv"]


def task_frobenius(cfg, out, workers):
    f = cfg.get("frobenius", {})
    kw = {}
    for key in ("n", "gamma", "mlp_rank", "mra_knots"):
        if key in f:
            kw[key] = f[key]
    for key in ("J", "lp_ranks"):
        if key in f:
            kw[key] = tuple(f[key])
    if "length_scale" in f:
        kw["kernel"] = KernelSpec("gaussian", length_scale=float(f["length_scale"]))
    if "theta" in f:
        kw["params"] = CovParams(1.0, (float(f["theta"]),), 0.0)
    design = baselines.GapDesign(**kw)
    rows = []
    for seed in f.get("seeds", list(range(20))):
        g = baselines.gap_comparison(seed, design)
        rows.append((seed, g["mlp"], g["mra"], g["mralp"], int(g["mralp"] < g["mra"] < g["mlp"])))
    write_table(os.path.join(out, "frobenius.tsv"), cfg, ["seed", "mlp", "mra", "mralp", "ordered"], rows)
    return ["frobenius.tsv"]


def time_pipeline(cfg, method, X, z, params, workers, repeats):
    """Mean wall-clock seconds of one log-likelihood evaluation, setup included."""
    mc = _method_cfg(cfg, method)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        if method["mode"] == "exact":
            baselines.exact_loglik(kernel_of(mc), params, X, z, cap=len(X))
        else:
            cache = approx.build_basis(model_config(mc, X, params), workers=workers, check_psd=False)
            fastpath.loglik(cache, z, workers)
        times.append(time.perf_counter() - t0)
    return float(np.mean(times))


def task_timing(cfg, out, workers):
    t = cfg.get("timing", {})
    n, side, repeats = int(t.get("n", 10000)), float(t.get("side", 100.0)), int(t.get("repeats", 3))
    if repeats < 3:
        raise ConfigError("timing.repeats must be at least 3")
    methods = t.get("methods", [{"mode": "exact"}, {"mode": "mralp"}])
    X = _sites(n, side, cfg["seed"])
    params = params_of(cfg["params"])
    rng = np.random.default_rng([cfg["seed"], 3])
    z = rng.standard_normal(n)
    cfg = _merge(cfg, {"partition": {"domain": {"lo": [0.0, 0.0], "hi": [side, side]}}})
    secs = {_label(m): time_pipeline(cfg, m, X, z, params, workers, repeats) for m in methods}
    ref = secs.get("exact")
    rows = [(k, n, repeats, v, "nan" if ref is None else v / ref) for k, v in secs.items()]
    write_table(os.path.join(out, "timing.tsv"), cfg, ["method", "n", "repeats", "mean_seconds", "relative_time"],
                rows)
    return ["timing.tsv"]


TASK_FUNCS = dict(fit=task_fit, predict=task_predict, evaluate=task_evaluate, logscore=task_logscore,
                  condnum=task_condnum, frobenius=task_frobenius, timing=task_timing)


def run_task(cfg: dict, out: str, workers: int = 1) -> list:
    """Run the configured task, writing artifacts and ``run.json`` under ``out``."""
    os.makedirs(out, exist_ok=True)
    t0 = time.perf_counter()
    files = TASK_FUNCS[cfg["task"]](cfg, out, workers)
    side = dict(task=cfg["task"], seed=cfg["seed"], knot_seed=cfg["knots"]["seed"], phi_seed=cfg["phi"]["seed"],
                workers=workers, wall_seconds=time.perf_counter() - t0, artifacts=files)
    with open(os.path.join(out, "run.json"), "w") as fh:
        json.dump(side, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return files


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mralp", description=__doc__.split("\n")[0])
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.task, args.seed)
    except (ConfigError, OSError) as exc:
        print(f"mralp: {exc}", file=sys.stderr)
        return 2
    workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
    if workers < 1:
        print("mralp: --workers must be >= 1", file=sys.stderr)
        return 2
    out = args.out or cfg.get("output", {}).get("dir", "out")
    try:
        files = run_task(cfg, out, workers)
    except (ConfigError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"mralp: {cfg['task']} failed: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(os.path.join(out, f))
    return 0


if __name__ == "__main__":
    sys.exit(main())
