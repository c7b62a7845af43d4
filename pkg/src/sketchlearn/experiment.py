"""Experiment pipeline: data -> positions -> values -> evaluation -> report.

Every stage reads the artifacts written by earlier stages under the output
directory, so a run can be resumed stage by stage:

    out/data/                 ensemble (.bin matrices + manifest.json)
    out/positions/<unit>.json learned position plans and their sketches
    out/values/<unit>.json    sketches with learned values, plus <unit>.csv traces
    out/results.csv           task,method,m,trial,test_index,error
    out/aggregate.json        {"results": [...], "timing": {...}}
    out/timing/*.json         wall-clock timings, kept out of the files above

A unit is one (method, m, trial) triple.
"""
from concurrent.futures import ProcessPoolExecutor
import csv
import math
from pathlib import Path
import time

import numpy as np

from .datagen import DistributionSpec, generate, load_ensemble, save_ensemble
from .errors import DivergenceError, RankDeficiencyError
from .io import load_json, save_json
from .lra import SketchSet, lra_one_sided, lra_two_sided
from .positions import (PositionPlan, greedy_positions, heavy_rows_plan, inner_product_positions)
from .second_order import (ConstrainedLsProblem, L1Ball, NuclearBall, classical_source, fast_regression_solve,
                           heavy_rows_source, ihs_solve)
from .sketch import CountSketch, random_countsketch, sketch_from_dict, sketch_to_dict
from .values import SgdConfig, make_loss, optimize_values, write_trace

TASKS = ("lra_one", "lra_two", "ihs_lasso", "ihs_nuclear", "fast_regression", "fewshot")
METHODS = ("classical", "greedy", "inner_product", "heavy_rows", "heavy_rows_plus_values")
POSITION_METHODS = ("greedy", "inner_product", "heavy_rows", "heavy_rows_plus_values")
VALUE_METHODS = ("greedy", "inner_product", "heavy_rows_plus_values")
IHS_TASKS = ("ihs_lasso", "ihs_nuclear")
DEFAULT_VALUE_LOSS = {"lra_one": "fewshot", "lra_two": "fewshot", "fewshot": "fewshot",
                      "ihs_lasso": "subspace", "ihs_nuclear": "subspace", "fast_regression": "subspace"}


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def normalize_config(cfg, seed=None, out=None):
    """Validate a config dict and fill defaults; raises ConfigError."""
    _require(isinstance(cfg, dict), "config must be a JSON object")
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)
    cfg.setdefault("seed", 0)
    cfg.setdefault("out", "results")
    _require(cfg.get("task") in TASKS, f"task must be one of {TASKS}")
    methods = cfg.get("methods")
    _require(isinstance(methods, list) and methods, "methods must be a non-empty list")
    _require(all(x in METHODS for x in methods), f"methods must be drawn from {METHODS}")
    _require(int(cfg.setdefault("trials", 1)) >= 1, "trials must be at least 1")
    dist = dict(cfg.get("distribution") or {})
    _require("kind" in dist and "n" in dist and "d" in dist, "distribution needs kind, n and d")
    dist.setdefault("seed", cfg["seed"])
    try:
        spec = DistributionSpec(**dist)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"distribution: {exc}") from None
    _require(spec.n_test >= 1, "distribution needs n_test >= 1")
    cfg["distribution"] = spec.to_dict()
    if "m" in cfg:
        ms = cfg["m"] if isinstance(cfg["m"], list) else [cfg["m"]]
    elif "m_multiples" in cfg:
        ms = [int(c * spec.d) for c in cfg["m_multiples"]]
    else:
        raise ConfigError("give sketch sizes as m or m_multiples")
    _require(all(int(m) >= 1 for m in ms), "sketch sizes must be positive")
    cfg["m"] = [int(m) for m in ms]
    cfg.setdefault("k", min(spec.d, spec.n))
    _require(1 <= int(cfg["k"]) <= min(spec.n, spec.d), "k must lie in [1, min(n, d)]")
    task = cfg["task"]
    if task in IHS_TASKS:
        _require(spec.kind == "lasso_planted", f"{task} needs lasso_planted data")
    if task == "ihs_nuclear":
        p = spec.params
        _require(p.get("d1", 0) * p.get("d2", 0) == spec.d, "ihs_nuclear needs params d1*d2 == d")
    cfg.setdefault("value_loss", DEFAULT_VALUE_LOSS[task])
    _require(cfg["value_loss"] in ("fewshot", "subspace", "empirical_lra"), "unknown value_loss")
    sgd = dict(cfg.get("sgd") or {})
    try:
        SgdConfig(**{k: sgd[k] for k in ("lr", "iters", "batch_size") if k in sgd})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sgd: {exc}") from None
    cfg["sgd"] = sgd
    cfg.setdefault("ihs", {})
    cfg["ihs"].setdefault("T", 7)
    cfg["ihs"].setdefault("pg_iters", 200)
    cfg.setdefault("fast_regression", {})
    cfg["fast_regression"].setdefault("lr", 1.0)
    cfg["fast_regression"].setdefault("iters", 50)
    cfg.setdefault("heavy_fraction", 0.3)
    cfg.setdefault("threshold_mult", 5.0)
    cfg.setdefault("greedy_order", "nonincreasing_norm")
    return cfg


def _unit_name(method, m, trial):
    return f"{method}_m{m}_t{trial}"


def _units(cfg, methods=None):
    methods = methods or cfg["methods"]
    return [(meth, m, t) for meth in methods for m in cfg["m"] for t in range(int(cfg["trials"]))]


def _sides(cfg):
    return ("S", "R") if cfg["task"] == "lra_two" else ("S",)


def _side_mats(mats, side):
    return [A.T for A in mats] if side == "R" else mats


def _unit_seed(cfg, m, trial, tag):
    return [int(cfg["seed"]), int(m), int(trial), tag]


def _int_seed(parts):
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


# --- stage: data -----------------------------------------------------------

def stage_gen_data(cfg):
    spec = DistributionSpec(**cfg["distribution"])
    ts, bs = generate(spec)
    save_ensemble(Path(cfg["out"]) / "data", spec, ts, bs)


def _load_data(cfg):
    path = Path(cfg["out"]) / "data"
    if not (path / "manifest.json").exists():
        raise MissingArtifact(str(path / "manifest.json"))
    return load_ensemble(path)


# --- stage: positions ------------------------------------------------------

def _train_positions_unit(args):
    cfg, (method, m, trial) = args
    _, ts, _ = _load_data(cfg)
    k = int(cfg["k"])
    t0 = time.perf_counter()
    out = {"method": method, "m": m, "trial": trial, "sides": {}}
    for side in _sides(cfg):
        mats = _side_mats(ts.train_matrices, side)
        seed = _unit_seed(cfg, m, trial, 1 if side == "S" else 2)
        kk = min(k, *mats[0].shape)
        if method == "greedy":
            plan = greedy_positions(mats, m, kk, order=cfg["greedy_order"])
            S = plan.to_countsketch()
        elif method == "inner_product":
            S, _, meta = inner_product_positions(np.mean(mats, axis=0), min(m, mats[0].shape[0]), kk, seed)
            plan = PositionPlan(S.m, S.p, np.where(np.asarray(meta["signs"]) < 0, -1.0, 1.0), "inner_product")
        else:
            plan, S = heavy_rows_plan(mats, m, cfg["heavy_fraction"], cfg["threshold_mult"], seed)
        entry = {"plan": plan.to_dict(), "sketch": sketch_to_dict(S)}
        if method.startswith("heavy_rows"):
            entry["heavy"] = plan.meta["heavy"]
        out["sides"][side] = entry
    return _unit_name(method, m, trial), out, time.perf_counter() - t0


def stage_train_positions(cfg, jobs=1):
    units = _units(cfg, [x for x in cfg["methods"] if x in POSITION_METHODS])
    root = Path(cfg["out"])
    _load_data(cfg)
    timing = {}
    for name, art, secs in _map(_train_positions_unit, [(cfg, u) for u in units], jobs):
        save_json(root / "positions" / f"{name}.json", art)
        timing[name] = secs
    save_json(root / "timing" / "positions.json", timing)


def _load_positions(cfg, method, m, trial):
    path = Path(cfg["out"]) / "positions" / f"{_unit_name(method, m, trial)}.json"
    if not path.exists():
        raise MissingArtifact(str(path))
    return load_json(path)


# --- stage: values ---------------------------------------------------------

def _train_values_unit(args):
    cfg, (method, m, trial) = args
    _, ts, _ = _load_data(cfg)
    pos = _load_positions(cfg, method, m, trial)
    sgd = SgdConfig(seed=_int_seed(_unit_seed(cfg, m, trial, 3)),
                    **{k: cfg["sgd"][k] for k in ("lr", "iters", "batch_size") if k in cfg["sgd"]})
    t0 = time.perf_counter()
    out = {"method": method, "m": m, "trial": trial, "sides": {}}
    traces = {}
    for side in _sides(cfg):
        mats = _side_mats(ts.train_matrices, side)
        loss = make_loss(cfg["value_loss"], min(int(cfg["k"]), *mats[0].shape))
        S0 = sketch_from_dict(pos["sides"][side]["sketch"])
        S0 = S0 if isinstance(S0, CountSketch) else S0.as_countsketch()
        try:
            fit = optimize_values(S0, mats, loss, sgd)
            out["sides"][side] = {"sketch": sketch_to_dict(fit.sketch), "best_iter": fit.best_iter,
                                  "status": "ok"}
            traces[side] = fit.trace
        except (DivergenceError, RankDeficiencyError, ValueError) as exc:
            out["sides"][side] = {"status": "failed", "reason": str(exc).splitlines()[0]}
            traces[side] = getattr(exc, "trace", [])
        if "heavy" in pos["sides"][side]:
            out["sides"][side]["heavy"] = pos["sides"][side]["heavy"]
    return _unit_name(method, m, trial), out, traces, time.perf_counter() - t0


def stage_train_values(cfg, jobs=1):
    units = _units(cfg, [x for x in cfg["methods"] if x in VALUE_METHODS])
    for u in units:
        _load_positions(cfg, *u)
    root = Path(cfg["out"])
    timing = {}
    for name, art, traces, secs in _map(_train_values_unit, [(cfg, u) for u in units], jobs):
        save_json(root / "values" / f"{name}.json", art)
        for side, trace in traces.items():
            write_trace(root / "values" / f"{name}_{side}.csv", trace)
        timing[name] = secs
    save_json(root / "timing" / "values.json", timing)


def _load_values(cfg, method, m, trial, required):
    path = Path(cfg["out"]) / "values" / f"{_unit_name(method, m, trial)}.json"
    if not path.exists():
        if required:
            raise MissingArtifact(str(path))
        return None
    return load_json(path)


# --- stage: eval -----------------------------------------------------------

class TrialFailed(RuntimeError):
    pass


def _learned_sides(cfg, method, m, trial):
    """side -> (sketch, heavy indices or None) for a learned method."""
    vals = _load_values(cfg, method, m, trial, required=(method == "heavy_rows_plus_values"))
    pos = _load_positions(cfg, method, m, trial)
    out = {}
    for side in _sides(cfg):
        entry = pos["sides"][side]
        if vals is not None and method in VALUE_METHODS:
            v = vals["sides"][side]
            if v["status"] != "ok":
                raise TrialFailed(f"value training failed: {v['reason']}")
            entry = v
        out[side] = (sketch_from_dict(entry["sketch"]), entry.get("heavy"))
    return out


def _problems(cfg, ts, bs):
    spec = cfg["distribution"]
    p = spec["params"]
    lam = float(p.get("lam", 1.0))
    if cfg["task"] == "ihs_nuclear":
        constraint = NuclearBall(lam, int(p["d1"]), int(p["d2"]))
    else:
        constraint = L1Ball(lam)
    return [ConstrainedLsProblem(A, b, constraint) for A, b in zip(ts.matrices, bs)]


def _eval_unit(args):
    cfg, (method, m, trial) = args
    _, ts, bs = _load_data(cfg)
    task = cfg["task"]
    n, d = ts.shape
    k = int(cfg["k"])
    rows = []
    extra = []
    try:
        if method == "classical":
            sides = {"S": (random_countsketch(m, n, _unit_seed(cfg, m, trial, 4)), None),
                     "R": (random_countsketch(m, d, _unit_seed(cfg, m, trial, 5)), None)}
        else:
            sides = _learned_sides(cfg, method, m, trial)
        problems = _problems(cfg, ts, bs) if task in IHS_TASKS else None
        for idx in ts.test:
            A = ts.matrices[idx]
            S, heavy = sides["S"]
            if task in ("lra_one", "fewshot"):
                err = lra_one_sided(S, A, k).error
            elif task == "lra_two":
                R = sides["R"][0]
                V = random_countsketch(min(n, 2 * m), n, _unit_seed(cfg, m, trial, 6))
                W = random_countsketch(min(d, 2 * m), d, _unit_seed(cfg, m, trial, 7))
                err = lra_two_sided(SketchSet(S, R, V, W), A, k).error
            elif task in IHS_TASKS:
                src_seed = _int_seed(_unit_seed(cfg, m, trial, 100 + idx))
                if method == "classical":
                    source = classical_source(m, n, src_seed)
                elif heavy is not None:
                    values = S.v if method == "heavy_rows_plus_values" else None
                    source = heavy_rows_source(heavy, m, n, src_seed, values)
                else:
                    source = (lambda S_: (lambda t: S_))(S)
                trace = ihs_solve(problems[idx], source, int(cfg["ihs"]["T"]), int(cfg["ihs"]["pg_iters"]))
                err = float(trace.errors[-1])
                extra.append(trace.rho_hat)
            else:
                y = np.random.default_rng(_unit_seed(cfg, m, trial, 8 + idx)).standard_normal(d)
                fr = cfg["fast_regression"]
                res = fast_regression_solve(A, y, S, fr["lr"], fr["iters"])
                err = float(res.errors[-1])
                extra.append(1.0 if res.diverged else 0.0)
            rows.append((task, method, m, trial, idx, err))
        failed = None
    except (TrialFailed, RankDeficiencyError, DivergenceError, np.linalg.LinAlgError, ValueError) as exc:
        rows = [(task, method, m, trial, idx, float("nan")) for idx in ts.test]
        extra = []
        failed = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
    return rows, extra, failed


def stage_eval(cfg, jobs=1):
    _load_data(cfg)
    units = _units(cfg)
    # check upstream artifacts up front so a missing one exits cleanly
    for method, m, trial in units:
        if method != "classical":
            _load_positions(cfg, method, m, trial)
            if method == "heavy_rows_plus_values":
                _load_values(cfg, method, m, trial, required=True)
    t0 = time.perf_counter()
    results = list(_map(_eval_unit, [(cfg, u) for u in units], jobs))
    root = Path(cfg["out"])
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task", "method", "m", "trial", "test_index", "error"])
        for rows, _, _ in results:
            for r in rows:
                w.writerow(list(r[:5]) + [repr(float(r[5]))])
    agg = {}
    for (method, m, trial), (rows, extra, failed) in zip(units, results):
        a = agg.setdefault((method, m), {"errors": [], "extra": [], "failed": []})
        a["errors"].extend(r[5] for r in rows if failed is None)
        a["extra"].extend(extra)
        if failed is not None:
            a["failed"].append({"trial": trial, "reason": failed})
    out = []
    for (method, m), a in agg.items():
        rec = {"task": cfg["task"], "method": method, "m": m,
               "mean_error": float(np.mean(a["errors"])) if a["errors"] else None,
               "failed_trials": a["failed"]}
        if cfg["task"] in IHS_TASKS:
            rec["rho_hat"] = float(np.mean(a["extra"])) if a["extra"] else None
        if cfg["task"] == "fast_regression":
            rec["diverged_fraction"] = float(np.mean(a["extra"])) if a["extra"] else None
        out.append(rec)
    timing = {"eval_seconds": time.perf_counter() - t0, "train_time_seconds": _train_times(cfg)}
    save_json(root / "aggregate.json", {"results": out, "timing": timing})


def _train_times(cfg):
    root = Path(cfg["out"]) / "timing"
    totals = {}
    for stage in ("positions", "values"):
        path = root / f"{stage}.json"
        if path.exists():
            for name, secs in load_json(path).items():
                totals[name] = totals.get(name, 0.0) + secs
    return totals


# --- stage: report ---------------------------------------------------------

REPORT_COLUMNS = ("task", "method", "m", "mean_error", "rho_hat", "failed")


def _fmt(x):
    if x is None:
        return "-"
    if isinstance(x, float):
        return "nan" if math.isnan(x) else f"{x:.6g}"
    return str(x)


def stage_report(out_dir):
    root = Path(out_dir)
    path = root / "aggregate.json"
    if not path.exists():
        raise MissingArtifact(str(path))
    results = load_json(path).get("results", [])
    table = [[_fmt(r.get("task")), _fmt(r.get("method")), _fmt(r.get("m")), _fmt(r.get("mean_error")),
              _fmt(r.get("rho_hat")), str(len(r.get("failed_trials", [])))] for r in results]
    widths = [max([len(c)] + [len(row[i]) for row in table]) for i, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))]
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in table]
    (root / "report.txt").write_text("\n".join(lines) + "\n")
    with open(root / "report.dat", "w") as fh:
        fh.write("# method m mean_error rho_hat\n")
        for r in results:
            fh.write(f"{r['method']} {r['m']} {_fmt(r.get('mean_error'))} {_fmt(r.get('rho_hat'))}\n")
    return "\n".join(lines)


def run_experiment(cfg, jobs=1):
    stage_gen_data(cfg)
    stage_train_positions(cfg, jobs)
    stage_train_values(cfg, jobs)
    stage_eval(cfg, jobs)
    return stage_report(cfg["out"])


def _map(fn, items, jobs):
    """Ordered map; a process pool when jobs > 1."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
