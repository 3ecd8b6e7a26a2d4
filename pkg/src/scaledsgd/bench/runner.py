"""Execute a scenario and record traces, a summary and a timing sidecar.

Trace CSVs and summary.json depend only on the configuration and seed, so a
rerun reproduces them byte for byte.  Wall-clock times go to timing.json
(and to the trace ``seconds`` column only when ``record_time`` is set).
"""
import dataclasses
import functools
import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
import scipy

from .. import __version__, metrics
from ..errors import ScaledSGDError, SolverError
from ..problem import generate, held_out, load_csv, select_rows, split
from ..solvers.engine import TEST_METRICS, TraceRecord, initial_factors, solve

SUMMARY_FIELDS = ("cost", "mse", "rel_residual", "test_metric", "iterations")


@dataclass
class RunArtifact:
    name: str
    directory: Path
    status: str
    summary: dict
    traces: list = field(default_factory=list)
    message: str = ""

    @property
    def summary_path(self):
        return self.directory / "summary.json"


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


class TraceWriter:
    """Streams TraceRecords to one CSV file, full-precision floats."""

    def __init__(self, path, record_time=False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.record_time = record_time
        self.fh = open(self.path, "w", newline="")
        self.fh.write(",".join(TraceRecord.COLUMNS) + "\n")

    def __call__(self, rec):
        row = [rec.iteration, rec.cost, rec.mse, rec.rel_residual, rec.test_metric, rec.stepsize,
               rec.seconds if self.record_time else None]
        self.fh.write(",".join(_fmt(v) for v in row) + "\n")
        self.fh.flush()

    def close(self):
        self.fh.close()


@functools.lru_cache(maxsize=4)
def _read_dataset(path, n, m, drop_value):
    return load_csv(path, n=n, m=m, drop_value=drop_value)


def instance(sc, overrides, seed):
    """``(train, test)`` for one repeat; ``test`` is None when there is none."""
    if sc.problem is not None:
        spec = sc.problem_for(overrides, seed)
        data, truth = generate(spec)
        test = held_out(spec, data, truth) if spec.test_count else None
        return data, test
    ds = sc.dataset
    data = _read_dataset(ds.resolved_path(), ds.n, ds.m, ds.drop_value)
    if ds.select_rows:
        data = select_rows(data, ds.select_rows, seed)
    parts = split(data, ds.holdout_per_row, seed)
    return parts.train, (parts.test if parts.test.nnz else None)


def _test_metric(sc):
    if sc.test_metric == "nmae":
        return functools.partial(metrics.nmae, rating_spread=sc.rating_spread)
    return sc.test_metric


def _run_one(sc, label, overrides, solver, repeat, path):
    seed = sc.seed + repeat
    cfg = dataclasses.replace(solver.config, seed=seed)
    rank = sc.effective_rank(overrides)
    out = {"variant": label, "solver": solver.name, "engine": solver.engine, "repeat": repeat,
           "seed": seed, "trace": None, "verdict": None, "error": None}
    start = time.perf_counter()
    writer = None
    try:
        train, test = instance(sc, overrides, seed)
        metric = _test_metric(sc)
        init = initial_factors(train, rank, cfg)
        writer = TraceWriter(path, sc.record_time)
        # iteration 0 records the starting point
        c0 = metrics.train_cost(init, train)
        tm0 = None
        if test is not None:
            fn = TEST_METRICS[metric] if isinstance(metric, str) else metric
            tm0 = fn(init, test)
        writer(TraceRecord(0, c0.cost, c0.mse, c0.rel_residual, tm0, None, 0.0))
        result = solve(train, rank, cfg, engine=solver.engine, init=init, test=test,
                       test_metric=metric, sink=writer)
        fin = result.final
        out["verdict"] = result.verdict.value
        out["final"] = {"cost": fin.cost, "mse": fin.mse, "rel_residual": fin.rel_residual,
                        "test_metric": fin.test_metric, "iterations": fin.iteration}
        out["initial_step"] = result.initial_step
        if result.notes:
            out["notes"] = list(result.notes)
    except (ScaledSGDError, ArithmeticError, ValueError) as exc:
        out["verdict"] = "error"
        where = f"scenario {sc.name}, solver {solver.name}, repeat {repeat}"
        if label:
            where += f", variant {label}"
        out["error"] = f"{where}: {exc}"
    finally:
        if writer is not None:
            writer.close()
            out["trace"] = str(path)
    out["seconds"] = time.perf_counter() - start
    return out


def _tasks(sc, directory):
    for label, over in sc.variants:
        for solver in sc.solvers:
            for k in range(sc.repeats):
                sub = Path(label) / solver.name if label else Path(solver.name)
                yield (sc, label, over, solver, k, directory / sub / f"repeat-{k}.csv")


def _json_num(x):
    if x is None:
        return None
    x = float(x)
    if math.isfinite(x):
        return x
    return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")


def _aggregate(runs):
    groups = {}
    for r in runs:
        groups.setdefault((r["variant"], r["solver"]), []).append(r)
    out = []
    for (label, name), rs in groups.items():
        ok = [r for r in rs if r["verdict"] != "error"]
        entry = {"variant": label, "solver": name, "engine": rs[0]["engine"],
                 "runs": len(rs), "errors": len(rs) - len(ok),
                 "verdicts": {}, "mean": {}, "stddev": {}}
        for r in rs:
            entry["verdicts"][r["verdict"]] = entry["verdicts"].get(r["verdict"], 0) + 1
        for f in SUMMARY_FIELDS:
            vals = [r["final"][f] for r in ok if r["final"][f] is not None]
            if not vals:
                entry["mean"][f] = entry["stddev"][f] = None
                continue
            a = np.asarray(vals, dtype=float)
            with np.errstate(invalid="ignore"):
                entry["mean"][f] = _json_num(a.mean())
                entry["stddev"][f] = _json_num(a.std(ddof=1)) if a.size > 1 else None
        out.append(entry)
    return out


def environment():
    return {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _clean(run, directory):
    r = {k: v for k, v in run.items() if k != "seconds"}
    if r.get("trace"):
        r["trace"] = Path(r["trace"]).relative_to(directory).as_posix()
    if "final" in r:
        r["final"] = {k: (v if k == "iterations" else _json_num(v)) for k, v in r["final"].items()}
    if r.get("initial_step") is not None:
        r["initial_step"] = _json_num(r["initial_step"])
    return r


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def run_scenario(sc, out_dir, jobs=1, fail_fast=False):
    """Run every (variant, solver, repeat) of ``sc`` and write its artifacts."""
    directory = Path(out_dir) / sc.name
    base = {
        "scenario": sc.name,
        "scale": sc.scale,
        "scale_note": sc.scale_note,
        "seed": sc.seed,
        "repeats": sc.repeats,
        "test_metric": sc.test_metric,
        "environment": environment(),
    }
    if sc.dataset is not None:
        path = sc.dataset.resolved_path()
        if not path or not Path(path).exists():
            hint = f"set {sc.dataset.path_env}" if sc.dataset.path_env else "check dataset.path"
            msg = f"dataset file not found ({path or 'unset'}); {hint} to run this scenario"
            return RunArtifact(sc.name, directory, "skipped", dict(base, status="skipped"), [], msg)

    directory.mkdir(parents=True, exist_ok=True)
    tasks = list(_tasks(sc, directory))
    clock = time.perf_counter()
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, *t) for t in tasks]
            runs = [f.result() for f in futures]
    else:
        runs = []
        for t in tasks:
            runs.append(_run_one(*t))
            if fail_fast and runs[-1]["error"]:
                break
    total = time.perf_counter() - clock

    errors = [r["error"] for r in runs if r["error"]]
    if fail_fast and errors:
        raise SolverError(errors[0])
    summary = dict(base, status="ok" if not errors else "completed_with_errors",
                   runs=[_clean(r, directory) for r in runs], aggregate=_aggregate(runs))
    _write_json(directory / "summary.json", summary)
    _write_json(directory / "timing.json", {
        "total_seconds": total,
        "budget_seconds": sc.budget_seconds,
        "within_budget": None if sc.budget_seconds is None else total <= sc.budget_seconds,
        "runs": [{"variant": r["variant"], "solver": r["solver"], "repeat": r["repeat"],
                  "seconds": r["seconds"]} for r in runs],
    })
    traces = [Path(r["trace"]) for r in runs if r["trace"]]
    return RunArtifact(sc.name, directory, summary["status"], summary, traces,
                       f"{len(errors)} run(s) failed" if errors else "")
