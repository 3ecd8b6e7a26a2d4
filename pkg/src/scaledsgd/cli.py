"""Command-line harness: ``scaledsgd run|validate|list|generate``.

Every verb prints a JSON document on stdout.  Failures print a JSON error
object on stderr and exit nonzero (2 for configuration errors, 3 for solver
failures under ``--fail-fast``, 1 otherwise).
"""
import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .bench import config as bconfig
from .bench.builtin import BUILTIN
from .bench.runner import run_scenario
from .errors import ConfigError, ScaledSGDError, SolverError
from .problem import GeneratorSpec, generate, held_out, save_csv


def _emit(obj, stream=None):
    (stream or sys.stdout).write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _error(kind, message, path=None, code=1):
    err = {"error": kind, "message": message}
    if path is not None:
        err["path"] = path
    _emit(err, sys.stderr)
    return code


def _scale(args):
    return "paper" if args.paper_scale else "desk"


def cmd_list(args):
    rows = []
    for name in BUILTIN:
        sc = bconfig.load(name, scale=_scale(args))
        rows.append({"name": name, "description": sc.description,
                     "solvers": [s.name for s in sc.solvers], "repeats": sc.repeats,
                     "budget_seconds": sc.budget_seconds})
    _emit({"scenarios": rows})
    return 0


def cmd_validate(args):
    sc = bconfig.load(args.config, scale=_scale(args), seed=args.seed)
    _emit(dict(bconfig.report(sc), status="ok"))
    return 0


def cmd_run(args):
    sc = bconfig.load(args.config, scale=_scale(args), seed=args.seed)
    art = run_scenario(sc, args.out_dir, jobs=args.jobs, fail_fast=args.fail_fast)
    out = {"scenario": art.name, "status": art.status, "directory": str(art.directory)}
    if art.message:
        out["message"] = art.message
    if art.status != "skipped":
        out["summary"] = str(art.summary_path)
        out["traces"] = len(art.traces)
    _emit(out)
    return 0


def _generator_spec(source, seed):
    d = bconfig.read_mapping(source)
    if "problem" in d:
        # a scenario: use its base problem and seed
        prob = dict(d["problem"] or {})
        prob.setdefault("seed", d.get("seed", 0))
    else:
        prob = {k: v for k, v in d.items() if k != "name"}
    bad = set(prob) - bconfig.PROBLEM_KEYS - {"seed"}
    if bad:
        raise ConfigError(sorted(bad)[0], "unknown generator key")
    if seed is not None:
        prob["seed"] = seed
    try:
        return GeneratorSpec(**prob)
    except (TypeError, ValueError) as exc:
        raise ConfigError("problem", str(exc)) from None


def cmd_generate(args):
    spec = _generator_spec(args.spec, args.seed)
    data, truth = generate(spec)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_csv(data, args.out)
    out = {"path": args.out, "n": spec.n, "m": spec.m, "known_entries": data.nnz,
           "seed": spec.seed}
    if args.test_out:
        test = held_out(spec, data, truth, count=args.test_count)
        save_csv(test, args.test_out)
        out["test_path"] = args.test_out
        out["test_entries"] = test.nnz
    _emit(out)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="scaledsgd", description="Matrix completion benchmarks")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the base seed")
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--desk-scale", action="store_true", default=True,
                       help="run the reduced-size variant (default)")
        g.add_argument("--paper-scale", action="store_true", help="run the full-size variant")

    sp = sub.add_parser("run", help="run a scenario file or built-in scenario")
    sp.add_argument("config")
    sp.add_argument("--out-dir", default="results")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--fail-fast", action="store_true",
                    help="abort on the first solver failure instead of recording it")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check a scenario without running it")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("list", help="list built-in scenarios")
    common(sp)
    sp.set_defaults(func=cmd_list)

    sp = sub.add_parser("generate", help="write a synthetic instance as triplet CSV")
    sp.add_argument("spec", help="generator file, scenario file or built-in scenario name")
    sp.add_argument("--out", required=True)
    sp.add_argument("--test-out", default=None, help="also write held-out entries here")
    sp.add_argument("--test-count", type=int, default=None)
    common(sp)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        return _error("ConfigError", "--jobs must be >= 1", path="jobs", code=2)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _error("ConfigError", exc.message, path=exc.path, code=2)
    except SolverError as exc:
        return _error("SolverError", str(exc), code=3)
    except (ScaledSGDError, OSError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), code=1)


if __name__ == "__main__":
    sys.exit(main())
