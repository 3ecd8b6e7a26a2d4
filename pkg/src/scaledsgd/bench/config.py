"""Scenario configuration: loading, scale selection and static validation."""
import copy
import json
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from ..errors import ConfigError
from ..problem import GeneratorSpec
from ..solvers.engine import ENGINES, SolverConfig
from ..solvers.engine import TEST_METRICS
from .builtin import BUILTIN, builtin

TOP_KEYS = {
    "name", "description", "seed", "repeats", "rank", "problem", "dataset", "variants",
    "solvers", "test_metric", "rating_spread", "budget_seconds", "record_time", "paper",
    "scale_note",
}
DATASET_KEYS = {"path", "path_env", "select_rows", "holdout_per_row", "drop_value", "n", "m"}
PROBLEM_KEYS = {f.name for f in fields(GeneratorSpec)} - {"seed"}


@dataclass
class SolverSpec:
    name: str
    engine: str
    config: SolverConfig


@dataclass
class DatasetSpec:
    path: Optional[str] = None
    select_rows: Optional[int] = None
    holdout_per_row: int = 2
    drop_value: Optional[float] = None
    n: Optional[int] = None
    m: Optional[int] = None
    path_env: Optional[str] = None

    def resolved_path(self):
        if self.path:
            return self.path
        if self.path_env:
            return os.environ.get(self.path_env) or None
        return None


@dataclass
class Scenario:
    name: str
    solvers: list
    seed: int = 0
    repeats: int = 1
    rank: Optional[int] = None
    problem: Optional[dict] = None
    dataset: Optional[DatasetSpec] = None
    variants: list = field(default_factory=lambda: [("", {})])
    test_metric: str = "mse"
    rating_spread: float = 20.0
    budget_seconds: Optional[float] = None
    record_time: bool = False
    scale: str = "desk"
    scale_note: Optional[str] = None
    description: str = ""

    def problem_for(self, variant_overrides, seed):
        d = dict(self.problem)
        d.update(variant_overrides)
        return GeneratorSpec(seed=seed, **d)

    def effective_rank(self, variant_overrides=None):
        if self.rank is not None:
            return self.rank
        d = dict(self.problem or {})
        d.update(variant_overrides or {})
        return d.get("r")


def read_mapping(source):
    """Mapping from a built-in scenario name or a YAML/JSON file."""
    if source in BUILTIN:
        return builtin(source)
    path = Path(source)
    if not path.exists():
        raise ConfigError("config", f"no built-in scenario or file named {source!r}")
    text = path.read_text()
    try:
        if path.suffix.lower() == ".json":
            d = json.loads(text)
        else:
            d = yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError("config", f"cannot parse {source}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config", "top level must be a mapping")
    d.setdefault("name", path.stem)
    return d


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _int(d, key, path, minimum=None):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path, f"{key} must be an integer")
    if minimum is not None and v < minimum:
        raise ConfigError(path, f"{key} must be >= {minimum}")
    return v


def parse(mapping, scale="desk", seed=None):
    """Validated Scenario from a mapping; ``seed`` overrides the base seed."""
    d = dict(mapping)
    extra = set(d) - TOP_KEYS
    if extra:
        raise ConfigError(sorted(extra)[0], "unknown scenario key")
    if scale not in ("desk", "paper"):
        raise ConfigError("scale", "expected desk or paper")
    paper = d.pop("paper", None) or {}
    if scale == "paper":
        d = _merge(d, paper)
    name = d.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigError("name", "scenario name is required")
    sc = Scenario(name=name, solvers=[], scale=scale, description=d.get("description", ""))
    if "seed" in d:
        sc.seed = _int(d, "seed", "seed")
    if seed is not None:
        sc.seed = int(seed)
    if "repeats" in d:
        sc.repeats = _int(d, "repeats", "repeats", minimum=1)
    if d.get("rank") is not None:
        sc.rank = _int(d, "rank", "rank", minimum=1)
    sc.test_metric = d.get("test_metric", "mse")
    if sc.test_metric not in TEST_METRICS:
        raise ConfigError("test_metric", f"expected one of {sorted(TEST_METRICS)}")
    sc.rating_spread = float(d.get("rating_spread", 20.0))
    if sc.rating_spread <= 0:
        raise ConfigError("rating_spread", "must be positive")
    if d.get("budget_seconds") is not None:
        sc.budget_seconds = float(d["budget_seconds"])
    sc.record_time = bool(d.get("record_time", False))
    sc.scale_note = d.get("scale_note") if scale == "desk" else None

    has_problem, has_data = d.get("problem") is not None, d.get("dataset") is not None
    if has_problem == has_data:
        raise ConfigError("problem", "exactly one of problem or dataset is required")
    if has_problem:
        prob = d["problem"]
        if not isinstance(prob, dict):
            raise ConfigError("problem", "must be a mapping")
        bad = set(prob) - PROBLEM_KEYS
        if bad:
            raise ConfigError(f"problem.{sorted(bad)[0]}", "unknown problem key")
        sc.problem = dict(prob)
    else:
        ds = d["dataset"]
        if not isinstance(ds, dict):
            raise ConfigError("dataset", "must be a mapping")
        bad = set(ds) - DATASET_KEYS
        if bad:
            raise ConfigError(f"dataset.{sorted(bad)[0]}", "unknown dataset key")
        if not ds.get("path") and not ds.get("path_env"):
            raise ConfigError("dataset.path", "a path or path_env is required")
        sc.dataset = DatasetSpec(**ds)
        if sc.rank is None:
            raise ConfigError("rank", "rank is required for a dataset scenario")

    if d.get("variants"):
        if not has_problem:
            raise ConfigError("variants", "variants apply to generated problems only")
        sc.variants = []
        for k, v in enumerate(d["variants"]):
            p = f"variants[{k}]"
            if not isinstance(v, dict) or "label" not in v:
                raise ConfigError(p, "each variant needs a label")
            over = v.get("problem", {}) or {}
            bad = set(over) - PROBLEM_KEYS
            if bad:
                raise ConfigError(f"{p}.problem.{sorted(bad)[0]}", "unknown problem key")
            sc.variants.append((str(v["label"]), dict(over)))
        labels = [lab for lab, _ in sc.variants]
        if len(set(labels)) != len(labels):
            raise ConfigError("variants", "variant labels must be unique")

    solvers = d.get("solvers")
    if not solvers:
        raise ConfigError("solvers", "at least one solver is required")
    for k, s in enumerate(solvers):
        p = f"solvers[{k}]"
        if not isinstance(s, dict):
            raise ConfigError(p, "must be a mapping")
        bad = set(s) - {"name", "engine", "config"}
        if bad:
            raise ConfigError(f"{p}.{sorted(bad)[0]}", "unknown solver key")
        engine = s.get("engine")
        if engine not in ENGINES:
            raise ConfigError(f"{p}.engine", f"unknown engine {engine!r}, expected one of {ENGINES}")
        cfg = s.get("config") or {}
        if not isinstance(cfg, dict):
            raise ConfigError(f"{p}.config", "must be a mapping")
        try:
            conf = SolverConfig.from_dict(cfg, path=f"{p}.config")
        except TypeError as exc:
            raise ConfigError(f"{p}.config", str(exc)) from None
        sc.solvers.append(SolverSpec(str(s.get("name") or engine), engine, conf))
    names = [s.name for s in sc.solvers]
    if len(set(names)) != len(names):
        raise ConfigError("solvers", "solver names must be unique")

    if has_problem:
        _check_problems(sc)
    return sc


def _check_problems(sc):
    for label, over in sc.variants:
        p = f"variants[{label}].problem" if label else "problem"
        try:
            spec = sc.problem_for(over, sc.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(p, str(exc)) from None
        count = spec.num_samples
        free = spec.n * spec.m
        if count > free:
            raise ConfigError(f"{p}.os", f"os={spec.os} implies {count} entries but the matrix has {free}")
        if spec.test_count > free - count:
            raise ConfigError(f"{p}.test_count", f"only {free - count} cells remain for testing")
        rank = sc.effective_rank(over)
        if rank > min(spec.n, spec.m):
            raise ConfigError("rank", f"rank {rank} exceeds min(n, m) = {min(spec.n, spec.m)}")
        for k, s in enumerate(sc.solvers):
            if s.engine in ("scaled_sgd", "sgd"):
                try:
                    s.config.validate(nnz=count, path=f"solvers[{k}].config")
                except ConfigError as exc:
                    raise ConfigError(exc.path, f"{exc.message} ({label or 'problem'})") from None


def load(source, scale="desk", seed=None):
    return parse(read_mapping(source), scale=scale, seed=seed)


def report(sc):
    """Static description of a validated scenario."""
    out = {
        "name": sc.name,
        "scale": sc.scale,
        "seed": sc.seed,
        "repeats": sc.repeats,
        "solvers": [{"name": s.name, "engine": s.engine} for s in sc.solvers],
        "runs": len(sc.solvers) * sc.repeats * len(sc.variants),
    }
    if sc.problem is not None:
        out["instances"] = []
        for label, over in sc.variants:
            spec = sc.problem_for(over, sc.seed)
            out["instances"].append({
                "variant": label, "n": spec.n, "m": spec.m, "r": spec.r, "os": spec.os,
                "known_entries": spec.num_samples, "condition_number": spec.condition_number,
            })
    else:
        path = sc.dataset.resolved_path()
        out["dataset"] = {"path": path, "present": bool(path and Path(path).exists())}
    if sc.scale_note:
        out["scale_note"] = sc.scale_note
    return out
