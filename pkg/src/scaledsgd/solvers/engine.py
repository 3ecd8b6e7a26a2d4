"""Solver configuration, stepsize schedules and the epoch loop."""
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Union

import numpy as np

from .. import metrics
from .. import rng as rngmod
from ..errors import ConfigError, DegenerateDirection, SolverError
from ..factors import FactorPair, random_factors
from . import baselines, sgd

ENGINES = ("scaled_sgd", "sgd", "als", "ccdpp")
SCHEDULES = ("bold_driver", "exp_decay", "fixed")
GRAM_REFRESH = ("every_step", "every_epoch")


def bold_driver(t, cost_prev, cost_new, up=1.10, down=0.50):
    """Shrink the stepsize after a cost increase, grow it otherwise (ties grow)."""
    return t * down if cost_new > cost_prev else t * up


@dataclass
class SolverConfig:
    mu: float = 0.5
    batch_size: int = 10
    schedule: str = "bold_driver"
    bold_up: float = 1.10
    bold_down: float = 0.50
    decay_rate: float = 0.95
    initial_step: Union[float, str] = "auto"
    fallback_step: float = 1e-3
    max_iters: int = metrics.MAX_ITERS
    mse_tol: float = metrics.MSE_TOL
    rel_res_tol: float = metrics.REL_RES_TOL
    seed: int = 0
    regularization: float = 0.0
    ccd_inner_T: int = 5
    gram_refresh: str = "every_epoch"
    sherman_morrison: bool = True
    init: str = "balanced"
    init_ratio: float = 1.0

    @classmethod
    def from_dict(cls, d, path="solver"):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown solver option")
        cfg = cls(**d)
        cfg.validate(path=path)
        return cfg

    def to_dict(self):
        return asdict(self)

    def validate(self, nnz=None, path="solver"):
        def fail(name, msg):
            raise ConfigError(f"{path}.{name}", msg)

        if not (0.0 <= self.mu <= 1.0):
            fail("mu", "mu out of [0,1]")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            fail("batch_size", "batch size must be a positive integer")
        if nnz is not None and self.batch_size > nnz:
            fail("batch_size", f"batch size {self.batch_size} exceeds the {nnz} known entries")
        if self.schedule not in SCHEDULES:
            fail("schedule", f"unknown schedule {self.schedule!r}, expected one of {SCHEDULES}")
        if self.gram_refresh not in GRAM_REFRESH:
            fail("gram_refresh", f"expected one of {GRAM_REFRESH}")
        if isinstance(self.initial_step, str):
            if self.initial_step != "auto":
                fail("initial_step", "must be a positive number or 'auto'")
        elif not self.initial_step > 0:
            fail("initial_step", "must be positive")
        if self.max_iters < 1:
            fail("max_iters", "must be >= 1")
        if self.regularization < 0:
            fail("regularization", "must be >= 0")
        if self.ccd_inner_T < 1:
            fail("ccd_inner_T", "must be >= 1")
        if not 0 < self.decay_rate <= 1:
            fail("decay_rate", "must lie in (0, 1]")
        if self.init not in ("balanced", "unbalanced", "raw"):
            fail("init", "expected balanced, unbalanced or raw")


@dataclass
class TraceRecord:
    iteration: int
    cost: float
    mse: float
    rel_residual: float
    test_metric: Optional[float]
    stepsize: Optional[float]
    seconds: float

    COLUMNS = ("iteration", "cost", "mse", "rel_residual", "test_metric", "stepsize", "seconds")


@dataclass
class RunResult:
    engine: str
    factors: FactorPair
    trace: list
    verdict: metrics.Verdict
    initial: metrics.Cost
    initial_step: Optional[float] = None
    notes: list = field(default_factory=list)

    @property
    def final(self):
        return self.trace[-1] if self.trace else None


def initial_factors(data, rank, config):
    return random_factors(data.n, data.m, rank, rngmod.stream(config.seed, "init"),
                          balance=config.init, ratio=config.init_ratio)


def _evaluate(factors, data, test, test_metric):
    with np.errstate(all="ignore"):
        c = metrics.train_cost(factors, data)
        tm = None
        if test is not None and test.nnz:
            tm = test_metric(factors, test)
    return c, tm


TEST_METRICS = {
    "mse": metrics.heldout_mse,
    "rel_residual": metrics.heldout_rel_residual,
    "nmae": metrics.nmae,
}


def solve(data, rank=None, config=None, engine="scaled_sgd", init=None, test=None,
          test_metric="mse", sink: Optional[Callable] = None):
    """Run ``engine`` on ``data`` until a stopping rule fires.

    ``init`` overrides the seeded random initialization (it is copied).
    ``sink`` receives every TraceRecord as it is produced.
    """
    config = config or SolverConfig()
    if engine not in ENGINES:
        raise ConfigError("engine", f"unknown engine {engine!r}, expected one of {ENGINES}")
    config.validate(nnz=data.nnz if engine in ("scaled_sgd", "sgd") else None)
    if init is None:
        if rank is None:
            raise ValueError("either rank or init is required")
        factors = initial_factors(data, rank, config)
    else:
        factors = init.copy()
    metric_fn = TEST_METRICS[test_metric] if isinstance(test_metric, str) else test_metric

    initial, _ = _evaluate(factors, data, None, None)
    result = RunResult(engine, factors, [], metrics.Verdict.CONTINUE, initial)
    scaled = engine == "scaled_sgd"
    b = config.batch_size
    cache = None
    t = None
    if engine in ("scaled_sgd", "sgd"):
        if config.initial_step == "auto":
            try:
                t = sgd.initial_stepsize(factors, data, config.mu, b, scaled=scaled)
            except DegenerateDirection as exc:
                t = config.fallback_step
                result.notes.append(f"initial stepsize fallback: {exc}")
        else:
            t = float(config.initial_step)
        result.initial_step = t
        if scaled:
            cache = sgd.GramCache.from_factors(factors)
        else:
            # unused by the plain kernel
            cache = sgd.GramCache(np.zeros((1, 1)), np.zeros((1, 1)))
        shuffle = rngmod.stream(config.seed, "shuffle")
    elif engine == "als":
        als_index = baselines.ALSIndex(data)
        row_rng = rngmod.stream(config.seed, "rows")
    else:
        ccd_res = None

    cost_prev = initial.cost
    clock = time.perf_counter()
    for it in range(1, config.max_iters + 1):
        diverged = False
        if engine in ("scaled_sgd", "sgd"):
            order = shuffle.permutation(data.nnz)
            try:
                status = sgd.run_epoch(
                    factors, cache, data, order, b, t, config.mu, scaled=scaled,
                    fast_b1=config.sherman_morrison,
                    refresh_each_step=config.gram_refresh == "every_step",
                )
            except Exception as exc:
                raise SolverError(f"{engine}: iteration {it}: {exc}") from exc
            diverged = status == sgd.NON_FINITE
            if scaled and not diverged:
                cache.refresh(factors)
        elif engine == "als":
            baselines.als_sweep(factors, data, config.regularization, rng=row_rng, index=als_index)
        else:
            ccd_res = baselines.ccdpp_sweep(factors, data, config.ccd_inner_T,
                                            config.regularization, residual=ccd_res)

        cost, tm = _evaluate(factors, data, test, metric_fn)
        if diverged:
            cost = metrics.Cost(math.inf, math.inf, math.inf)
        rec = TraceRecord(it, cost.cost, cost.mse, cost.rel_residual, tm, t,
                          time.perf_counter() - clock)
        result.trace.append(rec)
        if sink is not None:
            sink(rec)
        state = metrics.stop_state(cost.mse, cost.rel_residual, it, config.max_iters,
                                   config.mse_tol, config.rel_res_tol)
        if state.verdict.stops:
            result.verdict = state.verdict
            break
        if t is not None:
            t = next_stepsize(config, t, cost_prev, cost.cost)
        cost_prev = cost.cost
    return result


def next_stepsize(config, t, cost_prev, cost_new):
    if config.schedule == "bold_driver":
        return bold_driver(t, cost_prev, cost_new, config.bold_up, config.bold_down)
    if config.schedule == "exp_decay":
        return t * config.decay_rate
    return t
