"""Scaled SGD, plain SGD, ALS and CCD++ solvers."""
from ..factors import FactorPair, gauge_transform, random_factors
from .baselines import als_sweep, ccdpp_sweep
from .engine import (ENGINES, RunResult, SolverConfig, TraceRecord, bold_driver,
                     next_stepsize, solve)
from .sgd import (GramCache, initial_stepsize, run_epoch, scaled_sgd_step,
                  scaled_sgd_step_b1, sgd_step)

__all__ = [
    "ENGINES", "FactorPair", "GramCache", "RunResult", "SolverConfig", "TraceRecord",
    "als_sweep", "bold_driver", "ccdpp_sweep", "gauge_transform", "initial_stepsize",
    "next_stepsize", "random_factors", "run_epoch", "scaled_sgd_step", "scaled_sgd_step_b1",
    "sgd_step", "solve",
]
