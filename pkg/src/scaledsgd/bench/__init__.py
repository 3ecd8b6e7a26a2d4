"""Benchmark scenarios and the harness that runs them."""
from .builtin import BUILTIN
from .config import Scenario, SolverSpec, load, parse, report
from .runner import RunArtifact, run_scenario

__all__ = ["BUILTIN", "RunArtifact", "Scenario", "SolverSpec", "load", "parse", "report",
           "run_scenario"]
