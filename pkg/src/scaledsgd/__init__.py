"""Low-rank matrix completion with scaled stochastic gradient descent."""
from .factors import FactorPair, gauge_transform
from .problem import GeneratorSpec, ObservedMatrix, generate, load_csv, save_csv, split
from .solvers import SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "FactorPair", "GeneratorSpec", "ObservedMatrix", "SolverConfig", "gauge_transform",
    "generate", "load_csv", "save_csv", "solve", "split", "__version__",
]
