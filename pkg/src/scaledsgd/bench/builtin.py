"""Built-in benchmark scenarios.

Each entry is the same nested mapping a config file would contain.  The
top-level problem block is the desk-scale variant; ``paper`` holds the
overrides applied under ``--paper-scale``.
"""
import copy

_DESK_NOTE = ("desk variant: {desk} instead of {paper}; over-sampling ratio, rank, "
              "condition number and solver settings unchanged")


def _note(desk, paper):
    return _DESK_NOTE.format(desk=desk, paper=paper)


def _scaled(name, mu=0.5, b=10, **extra):
    cfg = {"mu": mu, "batch_size": b}
    cfg.update(extra)
    return {"name": name, "engine": "scaled_sgd", "config": cfg}


def _sgd(name="sgd", b=10, **extra):
    cfg = {"batch_size": b}
    cfg.update(extra)
    return {"name": name, "engine": "sgd", "config": cfg}


def _baselines(lam=0.0):
    return [
        {"name": "als", "engine": "als", "config": {"regularization": lam}},
        {"name": "ccdpp", "engine": "ccdpp", "config": {"regularization": lam}},
    ]


def _mu_sweep():
    return [_scaled(f"scaled-mu{mu}", mu=mu) for mu in (0.0, 0.5, 0.75, 1.0)] + [_sgd()]


def _batch_sweep(r):
    return [_scaled(f"scaled-b{b}", b=b) for b in (1, r, 2 * r, r * r)]


BUILTIN = {
    "scale-invariance": {
        "description": "balanced vs 4x unbalanced initial factors, Scaled-SGD vs SGD",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 30,
        "problem": {"n": 100, "m": 100, "r": 5, "os": 8},
        "solvers": [
            _scaled("scaled-balanced"),
            _scaled("scaled-unbalanced", init="unbalanced", init_ratio=4.0),
            _sgd("sgd-balanced"),
            _sgd("sgd-unbalanced", init="unbalanced", init_ratio=4.0),
        ],
    },
    "mu-sweep": {
        "description": "effect of mu on a well-conditioned instance",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 120,
        "problem": {"n": 500, "m": 500, "r": 10, "os": 3},
        "paper": {"problem": {"n": 5000, "m": 5000}},
        "scale_note": _note("500x500", "5000x5000"),
        "solvers": _mu_sweep(),
    },
    "mu-sweep-illcond": {
        "description": "effect of mu on an instance with condition number 50",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 120,
        "problem": {"n": 500, "m": 500, "r": 10, "os": 3, "condition_number": 50},
        "paper": {"problem": {"n": 5000, "m": 5000}},
        "scale_note": _note("500x500", "5000x5000"),
        "solvers": _mu_sweep(),
    },
    "batch-sweep": {
        "description": "effect of the batch size b in {1, r, 2r, r^2}",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 120,
        "problem": {"n": 500, "m": 500, "r": 5, "os": 5},
        "paper": {"problem": {"n": 5000, "m": 5000}},
        "scale_note": _note("500x500", "5000x5000"),
        "solvers": _batch_sweep(5),
    },
    "batch-sweep-illcond": {
        "description": "effect of the batch size on an instance with condition number 500",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 180,
        "problem": {"n": 500, "m": 500, "r": 5, "os": 5, "condition_number": 500},
        "paper": {"problem": {"n": 5000, "m": 5000}},
        "scale_note": _note("500x500", "5000x5000"),
        "solvers": _batch_sweep(5),
    },
    "low-sampling": {
        "description": "over-sampling ratios 4, 3, 2.5 and 2.1",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 300,
        "problem": {"n": 500, "m": 500, "r": 10, "os": 3},
        "paper": {"problem": {"n": 5000, "m": 5000}},
        "scale_note": _note("500x500", "5000x5000"),
        "variants": [{"label": f"os{os}", "problem": {"os": os}} for os in (4, 3, 2.5, 2.1)],
        "solvers": [_scaled("scaled-sgd"), _sgd()] + _baselines(),
    },
    "noisy": {
        "description": "Gaussian noise of std 1e-4 on the known entries, held-out test MSE",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 120,
        "problem": {"n": 500, "m": 500, "r": 10, "os": 3, "noise_sigma": 1e-4,
                    "test_count": 10000},
        "paper": {"problem": {"n": 5000, "m": 5000, "test_count": 100000}},
        "scale_note": _note("500x500", "5000x5000"),
        "test_metric": "mse",
        "solvers": [_scaled("scaled-sgd"), _sgd()] + _baselines(),
    },
    "ill-conditioned": {
        "description": "condition number 100",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 120,
        "problem": {"n": 500, "m": 500, "r": 10, "os": 3, "condition_number": 100},
        "paper": {"problem": {"n": 5000, "m": 5000}},
        "scale_note": _note("500x500", "5000x5000"),
        "solvers": [_scaled("scaled-sgd"), _sgd()] + _baselines(),
    },
    "rectangular": {
        "description": "rectangular, slightly ill-conditioned (condition number 5)",
        "seed": 0,
        "repeats": 1,
        "budget_seconds": 120,
        "problem": {"n": 250, "m": 2000, "r": 10, "os": 3, "condition_number": 5},
        "paper": {"problem": {"n": 1000, "m": 8000}},
        "scale_note": _note("250x2000", "1000x8000"),
        "solvers": [_scaled("scaled-sgd"), _sgd()] + _baselines(),
    },
}


def _ratings(rank):
    stop = {"max_iters": 100, "mse_tol": 0.0, "rel_res_tol": 0.0}
    return {
        "description": f"ratings protocol, rank {rank}: 2000 random users, 2 test ratings each",
        "seed": 0,
        "repeats": 10,
        "budget_seconds": 600,
        "rank": rank,
        "dataset": {"path_env": "JESTER_CSV", "select_rows": 2000, "holdout_per_row": 2,
                    "drop_value": 99.0},
        "test_metric": "nmae",
        "rating_spread": 20.0,
        "solvers": [
            _scaled("scaled-sgd", b=rank, **stop),
            _sgd(b=rank, **stop),
            {"name": "als", "engine": "als", "config": dict(stop, regularization=10.0)},
            {"name": "ccdpp", "engine": "ccdpp", "config": dict(stop, regularization=10.0)},
        ],
    }


BUILTIN["jester-r5"] = _ratings(5)
BUILTIN["jester-r7"] = _ratings(7)


def builtin(name):
    if name not in BUILTIN:
        raise KeyError(name)
    d = copy.deepcopy(BUILTIN[name])
    d["name"] = name
    return d
