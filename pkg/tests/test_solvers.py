import numpy as np
import pytest

from scaledsgd import metrics
from scaledsgd import smalldense as sd
from scaledsgd.batching import batch_from_arrays, build_batch
from scaledsgd.errors import (ConfigError, DegenerateDirection, SingularGauge, SolverError)
from scaledsgd.factors import FactorPair, gauge_transform, random_factors
from scaledsgd.problem import GeneratorSpec, ObservedMatrix, generate
from scaledsgd.rng import stream
from scaledsgd.solvers import (GramCache, SolverConfig, bold_driver, initial_stepsize, run_epoch,
                               scaled_sgd_step, scaled_sgd_step_b1, sgd_step, solve)
from scaledsgd.solvers.engine import initial_factors, next_stepsize
from scaledsgd.solvers.sgd import inclusion_probability


def oracle_scaled_step(L, R, entries, t, mu):
    """Explicit-inverse reference: dense S_b, dense inverses, numpy products."""
    L, R = L.copy(), R.copy()
    n, m = L.shape[0], R.shape[0]
    b = len(entries)
    rows = sorted({i for i, _, _ in entries})
    cols = sorted({j for _, j, _ in entries})
    Lb, Rb = L[rows], R[cols]
    S = np.zeros((len(rows), len(cols)))
    for i, j, x in entries:
        a, c = rows.index(i), cols.index(j)
        S[a, c] = Lb[a] @ Rb[c] - x
    coef = b * mu / max(m, n)
    PR = coef * R.T @ R + (1 - mu) * Rb.T @ Rb
    PL = coef * L.T @ L + (1 - mu) * Lb.T @ Lb
    L[rows] = Lb - t * S @ Rb @ np.linalg.inv(PR)
    R[cols] = Rb - t * S.T @ Lb @ np.linalg.inv(PL)
    return L, R


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def small_instance(n=20, m=20, r=3, os=2, seed=0, cn=1.0):
    data, truth = generate(GeneratorSpec(n, m, r, os, condition_number=cn, seed=seed))
    f = random_factors(n, m, r, stream(seed, "init"))
    return data, truth, f


def exact_instance():
    # integer factors: every product and residual is exact in float64
    L = np.array([[1.0, 2.0], [3.0, 1.0], [0.0, 1.0]])
    R = np.array([[1.0, 0.0], [2.0, 1.0], [1.0, 1.0]])
    truth = FactorPair(L, R)
    P = truth.product()
    data = ObservedMatrix.from_entries(3, 3, [(i, j, P[i, j]) for i in range(3) for j in range(3)])
    return data, truth


def take_batch(data, idx):
    return batch_from_arrays(data.rows[idx], data.cols[idx], data.values[idx])


class TestSgdStep:
    def test_hand_arithmetic(self):
        f = FactorPair([[1.0]], [[2.0]])
        sgd_step(f, build_batch([(0, 0, 4.0)]), 0.1)
        assert f.L[0, 0] == pytest.approx(1.4, abs=1e-15)
        assert f.R[0, 0] == pytest.approx(2.2, abs=1e-15)

    def test_zero_residual_and_zero_step(self):
        data, truth, f = small_instance()
        batch = take_batch(data, np.arange(5))
        g = truth.copy()
        sgd_step(g, batch, 0.3)
        np.testing.assert_array_equal(g.L, truth.L)
        h = f.copy()
        sgd_step(h, batch, 0.0)
        np.testing.assert_array_equal(h.L, f.L)
        np.testing.assert_array_equal(h.R, f.R)

    def test_simultaneous_update(self):
        f = FactorPair([[1.0], [3.0]], [[2.0]])
        # two entries share column 0; R update must use pre-step L
        sgd_step(f, build_batch([(0, 0, 4.0), (1, 0, 5.0)]), 0.1)
        s = np.array([1 * 2 - 4.0, 3 * 2 - 5.0])
        assert f.R[0, 0] == pytest.approx(2.0 - 0.1 * (s[0] * 1 + s[1] * 3), abs=1e-15)


class TestScaledStep:
    def test_explicit_inverse_oracle(self):
        data, _, f = small_instance(20, 20, 3, 3, seed=1)
        idx = stream(1, "pick").choice(data.nnz, 5, replace=False)
        batch = take_batch(data, idx)
        want_L, want_R = oracle_scaled_step(f.L, f.R, batch.global_entries, 0.3, 0.5)
        g = f.copy()
        scaled_sgd_step(g, GramCache.from_factors(g), batch, 0.3, 0.5)
        assert rel(g.L, want_L) <= 1e-10
        assert rel(g.R, want_R) <= 1e-10

    def test_identity_preconditioner_equals_plain(self):
        # mu = 0 and L_b, R_b orthonormal rows make P_L = P_R = I
        L = np.array([[1.0, 0.0], [0.0, 1.0], [0.4, 0.2]])
        R = np.array([[1.0, 0.0], [0.0, 1.0], [0.7, -0.1]])
        batch = build_batch([(0, 0, 2.0), (1, 1, -1.0), (0, 1, 0.5)])
        a, b = FactorPair(L, R), FactorPair(L, R)
        scaled_sgd_step(a, GramCache.from_factors(a), batch, 0.2, 0.0)
        sgd_step(b, batch, 0.2)
        np.testing.assert_allclose(a.L, b.L, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(a.R, b.R, rtol=1e-14, atol=1e-15)

    def test_zero_residual_batch(self):
        data, truth, _ = small_instance(seed=2)
        g = truth.copy()
        cache = GramCache.from_factors(g)
        dgL, dgR = scaled_sgd_step(g, cache, take_batch(data, np.arange(7)), 0.5, 0.5)
        np.testing.assert_array_equal(g.L, truth.L)
        np.testing.assert_array_equal(g.R, truth.R)
        assert not dgL.any() and not dgR.any()

    def test_gram_delta(self):
        data, _, f = small_instance(seed=3)
        cache = GramCache.from_factors(f)
        gL0 = cache.gL.copy()
        dgL, _ = scaled_sgd_step(f, cache, take_batch(data, np.arange(6)), 0.2, 0.5)
        np.testing.assert_allclose(gL0 + dgL, sd.gram(f.L), atol=1e-12)
        assert cache.staleness == 1

    def test_mu_zero_underdetermined_raises(self):
        data, _, f = small_instance(r=3, seed=4)
        with pytest.raises(Exception) as exc:
            scaled_sgd_step(f, GramCache.from_factors(f), take_batch(data, np.arange(2)), 0.1, 0.0)
        assert "mu > 0" in str(exc.value)

    def test_short_batch_uses_actual_length(self):
        # same entries as a 3-batch: coefficient must use b = 3
        data, _, f = small_instance(seed=5)
        batch = take_batch(data, np.arange(3))
        want_L, want_R = oracle_scaled_step(f.L, f.R, batch.global_entries, 0.2, 0.7)
        g = f.copy()
        run_epoch(g, GramCache.from_factors(g), ObservedMatrix(
            20, 20, batch.rows, batch.cols, batch.values), np.arange(3), 10, 0.2, 0.7)
        assert rel(g.L, want_L) <= 1e-10 and rel(g.R, want_R) <= 1e-10


class TestGauge:
    def test_transform_examples(self):
        _, _, f = small_instance()
        g = gauge_transform(f, np.eye(3))
        np.testing.assert_array_equal(g.L, f.L)
        h = gauge_transform(f, 2 * np.eye(3))
        np.testing.assert_allclose(h.L, f.L / 2, rtol=1e-15)
        np.testing.assert_allclose(h.R, f.R * 2, rtol=1e-15)
        M = np.random.default_rng(0).standard_normal((3, 3))
        k = gauge_transform(f, M)
        assert rel(k.product(), f.product()) < 1e-10

    def test_singular(self):
        _, _, f = small_instance()
        with pytest.raises(SingularGauge):
            gauge_transform(f, np.diag([1.0, 1.0, 0.0]))

    @pytest.mark.parametrize("seed", range(5))
    def test_scaled_step_commutes_with_gauge(self, seed):
        rng = np.random.default_rng(seed)
        data, _, f = small_instance(30, 25, 3, 4, seed=seed)
        M = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        assert np.linalg.cond(M) <= 1e3
        batch = take_batch(data, rng.choice(data.nnz, 8, replace=False))
        a = f.copy()
        scaled_sgd_step(a, GramCache.from_factors(a), batch, 0.4, 0.6)
        b = gauge_transform(f, M)
        scaled_sgd_step(b, GramCache.from_factors(b), batch, 0.4, 0.6)
        want = gauge_transform(a, M)
        assert rel(b.L[batch.row_map], want.L[batch.row_map]) <= 1e-8
        assert rel(b.R[batch.col_map], want.R[batch.col_map]) <= 1e-8

    def test_plain_step_is_not_invariant(self):
        data, _, f = small_instance(30, 25, 3, 4, seed=1)
        M = np.diag([4.0, 1.0, 1.0])
        batch = take_batch(data, np.arange(8))
        a = f.copy()
        sgd_step(a, batch, 0.4)
        b = gauge_transform(f, M)
        sgd_step(b, batch, 0.4)
        want = gauge_transform(a, M)
        assert rel(b.L[batch.row_map], want.L[batch.row_map]) > 1e-3


class TestInitialStepsize:
    def test_scalar_grid_search(self):
        data = ObservedMatrix(1, 1, [0], [0], [4.0])
        f = FactorPair([[1.0]], [[2.0]])
        t0 = initial_stepsize(f, data, 0.5, 1, scaled=False)
        # residual -2; gradient (-4, -2); linearized change of the entry 4*2 + 1*2 = 10 per unit t
        grid = np.linspace(0, 1, 1_000_001)
        phi = 0.5 * (-2.0 + grid * 10.0) ** 2
        assert abs(t0 - grid[np.argmin(phi)]) < 1e-6
        assert t0 == pytest.approx(0.2, rel=1e-12)

    def test_stationary_start(self):
        data, truth = exact_instance()
        with pytest.raises(DegenerateDirection):
            initial_stepsize(truth, data, 0.5, 10)
        with pytest.raises(DegenerateDirection):
            initial_stepsize(truth, data, 0.5, 10, scaled=False)

    def test_gauge_invariant(self):
        data, _, f = small_instance(40, 30, 3, 4, seed=2)
        rng = np.random.default_rng(2)
        for _ in range(5):
            M = rng.standard_normal((3, 3)) + 2 * np.eye(3)
            for b in (1, 10, data.nnz):
                a = initial_stepsize(f, data, 0.5, b)
                c = initial_stepsize(gauge_transform(f, M), data, 0.5, b)
                assert abs(a - c) / a < 1e-10

    def test_full_batch_matches_listed_formula(self):
        # b = |Omega| with mu in (0, 1): local block is the full touched Gram
        data, _, f = small_instance(15, 12, 2, 3, seed=3)
        mu, b = 0.5, data.nnz
        res = metrics.residuals(f, data)
        L, R = f.L, f.R
        GL, GR = np.zeros_like(L), np.zeros_like(R)
        np.add.at(GL, data.rows, res[:, None] * R[data.cols])
        np.add.at(GR, data.cols, res[:, None] * L[data.rows])
        Rt, Lt = R[np.unique(data.cols)], L[np.unique(data.rows)]
        coef = b * mu / max(L.shape[0], R.shape[0])
        DL = GL @ np.linalg.inv(coef * R.T @ R + (1 - mu) * Rt.T @ Rt)
        DR = GR @ np.linalg.inv(coef * L.T @ L + (1 - mu) * Lt.T @ Lt)
        delta = (np.einsum("ij,ij->i", DL[data.rows], R[data.cols])
                 + np.einsum("ij,ij->i", L[data.rows], DR[data.cols]))
        want = res @ delta / (delta @ delta)
        assert initial_stepsize(f, data, mu, b) == pytest.approx(want, rel=1e-10)

    def test_inclusion_probability(self):
        p = inclusion_probability(np.array([0, 1, 3, 10]), 10, 2)
        np.testing.assert_allclose(p, [0.0, 0.2, 1 - (7 * 6) / (10 * 9), 1.0], rtol=1e-12)


class TestEpoch:
    def test_partition_sizes(self):
        data = ObservedMatrix(5, 5, [0, 0, 1, 1, 2, 2, 3, 3, 4, 4], [0, 1, 1, 2, 2, 3, 3, 4, 4, 0],
                              np.linspace(0.1, 1, 10))
        f = random_factors(5, 5, 1, stream(0, "init"))
        cache = GramCache.from_factors(f)
        run_epoch(f, cache, data, np.arange(10), 3, 0.01, 0.5)
        assert cache.staleness == 4

    def test_batches_follow_order(self):
        data, _, f = small_instance(seed=6)
        order = stream(6, "shuffle").permutation(data.nnz)
        b, t, mu = 7, 0.3, 0.5
        want = f.copy()
        for s in range(0, data.nnz, b):
            scaled_sgd_step(want, GramCache.from_factors(want), take_batch(data, order[s:s + b]), t, mu)
        got = f.copy()
        run_epoch(got, GramCache.from_factors(got), data, order, b, t, mu,
                  refresh_each_step=True)
        assert rel(got.L, want.L) < 1e-10 and rel(got.R, want.R) < 1e-10

    def test_full_batch_mu_one_is_batch_scaled_gradient(self):
        data, _, f = small_instance(25, 20, 3, 3, seed=7)
        t = 0.4
        res = metrics.residuals(f, data)
        L, R = f.L, f.R
        GL, GR = np.zeros_like(L), np.zeros_like(R)
        np.add.at(GL, data.rows, res[:, None] * R[data.cols])
        np.add.at(GR, data.cols, res[:, None] * L[data.rows])
        coef = data.nnz / max(L.shape[0], R.shape[0])
        want_L = L - t * GL @ np.linalg.inv(coef * R.T @ R)
        want_R = R - t * GR @ np.linalg.inv(coef * L.T @ L)
        g = f.copy()
        run_epoch(g, GramCache.from_factors(g), data, np.arange(data.nnz), data.nnz, t, 1.0)
        assert rel(g.L, want_L) <= 1e-10 and rel(g.R, want_R) <= 1e-10

    def test_gram_cache_drift(self):
        data, _, f = small_instance(60, 50, 4, 5, seed=8)
        b = 10
        cache = GramCache.from_factors(f)
        t = initial_stepsize(f, data, 0.5, b)
        for e in range(10):
            run_epoch(f, cache, data, stream(8, "shuffle", e).permutation(data.nnz), b, t, 0.5)
        assert cache.staleness >= 10 * data.nnz // b
        assert rel(cache.gL, sd.gram(f.L)) <= 1e-8
        assert rel(cache.gR, sd.gram(f.R)) <= 1e-8
        cache.refresh(f)
        np.testing.assert_array_equal(cache.gL, sd.gram(f.L))

    def test_sherman_morrison_path_matches_dense(self):
        data, _, f = small_instance(50, 50, 3, 5, seed=9)
        mu = 0.5
        t = initial_stepsize(f, data, mu, 1)
        fast, dense = f.copy(), f.copy()
        cf, cd = GramCache.from_factors(fast), GramCache.from_factors(dense)
        for e in range(5):
            order = stream(9, "shuffle", e).permutation(data.nnz)
            run_epoch(fast, cf, data, order, 1, t, mu, fast_b1=True)
            run_epoch(dense, cd, data, order, 1, t, mu, fast_b1=False)
            cf.refresh(fast)
            cd.refresh(dense)
        assert rel(fast.L, dense.L) <= 1e-8 and rel(fast.R, dense.R) <= 1e-8

    def test_single_entry_b1_step_matches_oracle(self):
        data, _, f = small_instance(seed=10)
        i, j, x = int(data.rows[3]), int(data.cols[3]), float(data.values[3])
        want_L, want_R = oracle_scaled_step(f.L, f.R, [(i, j, x)], 0.3, 0.4)
        g = f.copy()
        scaled_sgd_step_b1(g, GramCache.from_factors(g, with_inverse=True), (i, j, x), 0.3, 0.4)
        assert rel(g.L, want_L) <= 1e-10 and rel(g.R, want_R) <= 1e-10


def test_finite_differences():
    data, _, f = small_instance(20, 20, 3, 3, seed=11)
    idx = np.arange(9)
    batch = take_batch(data, idx)

    def loss(L, R):
        return 0.5 * sum((L[i] @ R[j] - x) ** 2 for i, j, x in batch.global_entries)

    from scaledsgd.batching import residual, residual_times_factor
    Lb, Rb = f.L[batch.row_map], f.R[batch.col_map]
    res = residual(batch, Lb, Rb)
    dL = residual_times_factor(res, batch, Rb, "left")
    dR = residual_times_factor(res, batch, Lb, "right")
    h = 1e-6
    num_L = np.zeros_like(dL)
    for a, i in enumerate(batch.row_map):
        for q in range(3):
            Lp, Lm = f.L.copy(), f.L.copy()
            Lp[i, q] += h
            Lm[i, q] -= h
            num_L[a, q] = (loss(Lp, f.R) - loss(Lm, f.R)) / (2 * h)
    num_R = np.zeros_like(dR)
    for c, j in enumerate(batch.col_map):
        for q in range(3):
            Rp, Rm = f.R.copy(), f.R.copy()
            Rp[j, q] += h
            Rm[j, q] -= h
            num_R[c, q] = (loss(f.L, Rp) - loss(f.L, Rm)) / (2 * h)
    assert rel(dL, num_L) <= 1e-5 and rel(dR, num_R) <= 1e-5


class TestSchedules:
    def test_bold_driver(self):
        assert bold_driver(0.1, 1.0, 2.0) == 0.05
        assert abs(bold_driver(0.1, 2.0, 1.0) - 0.11) <= 1e-15
        assert abs(bold_driver(0.1, 1.0, 1.0) - 0.11) <= 1e-15

    def test_exp_decay_and_fixed(self):
        cfg = SolverConfig(schedule="exp_decay", decay_rate=0.9)
        assert next_stepsize(cfg, 1.0, 1.0, 2.0) == 0.9
        assert next_stepsize(SolverConfig(schedule="fixed"), 0.3, 1.0, 2.0) == 0.3


class TestConfig:
    def test_mu_range(self):
        with pytest.raises(ConfigError, match="mu out of"):
            SolverConfig(mu=1.5).validate()

    def test_batch_exceeds_entries(self):
        with pytest.raises(ConfigError):
            SolverConfig(batch_size=50).validate(nnz=49)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            SolverConfig.from_dict({"mu": 0.5, "momentum": 0.9})

    def test_round_trip(self):
        cfg = SolverConfig(mu=0.3, batch_size=4, schedule="fixed")
        assert SolverConfig.from_dict(cfg.to_dict()) == cfg


class TestSolve:
    def test_deterministic(self):
        data, _, _ = small_instance(40, 40, 3, 4, seed=12)
        cfg = SolverConfig(seed=3, max_iters=15)
        a = solve(data, 3, cfg)
        b = solve(data, 3, cfg)
        assert [(r.cost, r.stepsize) for r in a.trace] == [(r.cost, r.stepsize) for r in b.trace]
        np.testing.assert_array_equal(a.factors.L, b.factors.L)

    def test_converges(self):
        data, _, _ = small_instance(80, 80, 3, 5, seed=13)
        res = solve(data, 3, SolverConfig(seed=1))
        assert res.verdict in (metrics.Verdict.MSE_REACHED, metrics.Verdict.RESIDUAL_REACHED)
        assert all(r.iteration == k + 1 for k, r in enumerate(res.trace))

    def test_descent_with_small_fixed_step(self):
        data, _, _ = small_instance(100, 100, 3, 5, seed=14)
        cfg = SolverConfig(seed=2, max_iters=100, mse_tol=0.0, rel_res_tol=0.0,
                           schedule="fixed")
        f0 = initial_factors(data, 3, cfg)
        cfg.initial_step = 0.1 * initial_stepsize(f0, data, cfg.mu, cfg.batch_size)
        res = solve(data, 3, cfg)
        costs = [res.initial.cost] + [r.cost for r in res.trace]
        assert len(res.trace) == 100
        assert sum(b <= a for a, b in zip(costs, costs[1:])) >= 95

    def test_mu_zero_small_batch_reports_error(self):
        data, _, _ = small_instance(40, 40, 5, 4, seed=15)
        with pytest.raises(SolverError, match="mu > 0"):
            solve(data, 5, SolverConfig(mu=0.0, batch_size=2))

    def test_divergence_verdict(self):
        data, _, _ = small_instance(40, 40, 3, 4, seed=16)
        res = solve(data, 3, SolverConfig(initial_step=1e6, schedule="fixed"), engine="sgd")
        assert res.verdict is metrics.Verdict.DIVERGED
        assert res.final.cost == float("inf")

    def test_degenerate_start_falls_back(self):
        data, truth = exact_instance()
        res = solve(data, init=truth, config=SolverConfig(batch_size=3, fallback_step=1e-3, max_iters=2))
        assert res.initial_step == 1e-3
        assert res.notes and "fallback" in res.notes[0]

    def test_sink_and_test_metric(self):
        spec = GeneratorSpec(40, 40, 3, 4, test_count=100, seed=18)
        data, truth = generate(spec)
        from scaledsgd.problem import held_out
        test = held_out(spec, data, truth)
        seen = []
        res = solve(data, 3, SolverConfig(max_iters=3), test=test, sink=seen.append)
        assert seen == res.trace
        assert all(r.test_metric is not None for r in seen)

    @pytest.mark.parametrize("engine", ["sgd", "als", "ccdpp"])
    def test_other_engines(self, engine):
        data, _, _ = small_instance(40, 40, 3, 5, seed=19)
        res = solve(data, 3, SolverConfig(max_iters=5), engine=engine)
        assert len(res.trace) >= 1 and res.trace[-1].cost < res.initial.cost

    def test_unknown_engine(self):
        data, _, _ = small_instance()
        with pytest.raises(ConfigError):
            solve(data, 3, engine="adam")


class TestRandomFactors:
    def test_balanced(self):
        f = random_factors(200, 50, 4, stream(0, "init"))
        assert abs(np.linalg.norm(f.L) / np.linalg.norm(f.R) - 1) < 1e-12

    def test_unbalanced(self):
        f = random_factors(100, 100, 5, stream(0, "init"), balance="unbalanced", ratio=4.0)
        assert abs(np.linalg.norm(f.L) / np.linalg.norm(f.R) - 4) < 1e-12

    def test_std(self):
        f = random_factors(2000, 2000, 4, stream(1, "init"), balance="raw")
        assert abs(f.L.std() - 0.5) < 0.02
