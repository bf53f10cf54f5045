import numpy as np
import pytest

from onlinecal.bayesopt import (
    BENCHMARKS,
    BOState,
    STD_ZGRID,
    acquire,
    benchmark_eval,
    bo_run,
    calibrate_loo,
    calibrated_lcb,
    get_benchmark,
    initial_design,
    lcb,
    loo_pit_values,
)
from onlinecal.core import DomainError, RngHandle, StateError
from onlinecal.forecasters import GPHyper
from onlinecal.metrics import pit_calib_score
from onlinecal.recalibrator import RecalibratorBank
from oracles import rbf


class TestBenchmarks:
    def test_ackley_origin(self):
        assert benchmark_eval("ackley2", [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
        assert benchmark_eval("ackley10", np.zeros(10)) == pytest.approx(0.0, abs=1e-12)

    def test_sixhump_minimum(self):
        assert benchmark_eval("sixhumpcamel", [0.0898, -0.7126]) == pytest.approx(-1.0316, abs=1e-4)
        assert benchmark_eval("sixhumpcamel", [-0.0898, 0.7126]) == pytest.approx(-1.0316, abs=1e-4)

    def test_mccormick_minimum(self):
        assert benchmark_eval("mccormick", [-0.54719, -1.54719]) == pytest.approx(-1.9133, abs=1e-4)

    def test_beale_and_alpine(self):
        assert benchmark_eval("beale", [3.0, 0.5]) == 0.0
        assert benchmark_eval("alpine10", np.zeros(10)) == 0.0

    @pytest.mark.parametrize("name", sorted(BENCHMARKS))
    def test_finite_on_box(self, name):
        fn = get_benchmark(name)
        rs = np.random.default_rng(0)
        for x in np.vstack([fn.lo, fn.hi, rs.uniform(fn.lo, fn.hi, (20, fn.dim))]):
            assert np.isfinite(fn(x))

    def test_out_of_box(self):
        with pytest.raises(DomainError):
            benchmark_eval("sixhumpcamel", [3.5, 0.0])
        with pytest.raises(DomainError):
            benchmark_eval("ackley2", [0.0, 0.0, 0.0])
        with pytest.raises(DomainError):
            get_benchmark("rosenbrock")


def fitted_state(n=6, seed=0):
    fn = get_benchmark("sixhumpcamel")
    X = RngHandle(seed, "t").uniform(fn.lo, fn.hi, (n, 2))
    st = BOState(fn, X, [fn(x) for x in X])
    st.refit()
    return st


class TestLCB:
    def test_kappa_zero(self):
        st = fitted_state()
        X = np.array([[0.1, 0.2], [1.0, -1.0]])
        np.testing.assert_array_equal(lcb(st, X, 0.0), st.moments(X)[0])

    def test_zero_sigma(self, monkeypatch):
        st = fitted_state()
        monkeypatch.setattr(st, "moments", lambda X: (np.array([1.5]), np.array([0.0])))
        assert lcb(st, [[0.0, 0.0]], 2.0)[0] == 1.5

    def test_identity_bank_matches_gaussian_quantile(self):
        st = fitted_state()
        X = np.array([[0.3, -0.4], [-2.0, 1.5]])
        bank = RecalibratorBank(M=20, N=20, variant="expected")
        bank.begin_round(RngHandle(0, "id"))
        # Level (j-1)/M on interval j reproduces the baseline CDF at every interval edge.
        bank.set_round_forecasts(np.arange(20) / 20)
        mean, sd = st.moments(X)
        vec = calibrated_lcb(st, bank, X, 0.05)
        for k in range(2):
            z = mean[k] + sd[k] * STD_ZGRID
            step = z[1] - z[0]
            target = mean[k] - 1.6448536 * sd[k]
            assert abs(vec[k] - target) <= step
            per_point = calibrated_lcb(st, bank, X[k:k + 1], 0.05, zgrid=z)[0]
            assert abs(per_point - target) <= step
            assert per_point == pytest.approx(vec[k], abs=1e-9)


class TestAcquire:
    def test_budget_one(self):
        st = fitted_state()
        x = acquire(st, lambda C: lcb(st, C), RngHandle(3, "a"), budget=1, n_local=0)
        expected = RngHandle(3, "a").uniform(st.lo, st.hi, size=(1, 2))[0]
        np.testing.assert_array_equal(x, expected)

    def test_constant_acquisition_first_seen(self):
        st = fitted_state()
        x = acquire(st, lambda C: np.zeros(len(C)), RngHandle(4, "a"), budget=50)
        first = RngHandle(4, "a").uniform(st.lo, st.hi, size=(50, 2))[0]
        np.testing.assert_array_equal(x, first)

    def test_argmin_over_candidates(self):
        st = fitted_state()
        seen = {}

        def acq(C):
            seen["C"] = C
            return lcb(st, C)

        x = acquire(st, acq, RngHandle(5, "a"), budget=300)
        C = seen["C"]
        assert C.shape == (332, 2)
        assert np.all(C >= st.lo) and np.all(C <= st.hi)
        assert lcb(st, x[None, :])[0] == pytest.approx(np.min(lcb(st, C)))


class TestCalibrateLOO:
    def test_two_points(self):
        X = np.array([[0.1], [0.8]])
        bank = calibrate_loo(X, [0.3, -0.2], GPHyper(1.0, 0.5, 1e-4), RngHandle(0, "c"))
        assert bank.rounds == 2 and bank.loo_pits.size == 2
        assert bank.M == bank.grid.N == 10

    def test_too_small(self):
        with pytest.raises(StateError):
            calibrate_loo(np.zeros((1, 1)), [1.0], GPHyper(1, 1, 1e-4), RngHandle(0, "c"))

    def test_well_specified_prior_sample(self):
        rs = np.random.default_rng(21)
        X = rs.uniform(0, 1, (50, 1))
        h = GPHyper(1.0, 0.2, 0.01)
        K = rbf(X, X, 1.0, 0.2) + 0.01 * np.eye(50)
        y = np.linalg.cholesky(K) @ rs.normal(size=50)
        pits = loo_pit_values(X, y, h)
        assert pit_calib_score(pits) <= 0.05  # measured 0.020

    def test_deterministic_and_pure(self):
        st = fitted_state(8)
        X0 = st.X.copy()
        h = GPHyper(1.0, 0.3, 1e-4)
        a = calibrate_loo(st.to_unit(st.X), st.y, h, RngHandle(1, "c"))
        b = calibrate_loo(st.to_unit(st.X), st.y, h, RngHandle(1, "c"))
        np.testing.assert_array_equal(a._plays, b._plays)
        np.testing.assert_array_equal(st.X, X0)


class TestBORun:
    def test_one_iteration(self):
        r = bo_run("sixhumpcamel", 1, seed=1, calibrated=True, budget=64)
        assert r.y.size == 4 and len(r.best) == 1

    def test_incumbent_non_increasing(self):
        r = bo_run("beale", 8, seed=2, calibrated=False, budget=128)
        assert np.all(np.diff(r.best) <= 0)
        assert r.best[-1] == np.min(r.y)

    def test_paired_initial_design(self):
        a = bo_run("mccormick", 3, seed=5, calibrated=False, budget=64)
        b = bo_run("mccormick", 3, seed=5, calibrated=True, budget=64)
        np.testing.assert_array_equal(a.X[:3], b.X[:3])
        np.testing.assert_array_equal(a.X[:3], initial_design(get_benchmark("mccormick"), 5))

    def test_deterministic(self):
        a = bo_run("ackley2", 4, seed=3, calibrated=True, budget=64)
        b = bo_run("ackley2", 4, seed=3, calibrated=True, budget=64)
        assert a.best == b.best

    def test_needs_iterations(self):
        with pytest.raises(DomainError):
            bo_run("ackley2", 0, seed=0, calibrated=False)
