import numpy as np
import pytest

from onlinecal.core import DomainError, GaussianCDF, OutcomeBound, ProbGrid, StepCDF
from onlinecal.metrics import (
    CalibLedger,
    MetricTrace,
    StreamMetrics,
    calib_error,
    calib_error_from_log,
    central_coverage,
    coverage_check,
    coverage_sides,
    crps,
    crps_regret,
    expected_value,
    markov_exceedance,
    pit_bins,
    pit_calib_score,
    probe_grid,
    rho,
    trace_columns,
)
from oracles import calib_recount, gaussian_crps_closed_form, gaussian_crps_truncated, pit_score_brute


def ledger(N=2):
    return CalibLedger([0.0], ProbGrid(N))


class TestRho:
    def test_never_played(self):
        assert rho(ledger(), 0.0, 0.5) == 0.0

    def test_two_thirds(self):
        L = ledger()
        for y in (-1.0, 1.0, -0.5):
            L.update([0.5], y)
        assert rho(L, 0.0, 0.5) == pytest.approx(2 / 3)

    def test_all_below(self):
        L = ledger()
        for y in (-1.0, -2.0):
            L.update([1.0], y)
        assert rho(L, 0.0, 1.0) == 1.0

    def test_unknown_probe(self):
        with pytest.raises(DomainError):
            rho(ledger(), 0.3, 0.5)


class TestCalibError:
    def test_perfect(self):
        L = ledger()
        L.update([0.0], 1.0)
        L.update([1.0], -1.0)
        L.update([0.5], -1.0)
        L.update([0.5], 1.0)
        assert calib_error(L, 0.0) == 0.0

    def test_one_round(self):
        L = ledger()
        L.update([0.5], 1.0)
        assert calib_error(L, 0.0) == 0.5

    def test_three_levels(self):
        L = ledger()
        L.update([0.0], 1.0)   # rho(0) = 0
        L.update([0.5], -1.0)  # rho(1/2) = 1
        L.update([1.0], -1.0)  # rho(1) = 1
        assert calib_error(L, 0.0) == pytest.approx(1 / 6)

    def test_empty(self):
        assert calib_error(ledger(), 0.0) == 0.0

    def test_incremental_matches_recount(self):
        rs = np.random.default_rng(3)
        N, T = 10, 1000
        probes = np.array([-1.0, 0.0, 2.0])
        L = CalibLedger(probes, ProbGrid(N))
        log_p, ys = [], []
        for _ in range(T):
            p = rs.integers(0, N + 1, size=3) / N
            y = rs.normal()
            L.update(p, y)
            log_p.append(p)
            ys.append(y)
        log_p = np.array(log_p)
        for k, yk in enumerate(probes):
            below = [int(y <= yk) for y in ys]
            assert L.calib_errors()[k] == calib_recount(log_p[:, k], below, N)
            assert L.calib_errors()[k] == calib_error_from_log(log_p[:, k], below, ProbGrid(N))

    def test_continuous_forecasts_rounded_to_grid(self):
        L = ledger(N=10)
        L.update([0.34], 1.0)
        assert L.plays[0, 3] == 1


class TestCRPS:
    def test_step_at_outcome(self):
        z = OutcomeBound(10.0).zgrid(200)
        y = float(z[57])
        assert crps(y, StepCDF([y], [1.0]), z) == 0.0

    @pytest.mark.parametrize("y,mu,sigma", [(0.0, 0.0, 1.0), (1.3, 0.2, 0.8), (-2.0, 0.5, 1.0),
                                            (0.4, -0.3, 0.5)])
    def test_gaussian_closed_form(self, y, mu, sigma):
        B = 2 * (6 * sigma + abs(mu))
        z = OutcomeBound(B).zgrid(200)
        got = crps(y, GaussianCDF(mu, sigma), z)
        assert got == pytest.approx(gaussian_crps_closed_form(y, mu, sigma), rel=1e-3)
        assert got == pytest.approx(gaussian_crps_truncated(y, mu, sigma, z[0], z[-1]), rel=1e-3)

    def test_refinement_stable(self):
        F = GaussianCDF(0.3, 0.9)
        b = OutcomeBound(12.0)
        coarse, fine = crps(0.7, F, b.zgrid(200)), crps(0.7, F, b.zgrid(4000))
        assert coarse == pytest.approx(fine, rel=1e-3)

    def test_zero_cdf(self):
        B = 10.0
        z = OutcomeBound(B).zgrid(200)
        F0 = StepCDF([z[0]], [0.0])
        assert crps(0.0, F0, z) == pytest.approx(B / 2)

    def test_outside(self):
        with pytest.raises(DomainError):
            crps(6.0, GaussianCDF(0, 1), OutcomeBound(10.0).zgrid())


def _metrics(B=10.0, interval=(-1.0, 1.0)):
    return StreamMetrics(OutcomeBound(B), ProbGrid(10), interval=interval)


class TestRegret:
    def test_identical(self):
        m = _metrics()
        F = GaussianCDF(0.0, 1.0)
        for y in (0.1, -0.3):
            m.record(y, F, F)
        assert crps_regret(m.trace) == 0.0

    def test_single_round(self):
        m = _metrics()
        F, G = GaussianCDF(0.0, 1.0), StepCDF([0.0], [1.0])
        m.record(0.5, F, G)
        z = OutcomeBound(10.0).zgrid()
        assert crps_regret(m.trace) == pytest.approx(crps(0.5, G, z) - crps(0.5, F, z))
        assert crps(0.5, G, z) == pytest.approx(0.5)

    def test_empty(self):
        assert crps_regret(_metrics().trace) == 0.0


class TestPIT:
    def test_uniform(self):
        u = [0.1, 0.3, 0.45, 0.55, 0.7, 0.9]
        w = [2, 2, 1, 1, 2, 2]
        assert pit_calib_score(np.repeat(u, w)) == pytest.approx(0.0, abs=1e-15)

    def test_single_bin(self):
        assert pit_calib_score([0.1] * 7) == pytest.approx(0.78)

    def test_single_value(self):
        assert pit_calib_score([0.5]) == pytest.approx(pit_score_brute([0.5]))
        assert pit_calib_score([0.5]) == pytest.approx(0.04 + 0.04 + 0.81 + 0.01 + 0.04 + 0.04)

    def test_edges(self):
        np.testing.assert_array_equal(pit_bins([0.0, 0.2, 0.2000001, 1.0]), [2, 1, 0, 0, 0, 1])

    def test_empty(self):
        assert pit_calib_score([]) == 0.0


class TestCoverage:
    def test_sharp_correct(self):
        m = _metrics()
        for y in (0.5, -3.0, 2.0, 0.0):
            m.record(y, GaussianCDF(0, 1), StepCDF([y], [1.0]))
        mass, freq = coverage_check(m.trace, -1.0, 1.0)
        assert mass == freq == 0.5

    def test_hand_stream(self):
        mass, freq = coverage_sides([0.1, 0.0, 0.3, 0.2], [0.9, 0.5, 0.6, 1.0],
                                    [0.0, 3.0, -0.5, 1.5], -1.0, 1.0)
        assert mass == pytest.approx((0.8 + 0.5 + 0.3 + 0.8) / 4)
        assert freq == 0.5

    def test_empty(self):
        assert coverage_check(_metrics().trace) == (0.0, 0.0)
        assert central_coverage(_metrics().trace) == (0.0, 0.0)

    def test_interval_mismatch(self):
        with pytest.raises(DomainError):
            coverage_check(_metrics().trace, -2.0, 1.0)


class TestMarkov:
    def test_equal(self):
        assert markov_exceedance([(1.0, 1.0)] * 4, 2) == 0.0

    def test_five_pairs(self):
        pairs = [(1.0, 2.5), (1.0, 1.9), (0.5, 1.0), (2.0, 0.1), (0.1, 3.0)]
        assert markov_exceedance(pairs, 2) == pytest.approx(3 / 5)

    def test_r_one(self):
        with pytest.raises(DomainError):
            markov_exceedance([(1.0, 1.0)], 1)


def test_expected_value_lumps_tails():
    z = np.array([-1.0, 0.0, 1.0])
    assert expected_value([0.25, 0.5, 0.5], z) == pytest.approx(0.25 * 1 + 0.25 * 0 + 0.5 * 1)


def test_trace_schema():
    assert trace_columns(2)[-2:] == ["calib_error_probe_1", "calib_error_probe_2"]
    assert len(trace_columns()) == 17
    np.testing.assert_allclose(probe_grid(OutcomeBound(10.0)), np.arange(-4, 5))


def test_record_row_layout():
    m = _metrics()
    row = m.record(0.2, GaussianCDF(0, 1), GaussianCDF(0, 1))
    assert len(row) == len(m.trace.columns) and row[0] == 1
    assert isinstance(m.trace, MetricTrace) and m.trace.T == 1
    s = m.summary()
    assert s["rounds"] == 1 and s["crps_regret"] == 0.0
