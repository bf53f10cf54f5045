"""Binary-outcome adversaries for a single calibrator."""

from onlinecal.binary_calib import CalibState, calib_update, foster_expected, foster_forecast
from onlinecal.core import ProbGrid, RngHandle

SUITES = ("constant_0", "constant_1", "alternating", "greedy")


def outcome(suite, t, state):
    if suite == "constant_0":
        return 0
    if suite == "constant_1":
        return 1
    if suite == "alternating":
        return t % 2
    # Sees the calibrator's state (hence its mixture mean) but not its coin flip.
    return int(foster_expected(state) < 0.5)


def run_suite(suite, T, N=10, seed=0, checkpoints=()):
    """Play T rounds; returns (state, forecasts, outcomes, {t: state copy})."""
    state = CalibState(ProbGrid(N))
    rng = RngHandle(seed, f"suite/{suite}")
    ps, os_, snaps = [], [], {}
    marks = set(checkpoints)
    for t in range(1, T + 1):
        o = outcome(suite, t, state)
        p = foster_forecast(state, rng)
        calib_update(state, p, o)
        ps.append(p)
        os_.append(o)
        if t in marks:
            snaps[t] = CalibState(state.grid, state.plays.copy(), state.successes.copy())
    return state, ps, os_, snaps
