"""Online binary calibration subroutines on the grid {0, 1/N, ..., 1}.

The randomized forecaster follows Foster's approachability rule: play near the
sign change of the per-level deficiencies s_i - (i/N) n_i, mixing the two
bracketing levels so the expected deficiency drift vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, ProbGrid, RngHandle, quantize


@dataclass
class CalibState:
    """Counts for one binary calibrator.

    ``plays[i]`` is how often level i/N was forecast, ``successes[i]`` how many
    of those rounds had outcome 1. Arrays may be views into a bank's storage.
    """

    grid: ProbGrid
    plays: np.ndarray = None
    successes: np.ndarray = None

    def __post_init__(self):
        size = self.grid.N + 1
        if self.plays is None:
            self.plays = np.zeros(size, dtype=np.int64)
        if self.successes is None:
            self.successes = np.zeros(size, dtype=np.int64)
        if self.plays.shape != (size,) or self.successes.shape != (size,):
            raise DomainError("count arrays must have N + 1 entries")

    @property
    def t(self) -> int:
        return int(self.plays.sum())

    def rho(self, i: int) -> float | None:
        """Empirical frequency at level i/N, or None if never played."""
        n = self.plays[i]
        return None if n == 0 else float(self.successes[i]) / float(n)

    def check(self) -> None:
        if np.any(self.successes < 0) or np.any(self.successes > self.plays):
            raise DomainError("inconsistent calibration state")


def scaled_deficiencies(plays: np.ndarray, successes: np.ndarray, N: int) -> np.ndarray:
    """N * (s_i - (i/N) n_i), exact in integer arithmetic. Works row-wise on 2-D input."""
    return N * successes - np.arange(N + 1) * plays


def bracket(plays: np.ndarray, successes: np.ndarray, N: int):
    """Smallest i with d_i >= 0 >= d_{i+1}, and the probability of playing i/N.

    Returns (i, w) as arrays for 2-D input (one row per calibrator) or scalars for 1-D.
    """
    d = scaled_deficiencies(plays, successes, N)
    one = d.ndim == 1
    d = np.atleast_2d(d)
    cond = (d[:, :-1] >= 0) & (d[:, 1:] <= 0)
    # d_0 = N s_0 >= 0 and d_N = N (s_N - n_N) <= 0, so a bracket always exists.
    assert cond.any(axis=1).all(), "no deficiency sign change"
    i = np.argmax(cond, axis=1)
    rows = np.arange(d.shape[0])
    a = np.abs(d[rows, i]).astype(float)
    b = np.abs(d[rows, i + 1]).astype(float)
    tot = a + b
    w = np.where(tot > 0, b / np.where(tot > 0, tot, 1.0), 0.5)
    if one:
        return int(i[0]), float(w[0])
    return i, w


def foster_forecast(state: CalibState, rng: RngHandle) -> float:
    """Draw one forecast i/N from the two-point Foster mixture."""
    N = state.grid.N
    i, w = bracket(state.plays, state.successes, N)
    k = i if rng.random() < w else i + 1
    return k / N


def foster_expected(state: CalibState) -> float:
    """Mean of the Foster mixture; the non-randomized variant outputs this."""
    N = state.grid.N
    i, w = bracket(state.plays, state.successes, N)
    return w * i / N + (1.0 - w) * (i + 1) / N


def calib_update(state: CalibState, played: float, outcome: int) -> CalibState:
    """Record that level `played` was forecast and `outcome` occurred (in place)."""
    if outcome not in (0, 1, True, False):
        raise DomainError(f"binary outcome expected, got {outcome!r}")
    i = state.grid.index_of(played)
    state.plays[i] += 1
    state.successes[i] += int(outcome)
    return state


def subroutine_calib_error(state: CalibState) -> float:
    """Sum over levels of |rho(i/N) - i/N| weighted by play frequency; 0 before any play."""
    t = state.t
    if t == 0:
        return 0.0
    N = state.grid.N
    num = int(np.abs(scaled_deficiencies(state.plays, state.successes, N)).sum())
    return num / (N * t)


@dataclass
class BinFreqState:
    """Tophat-kernel frequency estimate per bin of raw probability.

    Each bin carries a pseudo-count of one observation at 1/2.
    """

    nbins: int
    counts: np.ndarray = field(default=None)
    sums: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.nbins < 1:
            raise DomainError("need at least one bin")
        if self.counts is None:
            self.counts = np.zeros(self.nbins, dtype=np.int64)
        if self.sums is None:
            self.sums = np.zeros(self.nbins, dtype=np.int64)

    def bin_of(self, raw: float) -> int:
        return quantize(raw, self.nbins) - 1

    def forecasts(self) -> np.ndarray:
        return (self.sums + 0.5) / (self.counts + 1.0)


def kde_forecast(state: BinFreqState, raw: float) -> float:
    if not 0.0 <= raw <= 1.0:
        raise DomainError(f"probability outside [0, 1]: {raw!r}")
    b = state.bin_of(raw)
    return float((state.sums[b] + 0.5) / (state.counts[b] + 1.0))


def kde_update(state: BinFreqState, raw: float, outcome: int) -> BinFreqState:
    if not 0.0 <= raw <= 1.0:
        raise DomainError(f"probability outside [0, 1]: {raw!r}")
    b = state.bin_of(raw)
    state.counts[b] += 1
    state.sums[b] += int(outcome)
    return state
