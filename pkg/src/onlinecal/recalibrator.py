"""Online recalibration of CDF forecasts with a bank of binary calibrators.

Subroutine j (1-based) owns the interval [(j-1)/M, j/M) of baseline CDF values and
learns to forecast the event F_t(y_t) <= j/M. The recalibrated forecast at z is
the current output of the subroutine whose interval contains F_t(z).
"""

from __future__ import annotations

import logging

import numpy as np

from .binary_calib import BinFreqState, CalibState, bracket
from .core import (
    DomainError,
    GaussianCDF,
    OutcomeBound,
    PredictiveCDF,
    ProbGrid,
    RngHandle,
    StateError,
    StepCDF,
    quantize,
)

log = logging.getLogger(__name__)

VARIANTS = ("randomized", "expected", "kde")


def isotonic_projection(values, weights=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit (pool adjacent violators)."""
    y = np.asarray(values, dtype=float)
    if y.ndim != 1:
        raise DomainError("isotonic projection expects a 1-D sequence")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for yi, wi in zip(y, w):
        means.append(float(yi))
        wts.append(float(wi))
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, n2 = means.pop(), wts.pop(), sizes.pop()
            wsum = wts[-1] + w2
            means[-1] = (means[-1] * wts[-1] + m2 * w2) / wsum
            wts[-1] = wsum
            sizes[-1] += n2
    return np.repeat(means, sizes)


def _monotone_fit_runs(values: np.ndarray) -> np.ndarray:
    """Isotonic fit computed on runs of equal values (the fit is constant on such runs)."""
    if values.size == 0:
        return values.copy()
    starts = np.flatnonzero(np.r_[True, values[1:] != values[:-1]])
    lengths = np.diff(np.r_[starts, values.size])
    fitted = isotonic_projection(values[starts], lengths)
    return np.repeat(fitted, lengths)


class RecalibratorBank:
    """M binary calibrators remapping baseline CDF values to calibrated ones.

    Each round follows the protocol ``begin_round`` -> any number of
    evaluations -> ``observe`` (or ``discard_round``). Forecasts are drawn once
    per round so the recalibrated G_t is a well-defined function of z.
    """

    def __init__(self, M: int = 20, N: int | None = None, variant: str = "randomized",
                 bound: OutcomeBound | None = None, keep_history: bool = False):
        if M < 1:
            raise DomainError("number of intervals M must be positive")
        if variant not in VARIANTS:
            raise DomainError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        self.M = int(M)
        self.grid = ProbGrid(int(N if N is not None else M))
        self.variant = variant
        self.bound = bound
        size = self.grid.N + 1
        self._plays = np.zeros((self.M, size), dtype=np.int64)
        self._successes = np.zeros((self.M, size), dtype=np.int64)
        self.subroutines = [CalibState(self.grid, self._plays[j], self._successes[j])
                            for j in range(self.M)]
        self.kde = BinFreqState(self.M) if variant == "kde" else None
        self.thresholds = np.arange(1, self.M + 1) / self.M
        self.rounds = 0
        self.saturated_quantiles = 0
        self.history = [] if keep_history else None
        self._cached: np.ndarray | None = None
        self._played: np.ndarray | None = None

    @property
    def round_open(self) -> bool:
        return self._cached is not None

    def _require_open(self):
        if self._cached is None:
            raise StateError("no round is open; call begin_round first")

    def begin_round(self, rng: RngHandle) -> np.ndarray:
        """Draw and cache one forecast per subroutine for this round."""
        if self._cached is not None:
            raise StateError("begin_round called twice without observe")
        N = self.grid.N
        if self.variant == "kde":
            cached = self.kde.forecasts()
            played = None
        else:
            i, w = bracket(self._plays, self._successes, N)
            u = rng.random(self.M)
            played = np.where(u < w, i, i + 1)
            if self.variant == "randomized":
                cached = played / N
            else:
                # The expected variant still updates its counts with a sampled level.
                cached = (w * i + (1.0 - w) * (i + 1)) / N
        self._cached = cached
        self._played = played
        return cached.copy()

    @property
    def cached(self) -> np.ndarray:
        self._require_open()
        return self._cached.copy()

    def set_round_forecasts(self, values) -> None:
        """Replace the open round's cached outputs (for fixed maps such as the identity)."""
        self._require_open()
        v = np.asarray(values, dtype=float)
        if v.shape != (self.M,) or np.any(v < 0) or np.any(v > 1):
            raise DomainError("need M forecasts in [0, 1]")
        self._cached = v.copy()

    def eval_level(self, p):
        """Recalibrated value for baseline CDF value(s) p."""
        self._require_open()
        j = quantize(p, self.M)
        return self._cached[np.asarray(j) - 1] if np.ndim(j) else float(self._cached[j - 1])

    def recal_eval(self, F: PredictiveCDF, z):
        """G_t(z): the cached output of the subroutine owning F(z)."""
        self._require_open()
        return self.eval_level(np.clip(F.evaluate(z), 0.0, 1.0))

    def raw_function(self, F: PredictiveCDF) -> StepCDF:
        """G_t over the whole real line as a (possibly non-monotone) step function."""
        self._require_open()
        c = self._cached
        if isinstance(F, GaussianCDF):
            knots = F.ppf(self.thresholds[:-1])
            if self.M == 1:
                return StepCDF(np.array([np.inf]), np.array([c[0]]), below=c[0], monotone=False)
            return StepCDF(knots, c[1:], below=float(c[0]), monotone=False)
        if isinstance(F, StepCDF):
            probs = c[quantize(np.clip(F.probs, 0, 1), self.M) - 1]
            return StepCDF(F.knots, probs, below=float(c[quantize(F.below, self.M) - 1]),
                           monotone=False)
        raise DomainError(f"cannot compose with CDF of kind {F.kind!r}")

    def observe_pit(self, u: float) -> np.ndarray:
        """Close the round given the PIT value u = F_t(y_t); returns the targets o_1..o_M."""
        self._require_open()
        if not 0.0 <= u <= 1.0:
            raise DomainError(f"PIT value outside [0, 1]: {u!r}")
        o = (u <= self.thresholds).astype(np.int64)
        assert np.all(np.diff(o) >= 0), "nested targets must be non-decreasing in j"
        if self.variant == "kde":
            self.kde.counts += 1
            self.kde.sums += o
        else:
            rows = np.arange(self.M)
            self._plays[rows, self._played] += 1
            self._successes[rows, self._played] += o
        if self.history is not None:
            self.history.append((self._cached.copy(), o))
        self.rounds += 1
        self._cached = None
        self._played = None
        return o

    def observe(self, F: PredictiveCDF, y: float) -> np.ndarray:
        self._require_open()
        if self.bound is not None:
            self.bound.check(y)
        return self.observe_pit(float(np.clip(F.evaluate(y), 0.0, 1.0)))

    def discard_round(self) -> None:
        """Close the open round without updating any subroutine."""
        self._require_open()
        self._cached = None
        self._played = None

    def raw_values(self, F: PredictiveCDF, zgrid) -> np.ndarray:
        z = np.asarray(zgrid, dtype=float)
        if z.size == 0:
            raise DomainError("empty zgrid")
        return np.atleast_1d(self.recal_eval(F, z)).astype(float)

    def export_cdf(self, F: PredictiveCDF, zgrid, return_raw: bool = False):
        """Monotone, clamped step CDF of G_t on `zgrid` (raw values optionally returned)."""
        z = np.asarray(zgrid, dtype=float)
        raw = self.raw_values(F, z)
        fitted = np.clip(_monotone_fit_runs(raw), 0.0, 1.0)
        cdf = StepCDF(z, fitted, below=0.0)
        return (cdf, raw) if return_raw else cdf

    def recal_quantile(self, F: PredictiveCDF, alpha: float, zgrid) -> float:
        """Smallest grid point whose exported CDF value reaches alpha."""
        if not 0.0 < alpha < 1.0:
            raise DomainError(f"quantile level must be in (0, 1), got {alpha!r}")
        cdf = self.export_cdf(F, zgrid)
        return quantile_from_values(cdf.knots, cdf.probs, alpha, self)


def quantile_from_values(z: np.ndarray, probs: np.ndarray, alpha: float, bank=None) -> float:
    hit = np.flatnonzero(probs >= alpha)
    if hit.size == 0:
        if bank is not None:
            bank.saturated_quantiles += 1
        log.debug("quantile %.3f saturated at the last grid point", alpha)
        return float(z[-1])
    return float(z[hit[0]])
