"""Evaluation quantities for calibrated forecasting runs.

Every metric is computed on the raw recalibrated values G_t, never on the
monotonized export, except expectations (which need a proper distribution).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .core import DomainError, OutcomeBound, PredictiveCDF, ProbGrid, StepCDF

PIT_LEVELS = (0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0)
TRACE_SCHEMA_VERSION = 1
BASE_COLUMNS = ("t", "y", "F_crps", "G_crps", "regret_running", "pit_u",
                "pit_score_running", "coverage_gap_running")


def trace_columns(n_probes: int = 9) -> list[str]:
    return list(BASE_COLUMNS) + [f"calib_error_probe_{k}" for k in range(1, n_probes + 1)]


def probe_grid(bound: OutcomeBound, size: int = 9) -> np.ndarray:
    """`size` equally spaced interior points of [-B/2, B/2]."""
    if size < 1:
        raise DomainError("probe grid needs at least one point")
    return bound.lo + bound.B * np.arange(1, size + 1) / (size + 1)


class CalibLedger:
    """Per probe level y and grid forecast p: how often p was forecast, and how often y_t <= y then."""

    def __init__(self, probes, grid: ProbGrid):
        self.probes = np.asarray(probes, dtype=float)
        self.grid = grid
        shape = (self.probes.size, grid.N + 1)
        self.plays = np.zeros(shape, dtype=np.int64)
        self.hits = np.zeros(shape, dtype=np.int64)
        self.T = 0

    def update(self, forecasts, y: float) -> None:
        """Record one round: forecasts G_t(probe_k) for every probe, realized outcome y."""
        idx = self.grid.nearest_index(forecasts)
        rows = np.arange(self.probes.size)
        self.plays[rows, idx] += 1
        self.hits[rows, idx] += (y <= self.probes).astype(np.int64)
        self.T += 1

    def probe_index(self, y: float) -> int:
        k = np.flatnonzero(np.isclose(self.probes, y, rtol=0, atol=1e-12))
        if k.size == 0:
            raise DomainError(f"{y!r} is not a probe level of this ledger")
        return int(k[0])

    def calib_errors(self) -> np.ndarray:
        if self.T == 0:
            return np.zeros(self.probes.size)
        # sum_i |rho_i - i/N| n_i / T == sum_i |N s_i - i n_i| / (N T): one rounding only.
        N = self.grid.N
        num = np.abs(N * self.hits - np.arange(N + 1) * self.plays).sum(axis=1)
        return num / (N * self.T)


def rho(ledger: CalibLedger, y: float, p: float) -> float:
    """Empirical frequency of y_t <= y among rounds that forecast p at y (0 if never)."""
    k = ledger.probe_index(y)
    i = ledger.grid.index_of(p)
    n = ledger.plays[k, i]
    return 0.0 if n == 0 else float(ledger.hits[k, i]) / float(n)


def calib_error(ledger: CalibLedger, y: float) -> float:
    return float(ledger.calib_errors()[ledger.probe_index(y)])


def calib_error_from_log(forecasts, outcomes_below, grid: ProbGrid) -> float:
    """Direct recount of the calibration error from a per-round log at one probe."""
    forecasts = list(forecasts)
    T = len(forecasts)
    if T == 0:
        return 0.0
    N = grid.N
    num = 0
    for i in range(N + 1):
        rounds = [t for t in range(T) if int(grid.nearest_index(forecasts[t])) == i]
        hits = sum(int(outcomes_below[t]) for t in rounds)
        num += abs(N * hits - i * len(rounds))
    return num / (N * T)


def _central_interval(F: PredictiveCDF, tail: float) -> tuple[float, float]:
    if hasattr(F, "ppf"):
        lo, hi = F.ppf([tail, 1.0 - tail])
        return float(lo), float(hi)
    if isinstance(F, StepCDF):
        lo = F.knots[np.flatnonzero(F.probs >= tail)[0]] if np.any(F.probs >= tail) else F.knots[-1]
        hi = F.knots[np.flatnonzero(F.probs >= 1 - tail)[0]] if np.any(F.probs >= 1 - tail) else F.knots[-1]
        return float(lo), float(hi)
    raise DomainError(f"cannot take quantiles of CDF kind {F.kind!r}")


def _segment_integral(F: StepCDF, y: float, lo: float, hi: float) -> float:
    pts = np.concatenate([[lo, hi, y], F.knots[(F.knots > lo) & (F.knots < hi)]])
    pts = np.unique(pts[(pts >= lo) & (pts <= hi)])
    a, b = pts[:-1], pts[1:]
    vals = np.asarray(F.evaluate(a), dtype=float)
    ind = (y <= a).astype(float)
    return float(np.sum((b - a) * (vals - ind) ** 2))


def crps(y: float, F: PredictiveCDF, zgrid) -> float:
    """CRPS restricted to the span of `zgrid`.

    Step functions are integrated exactly. Smooth CDFs use Simpson's rule on
    `zgrid` with y inserted, so the indicator jump falls on a node; the trapezoid
    rule is ~1e-3 off at K = 200 when y sits at the mode.
    """
    z = np.asarray(zgrid, dtype=float)
    lo, hi = float(z[0]), float(z[-1])
    if not lo <= y <= hi:
        raise DomainError(f"outcome {y!r} outside the integration domain [{lo}, {hi}]")
    if isinstance(F, StepCDF):
        return _segment_integral(F, y, lo, hi)
    left = np.append(z[z < y], y)
    right = np.insert(z[z > y], 0, y)
    fl = np.asarray(F.evaluate(left), dtype=float) ** 2
    fr = (np.asarray(F.evaluate(right), dtype=float) - 1.0) ** 2
    return float(_simpson(fl, left) + _simpson(fr, right))


def _simpson(f: np.ndarray, x: np.ndarray) -> float:
    return float(integrate.simpson(f, x=x)) if x.size > 2 else float(np.trapezoid(f, x))


def pit_bins(u, levels=PIT_LEVELS) -> np.ndarray:
    """Counts of u per bin (q_{j-1}, q_j]; the first bin also takes u = q_0."""
    q = np.asarray(levels, dtype=float)
    u = np.asarray(u, dtype=float).reshape(-1)
    j = np.searchsorted(q, u, side="left")
    j = np.clip(j, 1, q.size - 1)
    return np.bincount(j - 1, minlength=q.size - 1)


def pit_score_from_counts(counts, levels=PIT_LEVELS) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    widths = np.diff(np.asarray(levels, dtype=float))
    return float(np.sum((widths - counts / n) ** 2))


def pit_calib_score(u, levels=PIT_LEVELS) -> float:
    """Sum over PIT bins of (bin width - observed fraction)^2; 0 for empty input."""
    if np.size(u) == 0:
        return 0.0
    return pit_score_from_counts(pit_bins(u, levels), levels)


def coverage_sides(g_lo, g_hi, ys, y1: float, y2: float) -> tuple[float, float]:
    """Mean predicted mass G(y2) - G(y1) and empirical frequency of y1 <= y_t <= y2."""
    ys = np.asarray(ys, dtype=float)
    if ys.size == 0:
        return 0.0, 0.0
    mass = float(np.mean(np.asarray(g_hi, dtype=float) - np.asarray(g_lo, dtype=float)))
    freq = float(np.mean((ys >= y1) & (ys <= y2)))
    return mass, freq


def markov_exceedance(pairs, r: float) -> float:
    """Fraction of rounds with realized value >= r times its estimate."""
    if not r > 1:
        raise DomainError(f"Markov ratio must exceed 1, got {r!r}")
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    if arr.shape[0] == 0:
        return 0.0
    return float(np.mean(arr[:, 1] >= r * arr[:, 0]))


def expected_value(cdf_values, zgrid, fn=np.abs) -> float:
    """E[fn(Y)] for the distribution with CDF values on zgrid, tails lumped at the ends."""
    z = np.asarray(zgrid, dtype=float)
    c = np.clip(np.maximum.accumulate(np.asarray(cdf_values, dtype=float)), 0.0, 1.0)
    mass = np.diff(np.concatenate([[0.0], c]))
    mass[-1] += 1.0 - c[-1]
    return float(np.sum(mass * fn(z)))


@dataclass
class MetricTrace:
    """Append-only per-round record of a streaming run."""

    probes: np.ndarray
    interval: tuple[float, float]
    levels: tuple = PIT_LEVELS
    rows: list = field(default_factory=list)
    ys: list = field(default_factory=list)
    F_crps: list = field(default_factory=list)
    G_crps: list = field(default_factory=list)
    pit_F: list = field(default_factory=list)
    pit_G: list = field(default_factory=list)
    G_lo: list = field(default_factory=list)
    G_hi: list = field(default_factory=list)
    Gq_lo: list = field(default_factory=list)
    Gq_hi: list = field(default_factory=list)
    inside_q: list = field(default_factory=list)
    vhat_F: list = field(default_factory=list)
    vhat_G: list = field(default_factory=list)
    raw_probe_values: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return len(self.ys)

    @property
    def columns(self) -> list[str]:
        return trace_columns(len(self.probes))

    def as_matrix(self) -> np.ndarray:
        return np.asarray(self.rows, dtype=float)


def crps_regret(trace: MetricTrace) -> float:
    """Average CRPS of G minus average CRPS of F."""
    if trace.T == 0:
        return 0.0
    return float(np.mean(trace.G_crps) - np.mean(trace.F_crps))


def coverage_check(trace: MetricTrace, y1: float | None = None, y2: float | None = None):
    """Both sides of the interval-coverage limit for the trace's fixed interval [y1, y2]."""
    lo, hi = trace.interval
    if y1 is not None and not math.isclose(y1, lo) or y2 is not None and not math.isclose(y2, hi):
        raise DomainError(f"trace tracks the interval [{lo}, {hi}], not [{y1}, {y2}]")
    return coverage_sides(trace.G_lo, trace.G_hi, trace.ys, lo, hi)


def central_coverage(trace: MetricTrace) -> tuple[float, float]:
    """Coverage sides for the per-round baseline central interval [F^-1(a), F^-1(1-a)]."""
    if trace.T == 0:
        return 0.0, 0.0
    mass = float(np.mean(np.asarray(trace.Gq_hi) - np.asarray(trace.Gq_lo)))
    return mass, float(np.mean(trace.inside_q))


class StreamMetrics:
    """Incremental metric state producing one trace row per round."""

    def __init__(self, bound: OutcomeBound, grid: ProbGrid, n_probes: int = 9, K: int = 200,
                 interval: tuple[float, float] | None = None, levels=PIT_LEVELS,
                 central: float = 0.8):
        self.bound = bound
        self.zgrid = bound.zgrid(K)
        self.probes = probe_grid(bound, n_probes)
        self.ledger = CalibLedger(self.probes, grid)
        self.levels = tuple(levels)
        self.interval = interval if interval is not None else (bound.lo / 2, bound.hi / 2)
        self.tail = (1.0 - central) / 2.0
        self.pit_counts = np.zeros(len(self.levels) - 1, dtype=np.int64)
        self.trace = MetricTrace(self.probes, self.interval, self.levels)
        self._sum_F = 0.0
        self._sum_G = 0.0
        self._mass_q = 0.0
        self._inside_q = 0

    def record(self, y: float, F: PredictiveCDF, G: PredictiveCDF, G_export_values=None) -> list:
        tr = self.trace
        t = tr.T + 1
        f_crps = crps(y, F, self.zgrid)
        g_crps = f_crps if G is F else crps(y, G, self.zgrid)
        pit_u = float(G.evaluate(y))
        probe_vals = np.asarray(G.evaluate(self.probes), dtype=float)
        self.ledger.update(probe_vals, y)
        self.pit_counts += pit_bins([pit_u], self.levels)
        y1, y2 = self.interval
        g_lo, g_hi = float(G.evaluate(y1)), float(G.evaluate(y2))
        self._sum_F += f_crps
        self._sum_G += g_crps
        q_lo, q_hi = _central_interval(F, self.tail)
        gq_lo, gq_hi = float(G.evaluate(q_lo)), float(G.evaluate(q_hi))
        inside_q = int(q_lo <= y <= q_hi)
        self._mass_q += gq_hi - gq_lo
        self._inside_q += inside_q
        f_vals = np.asarray(F.evaluate(self.zgrid), dtype=float)
        g_vals = f_vals if G_export_values is None else G_export_values

        tr.ys.append(y)
        tr.F_crps.append(f_crps)
        tr.G_crps.append(g_crps)
        tr.pit_F.append(float(F.evaluate(y)))
        tr.pit_G.append(pit_u)
        tr.G_lo.append(g_lo)
        tr.G_hi.append(g_hi)
        tr.Gq_lo.append(gq_lo)
        tr.Gq_hi.append(gq_hi)
        tr.inside_q.append(inside_q)
        tr.vhat_F.append(expected_value(f_vals, self.zgrid))
        tr.vhat_G.append(expected_value(g_vals, self.zgrid))
        tr.raw_probe_values.append(probe_vals)
        row = [t, y, f_crps, g_crps, (self._sum_G - self._sum_F) / t, pit_u,
               pit_score_from_counts(self.pit_counts, self.levels),
               abs(self._mass_q - self._inside_q) / t, *self.ledger.calib_errors()]
        tr.rows.append(row)
        return row

    def summary(self) -> dict:
        tr = self.trace
        mass, freq = coverage_check(tr)
        cmass, cfreq = central_coverage(tr)
        return {
            "rounds": tr.T,
            "pit_score_F": pit_calib_score(tr.pit_F, self.levels),
            "pit_score_G": pit_calib_score(tr.pit_G, self.levels),
            "crps_mean_F": float(np.mean(tr.F_crps)) if tr.T else 0.0,
            "crps_mean_G": float(np.mean(tr.G_crps)) if tr.T else 0.0,
            "crps_regret": crps_regret(tr),
            "coverage_interval": list(self.interval),
            "coverage_mass_fixed": mass,
            "coverage_freq_fixed": freq,
            "coverage_gap_fixed": abs(mass - freq),
            "central_level": 1.0 - 2.0 * self.tail,
            "central_mass": cmass,
            "central_freq": cfreq,
            "coverage_gap": abs(cmass - cfreq),
            "calib_error_max": float(np.max(self.ledger.calib_errors())) if tr.T else 0.0,
            "calib_error_probes": [float(v) for v in self.ledger.calib_errors()],
        }
