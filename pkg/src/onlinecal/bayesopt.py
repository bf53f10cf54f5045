"""Bayesian optimization with plain or recalibrated lower-confidence-bound acquisition."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import DomainError, GaussianCDF, NumericalError, RngHandle, StateError
from .forecasters import GPHyper, GPState, gp_fit, gp_predict, gp_select_hypers
from .recalibrator import RecalibratorBank

log = logging.getLogger(__name__)


def _ackley(x):
    d = x.shape[-1]
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.sum(x**2, -1) / d))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * x), -1) / d)
    return a + b + 20.0 + math.e


def _sixhump(x):
    u, v = x[..., 0], x[..., 1]
    return (4.0 - 2.1 * u**2 + u**4 / 3.0) * u**2 + u * v + (-4.0 + 4.0 * v**2) * v**2


def _beale(x):
    u, v = x[..., 0], x[..., 1]
    return ((1.5 - u + u * v) ** 2 + (2.25 - u + u * v**2) ** 2
            + (2.625 - u + u * v**3) ** 2)


def _mccormick(x):
    u, v = x[..., 0], x[..., 1]
    return np.sin(u + v) + (u - v) ** 2 - 1.5 * u + 2.5 * v + 1.0


def _alpine(x):
    return np.sum(np.abs(x * np.sin(x) + 0.1 * x), -1)


@dataclass(frozen=True)
class BenchmarkFn:
    name: str
    lo: np.ndarray
    hi: np.ndarray
    formula: Callable = field(repr=False)

    @property
    def dim(self) -> int:
        return self.lo.size

    def __call__(self, x) -> float:
        return benchmark_eval(self, x)


def _box(lo, hi, d=1):
    return np.array(lo * d, dtype=float), np.array(hi * d, dtype=float)


BENCHMARKS = {
    "ackley2": BenchmarkFn("ackley2", *_box([-5.0], [5.0], 2), _ackley),
    "ackley10": BenchmarkFn("ackley10", *_box([-5.0], [5.0], 10), _ackley),
    "sixhumpcamel": BenchmarkFn("sixhumpcamel", *_box([-3.0, -2.0], [3.0, 2.0]), _sixhump),
    "beale": BenchmarkFn("beale", *_box([-4.5, -4.5], [4.5, 4.5]), _beale),
    "mccormick": BenchmarkFn("mccormick", *_box([-1.5, -3.0], [4.0, 4.0]), _mccormick),
    "alpine10": BenchmarkFn("alpine10", *_box([-10.0], [10.0], 10), _alpine),
}


def get_benchmark(name: str) -> BenchmarkFn:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise DomainError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


def benchmark_eval(fn: BenchmarkFn | str, x) -> float:
    fn = get_benchmark(fn) if isinstance(fn, str) else fn
    x = np.asarray(x, dtype=float)
    if x.shape != fn.lo.shape:
        raise DomainError(f"{fn.name} expects a point of dimension {fn.dim}")
    if np.any(x < fn.lo) or np.any(x > fn.hi) or not np.all(np.isfinite(x)):
        raise DomainError(f"point {x.tolist()} lies outside the {fn.name} search box")
    return float(fn.formula(x))


@dataclass
class BOState:
    fn: BenchmarkFn
    X: np.ndarray
    y: np.ndarray
    gp: GPState | None = None
    bank: RecalibratorBank | None = None
    y_shift: float = 0.0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float)).reshape(-1, self.fn.dim)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)

    @property
    def lo(self) -> np.ndarray:
        return self.fn.lo

    @property
    def hi(self) -> np.ndarray:
        return self.fn.hi

    def to_unit(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lo) / (self.hi - self.lo)

    def append(self, x, y) -> None:
        self.X = np.vstack([self.X, np.asarray(x, dtype=float)[None, :]])
        self.y = np.append(self.y, float(y))

    @property
    def incumbent(self) -> tuple[np.ndarray, float]:
        if self.y.size == 0:
            raise StateError("no observations yet")
        k = int(np.argmin(self.y))
        return self.X[k], float(self.y[k])

    def refit(self, hyper: GPHyper | None = None) -> GPHyper:
        """Fit the GP on unit-box inputs and centered targets."""
        Xu = self.to_unit(self.X)
        self.y_shift = float(np.mean(self.y))
        yc = self.y - self.y_shift
        hyper = hyper if hyper is not None else gp_select_hypers(Xu, yc)
        self.gp = gp_fit(Xu, yc, hyper)
        return hyper

    def moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in the original target units."""
        if self.gp is None:
            raise StateError("GP has not been fit")
        mean, var = gp_predict(self.gp, self.to_unit(np.atleast_2d(X)))
        return mean + self.y_shift, np.sqrt(var)


# Standardized evaluation grid for recalibrated quantiles of Gaussian predictives.
STD_ZGRID = np.linspace(-6.0, 6.0, 481)


def lcb(state: BOState, X, kappa: float = 2.0) -> np.ndarray:
    if kappa < 0:
        raise DomainError("kappa must be non-negative")
    mean, sd = state.moments(X)
    return mean - kappa * sd


def calibrated_lcb(state: BOState, bank: RecalibratorBank, X, alpha: float = 0.05,
                   zgrid=None) -> np.ndarray:
    """Alpha-quantile of the recalibrated predictive at each point of X.

    The bank must have an open round. When `zgrid` is omitted a standardized grid
    of +/- 6 standard deviations is used, so for Gaussian predictives the quantile
    is mu + sigma * q with q shared across points.
    """
    mean, sd = state.moments(X)
    if zgrid is None:
        q = bank.recal_quantile(GaussianCDF(0.0, 1.0), alpha, STD_ZGRID)
        return mean + sd * q
    z = np.asarray(zgrid, dtype=float)
    return np.array([bank.recal_quantile(GaussianCDF(m, s), alpha, z)
                     for m, s in zip(mean, sd)])


def acquire(state: BOState, acquisition: Callable[[np.ndarray], np.ndarray],
            rng: RngHandle, budget: int = 2048, n_local: int = 32,
            local_scale: float = 0.01) -> np.ndarray:
    """Minimize the acquisition over random box samples plus jitters of the incumbent."""
    if budget < 1:
        raise DomainError("candidate budget must be positive")
    lo, hi = state.lo, state.hi
    cands = [rng.uniform(lo, hi, size=(budget, lo.size))]
    if n_local > 0 and state.y.size:
        x_best, _ = state.incumbent
        jit = x_best + local_scale * (hi - lo) * rng.normal(size=(n_local, lo.size))
        cands.append(np.clip(jit, lo, hi))
    C = np.vstack(cands)
    values = np.asarray(acquisition(C), dtype=float)
    # np.argmin returns the first minimizer, which is the deterministic tie rule.
    return C[int(np.argmin(values))].copy()


def loo_pit_values(X, y, hyper: GPHyper) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    n = y.size
    pits = np.empty(n)
    for i in range(n):
        keep = np.arange(n) != i
        gp = gp_fit(X[keep], y[keep], hyper)
        mean, var = gp_predict(gp, X[i:i + 1])
        pits[i] = GaussianCDF(float(mean[0]), math.sqrt(float(var[0]))).evaluate(y[i])
    return np.clip(pits, 0.0, 1.0)


def calibrate_loo(X, y, hyper: GPHyper, rng: RngHandle, M: int = 10, N: int = 10,
                  variant: str = "randomized") -> RecalibratorBank:
    """Train a fresh bank on leave-one-out PIT values of the GP."""
    if np.size(y) < 2:
        raise StateError("leave-one-out recalibration needs at least two points")
    bank = RecalibratorBank(M=M, N=N, variant=variant)
    pits = loo_pit_values(X, y, hyper)
    for u in pits:
        bank.begin_round(rng)
        bank.observe_pit(float(u))
    bank.loo_pits = pits
    return bank


@dataclass
class BOResult:
    benchmark: str
    seed: int
    calibrated: bool
    best: list[float]
    X: np.ndarray
    y: np.ndarray
    aborted: bool = False
    kappas: list[float] = field(default_factory=list)

    @property
    def final_best(self) -> float:
        return self.best[-1] if self.best else float(np.min(self.y))


def initial_design(fn: BenchmarkFn, seed: int, n_init: int = 3) -> np.ndarray:
    rng = RngHandle(seed, f"bo/init/{fn.name}")
    return rng.uniform(fn.lo, fn.hi, size=(n_init, fn.dim))


def bo_run(fn: BenchmarkFn | str, T: int, seed: int, calibrated: bool, *,
           kappa: float = 2.0, alpha: float = 0.05, budget: int = 2048,
           n_local: int = 32, n_init: int = 3, M: int = 10, N: int = 10,
           variant: str = "randomized") -> BOResult:
    """Run T acquisition steps; `best` holds the incumbent value after each step."""
    fn = get_benchmark(fn) if isinstance(fn, str) else fn
    if T < 1:
        raise DomainError("need at least one iteration")
    X0 = initial_design(fn, seed, n_init)
    state = BOState(fn, X0, [fn(x) for x in X0])
    # Candidates come from the same stream in paired runs; only the bank differs.
    acq_rng = RngHandle(seed, f"bo/acquire/{fn.name}")
    bank_rng = RngHandle(seed, f"bo/recal/{fn.name}")
    result = BOResult(fn.name, seed, calibrated, [], state.X, state.y)
    for it in range(T):
        try:
            hyper = state.refit()
            if calibrated:
                Xu, yc = state.to_unit(state.X), state.y - state.y_shift
                bank = calibrate_loo(Xu, yc, hyper, bank_rng, M=M, N=N, variant=variant)
                state.bank = bank
                bank.begin_round(bank_rng)
                q = bank.recal_quantile(GaussianCDF(0.0, 1.0), alpha, STD_ZGRID)
                bank.discard_round()
                result.kappas.append(-q)

                def acq(C, q=q):
                    mean, sd = state.moments(C)
                    return mean + q * sd
            else:
                def acq(C):
                    return lcb(state, C, kappa)
            x_next = acquire(state, acq, acq_rng, budget, n_local)
        except NumericalError as exc:
            log.warning("%s seed %d: aborting at iteration %d: %s", fn.name, seed, it + 1, exc)
            result.aborted = True
            break
        state.append(x_next, fn(x_next))
        result.best.append(state.incumbent[1])
    result.X, result.y = state.X, state.y
    return result
