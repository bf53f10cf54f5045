"""Stream ingestion, synthetic generators and the batched replay protocol."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    DataError,
    DomainError,
    NumericalError,
    OnlineCalError,
    OutcomeBound,
    ProbGrid,
    RngHandle,
    StateError,
    derive_rng,
)
from .forecasters import BayesLinReg
from .metrics import MetricTrace, StreamMetrics
from .recalibrator import RecalibratorBank

log = logging.getLogger(__name__)

SYNTH_KINDS = ("iid_gaussian", "variance_misspec", "mean_shift", "greedy_adversary")
METHODS = {"raw": None, "kde": "kde", "online-nonrandom": "expected", "online": "randomized"}


@dataclass(frozen=True)
class StreamRecord:
    x: np.ndarray
    y: float
    t: int


@dataclass(frozen=True)
class BatchPlan:
    n: int
    T: int

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("batch size must be at least 1")

    @property
    def rounds(self) -> int:
        return math.ceil(self.T / self.n)

    def slices(self):
        for b in range(self.rounds):
            yield slice(b * self.n, min((b + 1) * self.n, self.T))


def _parse_float(cell: str, row: int, column: str, path: str) -> float:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric value {cell!r} in column {column!r}", row=row, path=path) from None
    if not math.isfinite(value):
        raise DataError(f"non-finite value {cell!r} in column {column!r}", row=row, path=path)
    return value


def load_csv(path, target: str, features: Sequence[str] | None = None) -> list[StreamRecord]:
    """Read records in file order. Rows are numbered from 1 after the header.

    When `features` is omitted every column other than the target is used.
    """
    path = str(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open file: {exc.strerror}", path=path) from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError("empty file", path=path)
        header = [h.strip() for h in header]
        if target not in header:
            raise DataError(f"missing target column {target!r}", path=path)
        if features is None:
            features = [h for h in header if h != target]
        missing = [f for f in features if f not in header]
        if missing:
            raise DataError(f"missing feature columns {missing}", path=path)
        ti = header.index(target)
        fi = [header.index(f) for f in features]
        records = []
        for row, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(f"expected {len(header)} cells, found {len(cells)}", row=row, path=path)
            x = np.array([_parse_float(cells[i], row, header[i], path) for i in fi])
            y = _parse_float(cells[ti], row, target, path)
            records.append(StreamRecord(x, y, len(records)))
    if not records:
        raise DataError("no data rows", path=path)
    return records


def write_csv(path, records: Sequence[StreamRecord], target: str = "y",
              features: Sequence[str] | None = None) -> None:
    d = records[0].x.size if records else 0
    features = list(features) if features is not None else [f"x{i}" for i in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*features, target])
        for r in records:
            w.writerow([repr(float(v)) for v in r.x] + [repr(float(r.y))])


class Preprocessor:
    """Warmup-window transform: standardized features, affinely rescaled and bounded targets.

    The warmup range of y is mapped onto the central `fill` fraction of
    [-B/2, B/2]; later outcomes beyond +-(B/2 - B/1000) are clipped and counted.
    """

    def __init__(self, bound: OutcomeBound, warmup: int = 50, fill: float = 1.0,
                 rescale: bool = True):
        if warmup < 1:
            raise DomainError("warmup window must contain at least one record")
        if not 0 < fill <= 1:
            raise DomainError("fill fraction must be in (0, 1]")
        self.bound = bound
        self.warmup = warmup
        self.fill = fill
        self.rescale = rescale
        self.delta = bound.B / 1000.0
        self.clipped = 0
        self.fitted = False

    def fit(self, records: Sequence[StreamRecord]) -> "Preprocessor":
        win = records[: self.warmup]
        if not win:
            raise DataError("no records available for the warmup window")
        X = np.array([r.x for r in win], dtype=float).reshape(len(win), -1)
        y = np.array([r.y for r in win], dtype=float)
        self.x_mean = X.mean(axis=0)
        sd = X.std(axis=0)
        self.x_scale = np.where(sd > 0, sd, 1.0)
        if self.rescale:
            lo, hi = float(y.min()), float(y.max())
            self.y_center = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            self.y_scale = (self.fill * (self.bound.B / 2 - self.delta)) / half if half > 0 else 1.0
        else:
            self.y_center, self.y_scale = 0.0, 1.0
        self.fitted = True
        self.noise_var = self._warmup_noise_var(X, y)
        return self

    def _warmup_noise_var(self, X: np.ndarray, y: np.ndarray) -> float:
        Z = np.hstack([np.ones((X.shape[0], 1)), self.transform_x(X)])
        yt = self.transform_y(y, count=False)
        coef, *_ = np.linalg.lstsq(Z, yt, rcond=None)
        resid = yt - Z @ coef
        dof = yt.size - Z.shape[1]
        var = float(resid @ resid / dof) if dof > 0 else float(np.var(yt))
        floor = 1e-6 * (self.bound.B / 4) ** 2
        return max(var, floor)

    def transform_x(self, X):
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_scale

    def transform_y(self, y, count: bool = True):
        yt = (np.asarray(y, dtype=float) - self.y_center) * self.y_scale
        lim = self.bound.B / 2 - self.delta
        out = np.clip(yt, -lim, lim)
        if count:
            self.clipped += int(np.count_nonzero(out != yt))
        return out

    def inverse_y(self, yt):
        return np.asarray(yt, dtype=float) / self.y_scale + self.y_center

    def apply(self, records: Sequence[StreamRecord]) -> list[StreamRecord]:
        if not self.fitted:
            raise StateError("preprocessor used before fit")
        return [StreamRecord(self.transform_x(r.x), float(self.transform_y(r.y)), r.t) for r in records]

    def describe(self) -> dict:
        return {"warmup": self.warmup, "fill": self.fill, "rescale": self.rescale,
                "y_center": self.y_center, "y_scale": self.y_scale,
                "x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
                "noise_var": self.noise_var, "clipped": self.clipped}


SYNTH_DEFAULTS = {"d": 3, "noise": 0.5, "c": 1.5, "offset": 0.05,
                  "warmup": 50, "batch_size": 10, "B": 10.0}


def synth_stream(kind: str, params: dict | None = None, seed: int = 0, T: int = 1000) -> list[StreamRecord]:
    """Deterministic synthetic stream of T records.

    iid_gaussian      y = w.x + noise * eps
    variance_misspec  noise scaled by c after the warmup window, so a baseline
                      tuned on warmup misjudges the spread by that factor
    mean_shift        w flips sign at T/2
    greedy_adversary  after warmup, y sits just above or below (alternately)
                      the median of the baseline the pipeline will run
    """
    if kind not in SYNTH_KINDS:
        raise DomainError(f"unknown synthetic stream kind {kind!r}; expected one of {SYNTH_KINDS}")
    p = {**SYNTH_DEFAULTS, **(params or {})}
    unknown = set(p) - set(SYNTH_DEFAULTS)
    if unknown:
        raise DomainError(f"unknown synthetic stream parameters {sorted(unknown)}")
    if T < 1:
        raise DomainError("stream length must be positive")
    d, warmup = int(p["d"]), int(p["warmup"])
    rng = derive_rng(seed, f"synth/{kind}")
    w = rng.normal(size=d)
    X = rng.normal(size=(T, d))
    eps = rng.normal(size=T)
    noise = np.full(T, float(p["noise"]))
    signal = X @ w
    if kind == "variance_misspec":
        noise[warmup:] *= float(p["c"])
    elif kind == "mean_shift":
        signal[T // 2:] *= -1.0
    y = signal + noise * eps
    if kind == "greedy_adversary":
        y = _greedy_outcomes(X, y, p, warmup)
    return [StreamRecord(X[t].copy(), float(y[t]), t) for t in range(T)]


def _greedy_outcomes(X: np.ndarray, y: np.ndarray, p: dict, warmup: int) -> np.ndarray:
    T = X.shape[0]
    y = y.copy()
    base = [StreamRecord(X[t], float(y[t]), t) for t in range(min(warmup, T))]
    prep = Preprocessor(OutcomeBound(float(p["B"])), warmup=warmup).fit(base)
    model = BayesLinReg(X.shape[1], noise_var=prep.noise_var)
    Xp = prep.transform_x(X)
    for sl in BatchPlan(int(p["batch_size"]), T).slices():
        for t in range(sl.start, sl.stop):
            if t < warmup:
                continue
            mu, var = model.predict_moments(Xp[t])
            sign = 1.0 if t % 2 == 0 else -1.0
            y[t] = float(prep.inverse_y(mu[0] + sign * float(p["offset"]) * math.sqrt(var[0])))
        model.update(Xp[sl], prep.transform_y(y[sl], count=False))
    return y


def _with_round(exc: OnlineCalError, t: int) -> OnlineCalError:
    if isinstance(exc, DataError):
        return DataError(str(exc), row=t)
    return type(exc)(f"round {t}: {exc}")


def run_stream(records: Sequence[StreamRecord], plan: BatchPlan, forecaster: BayesLinReg,
               bank: RecalibratorBank | None, metrics: StreamMetrics, rng: RngHandle) -> MetricTrace:
    """Replay `records` in batches: the model is frozen within a batch and refit after it,
    while the recalibrator is updated after every point. ``bank=None`` scores the raw baseline.
    """
    for sl in plan.slices():
        batch = records[sl]
        for rec in batch:
            try:
                F = forecaster.predict(rec.x)
                if bank is None:
                    metrics.record(rec.y, F, F)
                else:
                    bank.begin_round(rng)
                    G = bank.raw_function(F)
                    export = bank.export_cdf(F, metrics.zgrid)
                    metrics.record(rec.y, F, G, export.probs)
                    bank.observe(F, rec.y)
            except OnlineCalError as exc:
                raise _with_round(exc, rec.t) from exc
        try:
            forecaster.update(np.array([r.x for r in batch]), np.array([r.y for r in batch]))
        except OnlineCalError as exc:
            raise _with_round(exc, batch[-1].t) from exc
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"round {batch[-1].t}: posterior update failed: {exc}") from exc
    return metrics.trace


@dataclass
class StreamRun:
    trace: MetricTrace
    metrics: StreamMetrics
    preprocessor: Preprocessor
    bank: RecalibratorBank | None

    def summary(self) -> dict:
        out = self.metrics.summary()
        out["clipped_outcomes"] = self.preprocessor.clipped
        return out


def run_experiment(records: Sequence[StreamRecord], method: str = "online", N: int = 20,
                   M: int | None = None, batch_size: int = 10, B: float = 10.0, seed: int = 0,
                   warmup: int = 50, n_probes: int = 9, K: int = 200, tau2: float = 1.0,
                   rescale: bool = True) -> StreamRun:
    """Preprocess raw records and run one method over the whole stream."""
    if method not in METHODS:
        raise DomainError(f"unknown method {method!r}; expected one of {sorted(METHODS)}")
    if not records:
        raise DataError("empty stream")
    bound = OutcomeBound(B)
    prep = Preprocessor(bound, warmup=warmup, rescale=rescale).fit(records)
    processed = prep.apply(records)
    warm_y = np.array([r.y for r in processed[:warmup]])
    interval = tuple(float(v) for v in np.quantile(warm_y, [0.1, 0.9]))
    M = N if M is None else M
    variant = METHODS[method]
    bank = None if variant is None else RecalibratorBank(M=M, N=N, variant=variant, bound=bound)
    metrics = StreamMetrics(bound, ProbGrid(N), n_probes=n_probes, K=K, interval=interval)
    model = BayesLinReg(processed[0].x.size, tau2=tau2, noise_var=prep.noise_var)
    rng = RngHandle(seed, f"recalibrator/{method}")
    trace = run_stream(processed, BatchPlan(batch_size, len(processed)), model, bank, metrics, rng)
    return StreamRun(trace, metrics, prep, bank)
