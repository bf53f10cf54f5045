"""Shared domain types: probability grids, predictive CDFs, outcome bounds, seeded RNG."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special


class OnlineCalError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(OnlineCalError, ValueError):
    """An argument lies outside the domain of an operation."""


class StateError(OnlineCalError, RuntimeError):
    """An operation was called out of protocol order."""


class NumericalError(OnlineCalError, ArithmeticError):
    """A numerical routine failed (e.g. a non-PD gram matrix)."""


class DataError(OnlineCalError, ValueError):
    """Input data could not be ingested."""

    def __init__(self, message: str, row: int | None = None, path: str | None = None):
        self.row = row
        self.path = path
        prefix = ""
        if path is not None:
            prefix += f"{path}: "
        if row is not None:
            prefix += f"row {row}: "
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ProbGrid:
    """The grid {0, 1/N, ..., 1} of forecasts a binary calibrator may emit."""

    N: int

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or self.N < 1:
            raise DomainError(f"grid resolution must be a positive integer, got {self.N!r}")

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.N + 1) / self.N

    def index_of(self, p: float, atol: float = 1e-9) -> int:
        """Grid index i with i/N == p; raises DomainError when p is off-grid."""
        x = float(p) * self.N
        i = int(round(x))
        if not 0 <= i <= self.N or abs(x - i) > atol * self.N:
            raise DomainError(f"{p!r} is not a level of the N={self.N} grid")
        return i

    def nearest_index(self, p):
        """Round probabilities to the nearest grid index (used for continuous forecasts)."""
        return np.clip(np.rint(np.asarray(p, dtype=float) * self.N), 0, self.N).astype(np.int64)


@dataclass(frozen=True)
class OutcomeBound:
    """Outcomes live strictly inside (-B/2, B/2)."""

    B: float

    def __post_init__(self):
        if not (self.B > 0 and math.isfinite(self.B)):
            raise DomainError(f"outcome bound B must be positive, got {self.B!r}")

    @property
    def lo(self) -> float:
        return -self.B / 2

    @property
    def hi(self) -> float:
        return self.B / 2

    def contains(self, y: float) -> bool:
        return abs(y) < self.B / 2

    def check(self, y: float) -> float:
        if not (math.isfinite(y) and self.contains(y)):
            raise DomainError(f"outcome {y!r} violates |y| < B/2 = {self.B / 2}")
        return y

    def zgrid(self, K: int = 200) -> np.ndarray:
        """K uniform points spanning [-B/2, B/2]."""
        if K < 2:
            raise DomainError("zgrid needs at least two points")
        return np.linspace(self.lo, self.hi, K)


def quantize(p, M: int):
    """Index j in {1..M} of the interval [(j-1)/M, j/M) containing p; p = 1 maps to M.

    Accepts scalars or arrays.
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"probability outside [0, 1]: {p!r}")
    if M < 1:
        raise DomainError("number of intervals must be positive")
    j = np.minimum(np.floor(arr * M).astype(np.int64) + 1, M)
    if j.ndim == 0:
        return int(j)
    return j


def gaussian_cdf_eval(mu: float, sigma: float, z):
    """Phi((z - mu) / sigma) via the complementary error function."""
    if not sigma > 0:
        raise DomainError(f"standard deviation must be positive, got {sigma!r}")
    w = (np.asarray(z, dtype=float) - mu) / sigma
    out = 0.5 * special.erfc(-w / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


class PredictiveCDF:
    """A forecast CDF over the real line; concrete subclasses choose the representation."""

    kind: str = "abstract"

    def evaluate(self, z):
        raise NotImplementedError

    def __call__(self, z):
        return self.evaluate(z)


@dataclass(frozen=True)
class GaussianCDF(PredictiveCDF):
    mu: float
    sigma: float
    kind: str = field(default="gaussian", init=False)

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise DomainError(f"standard deviation must be positive, got {self.sigma!r}")
        if not math.isfinite(self.mu):
            raise DomainError(f"mean must be finite, got {self.mu!r}")

    def evaluate(self, z):
        return gaussian_cdf_eval(self.mu, self.sigma, z)

    def ppf(self, q):
        """Inverse CDF; q = 0 and q = 1 map to -inf and +inf."""
        return self.mu + self.sigma * special.ndtri(np.asarray(q, dtype=float))

    def mean(self) -> float:
        return self.mu


@dataclass(frozen=True)
class StepCDF(PredictiveCDF):
    """Right-continuous step function: value p_k on [z_k, z_{k+1}), `below` left of z_0.

    With ``monotone=True`` (the default) it is a valid CDF; recalibrated raw outputs
    use ``monotone=False`` because they need not be non-decreasing.
    """

    knots: np.ndarray
    probs: np.ndarray
    below: float = 0.0
    monotone: bool = True
    kind: str = field(default="step", init=False)

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if knots.ndim != 1 or knots.shape != probs.shape or knots.size == 0:
            raise DomainError("step CDF needs matching non-empty knot and probability arrays")
        if np.any(np.diff(knots) < 0):
            raise DomainError("step CDF knots must be sorted")
        if np.any(probs < 0) or np.any(probs > 1) or not 0 <= self.below <= 1:
            raise DomainError("step CDF probabilities must lie in [0, 1]")
        if self.monotone and (np.any(np.diff(probs) < 0) or self.below > probs[0]):
            raise DomainError("step CDF probabilities must be non-decreasing")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "probs", probs)

    def evaluate(self, z):
        zz = np.asarray(z, dtype=float)
        k = np.searchsorted(self.knots, zz, side="right") - 1
        out = np.where(k >= 0, self.probs[np.clip(k, 0, None)], self.below)
        return float(out) if out.ndim == 0 else out


def derive_rng(seed: int, label: str) -> np.random.Generator:
    """Independent generator for the component `label` under the root `seed`.

    Streams for different labels never share draws, so adding a component
    leaves every other component's randomness untouched.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class RngHandle:
    """Seeded randomness contract: same seed and call sequence give the same draws."""

    seed: int
    label: str = "root"
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.generator = derive_rng(self.seed, self.label)

    def child(self, label: str) -> "RngHandle":
        return RngHandle(self.seed, f"{self.label}/{label}")

    def random(self, size=None):
        return self.generator.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)
