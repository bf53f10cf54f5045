"""Baseline probabilistic forecasters: conjugate Bayesian ridge regression and an RBF GP."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .core import DomainError, GaussianCDF, NumericalError


class BayesLinReg:
    """Bayesian linear regression with a N(0, tau2 I) prior and fixed noise variance.

    The posterior is kept in natural parameters (precision and precision-weighted
    mean), so feeding data in batches gives exactly the batch-refit posterior.
    """

    def __init__(self, d: int, tau2: float = 1.0, noise_var: float = 1.0, bias: bool = True):
        if d < 0:
            raise DomainError("feature dimension must be non-negative")
        if tau2 <= 0 or noise_var <= 0:
            raise DomainError("prior and noise variances must be positive")
        self.d = int(d)
        self.tau2 = float(tau2)
        self.noise_var = float(noise_var)
        self.bias = bias
        p = self.d + (1 if bias else 0)
        self.precision = np.eye(p) / self.tau2
        self.shift = np.zeros(p)
        self.n_obs = 0
        self._mean = np.zeros(p)
        self._chol = linalg.cho_factor(self.precision, lower=True)

    def _design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.d:
            raise DomainError(f"expected {self.d} features, got {X.shape[1]}")
        if self.bias:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        return X

    def update(self, X, y) -> "BayesLinReg":
        Phi = self._design(X)
        y = np.asarray(y, dtype=float).reshape(-1)
        if Phi.shape[0] != y.size:
            raise DomainError("feature and target counts differ")
        if y.size == 0:
            return self
        self.precision = self.precision + Phi.T @ Phi / self.noise_var
        self.shift = self.shift + Phi.T @ y / self.noise_var
        self.n_obs += y.size
        self._chol = linalg.cho_factor(self.precision, lower=True)
        self._mean = linalg.cho_solve(self._chol, self.shift)
        return self

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    def predict_moments(self, X):
        Phi = self._design(X)
        mu = Phi @ self._mean
        var = np.einsum("ij,ji->i", Phi, linalg.cho_solve(self._chol, Phi.T)) + self.noise_var
        return mu, var

    def predict(self, x) -> GaussianCDF:
        mu, var = self.predict_moments(x)
        return GaussianCDF(float(mu[0]), math.sqrt(float(var[0])))


def blr_update(state: BayesLinReg, X, y) -> BayesLinReg:
    return state.update(X, y)


def blr_predict(state: BayesLinReg, x) -> GaussianCDF:
    return state.predict(x)


@dataclass(frozen=True)
class GPHyper:
    signal_var: float
    lengthscale: float
    noise_var: float

    def __post_init__(self):
        if self.signal_var <= 0 or self.lengthscale <= 0 or self.noise_var < 0:
            raise DomainError(f"invalid GP hyperparameters {self}")


JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def rbf_kernel(A, B, hyper: GPHyper) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sq = np.sum(A**2, 1)[:, None] + np.sum(B**2, 1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return hyper.signal_var * np.exp(-0.5 * sq / hyper.lengthscale**2)


@dataclass
class GPState:
    X: np.ndarray
    y: np.ndarray
    hyper: GPHyper
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def gram(self) -> np.ndarray:
        """Kernel matrix plus noise and jitter, the matrix that was factorized."""
        n = self.X.shape[0]
        return rbf_kernel(self.X, self.X, self.hyper) + (self.hyper.noise_var + self.jitter) * np.eye(n)


def gp_fit(X, y, hyper: GPHyper) -> GPState:
    """Exact GP regression; escalates diagonal jitter from 1e-8 to 1e-4 if needed."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise DomainError("need at least one training point with matching targets")
    K = rbf_kernel(X, X, hyper)
    eye = np.eye(X.shape[0])
    for jitter in JITTERS:
        try:
            L = np.linalg.cholesky(K + (hyper.noise_var + jitter) * eye)
        except np.linalg.LinAlgError:
            continue
        alpha = linalg.cho_solve((L, True), y)
        return GPState(X, y, hyper, L, alpha, jitter)
    raise NumericalError("gram matrix not positive definite after jitter escalation to 1e-4")


def gp_predict(state: GPState, Xs):
    """Posterior mean and variance (clamped at 1e-12) of the latent function plus noise."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    Ks = rbf_kernel(Xs, state.X, state.hyper)
    mean = Ks @ state.alpha
    v = linalg.solve_triangular(state.chol, Ks.T, lower=True)
    var = state.hyper.signal_var + state.hyper.noise_var - np.sum(v**2, axis=0)
    return mean, np.maximum(var, 1e-12)


def log_marginal_likelihood(state: GPState) -> float:
    n = state.y.size
    return float(-0.5 * state.y @ state.alpha - np.sum(np.log(np.diag(state.chol)))
                 - 0.5 * n * math.log(2.0 * math.pi))


def default_hyper_grid(X, y) -> list[GPHyper]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    span = float(np.max(np.ptp(X, axis=0))) if X.shape[0] > 1 else 1.0
    span = span if span > 0 else 1.0
    tvar = float(np.var(y)) if np.size(y) > 1 else 1.0
    tvar = tvar if tvar > 0 else 1.0
    return [GPHyper(s * tvar, l * span, 1e-6 * tvar)
            for s in (0.5, 1.0, 2.0) for l in (0.1, 0.3, 1.0, 3.0)]


def gp_select_hypers(X, y, grid: Sequence[GPHyper] | None = None) -> GPHyper:
    """Maximize the exact log marginal likelihood over a finite grid; ties go to the smallest lengthscale."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        raise DomainError("hyperparameter selection needs at least two points")
    grid = list(grid) if grid is not None else default_hyper_grid(X, y)
    if len(grid) == 1:
        return grid[0]
    best, best_key = None, None
    for h in grid:
        try:
            lml = log_marginal_likelihood(gp_fit(X, y, h))
        except NumericalError:
            continue
        key = (lml, -h.lengthscale)
        if best_key is None or key > best_key:
            best, best_key = h, key
    if best is None:
        raise NumericalError("no grid hyperparameters gave a factorizable gram matrix")
    return best


def hyper_lml_table(X, y, grid: Iterable[GPHyper]) -> list[tuple[GPHyper, float]]:
    return [(h, log_marginal_likelihood(gp_fit(X, y, h))) for h in grid]
