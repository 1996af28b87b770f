"""Gaussian-process regression with a Matérn-5/2 kernel and constant mean."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import FitError

JITTER_START = 1e-6
JITTER_STEPS = 3


def matern52(a: np.ndarray, b: np.ndarray, lengthscale: float, signal_var: float) -> np.ndarray:
    """k(x, x') = s2 (1 + sqrt5 r/l + 5 r^2 / 3 l^2) exp(-sqrt5 r/l)."""
    r = cdist(np.atleast_2d(a), np.atleast_2d(b))
    s = math.sqrt(5.0) * r / lengthscale
    return signal_var * (1.0 + s + s * s / 3.0) * np.exp(-s)


def _factor(K: np.ndarray, signal_var: float):
    """Cholesky of K, escalating diagonal jitter (1e-6 s2, x10, up to 3 times)."""
    try:
        return cholesky(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * signal_var
    for _ in range(JITTER_STEPS + 1):
        try:
            return cholesky(K + jitter * np.eye(len(K)), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FitError("kernel matrix is not positive definite even with maximal jitter")


@dataclass(frozen=True)
class HyperParams:
    lengthscale: float
    signal_var: float
    noise_var: float


@dataclass(frozen=True, eq=False)
class GpModel:
    X: np.ndarray  # standardized training inputs
    y: np.ndarray
    mean: float
    hyper: HyperParams
    feature_mean: np.ndarray
    feature_std: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    @classmethod
    def build(cls, X, y, hyper: HyperParams, feature_mean, feature_std) -> "GpModel":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        m = float(np.mean(y))
        K = matern52(X, X, hyper.lengthscale, hyper.signal_var) + hyper.noise_var * np.eye(len(X))
        L, jitter = _factor(K, hyper.signal_var)
        alpha = cho_solve((L, True), y - m)
        return cls(X, y, m, hyper, np.asarray(feature_mean, float), np.asarray(feature_std, float),
                   L, alpha, jitter)

    def standardize(self, features) -> np.ndarray:
        return (np.atleast_2d(np.asarray(features, dtype=np.float64)) - self.feature_mean) / self.feature_std

    def log_marginal_likelihood(self) -> float:
        r = self.y - self.mean
        n = len(self.y)
        return float(
            -0.5 * r @ self.alpha - np.log(np.diag(self.chol)).sum() - 0.5 * n * math.log(2 * math.pi)
        )

    def predict_standardized(self, Xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self.hyper
        ks = matern52(Xs, self.X, h.lengthscale, h.signal_var)
        mu = self.mean + ks @ self.alpha
        v = solve_triangular(self.chol, ks.T, lower=True)
        var = h.signal_var - (v * v).sum(axis=0)
        return mu, np.maximum(var, 0.0)

    def predict(self, features) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance for raw (unstandardized) feature rows."""
        return self.predict_standardized(self.standardize(features))

    def loo_residuals(self) -> np.ndarray:
        kinv = cho_solve((self.chol, True), np.eye(len(self.y)))
        return self.alpha / np.diag(kinv)

    def to_dict(self) -> dict:
        return {
            "kernel": "matern52",
            "lengthscale": self.hyper.lengthscale,
            "signal_var": self.hyper.signal_var,
            "noise_var": self.hyper.noise_var,
            "mean": self.mean,
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "X": self.X.tolist(),
            "y": self.y.tolist(),
            "alpha": self.alpha.tolist(),
            "jitter": self.jitter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpModel":
        hyper = HyperParams(d["lengthscale"], d["signal_var"], d["noise_var"])
        X = np.asarray(d["X"], dtype=np.float64)
        K = matern52(X, X, hyper.lengthscale, hyper.signal_var) + hyper.noise_var * np.eye(len(X))
        if d.get("jitter", 0.0):
            K = K + d["jitter"] * np.eye(len(X))
        L = cholesky(K, lower=True)
        return cls(X, np.asarray(d["y"], float), float(d["mean"]), hyper,
                   np.asarray(d["feature_mean"], float), np.asarray(d["feature_std"], float),
                   L, np.asarray(d["alpha"], float), float(d.get("jitter", 0.0)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "GpModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class HyperGrid:
    lengthscales: Sequence[float]
    signal_vars: Sequence[float]
    noise_vars: Sequence[float]

    @classmethod
    def default(cls, y) -> "HyperGrid":
        """Log-spaced grid; variances are relative to the target variance."""
        v = float(np.var(y)) or 1.0
        return cls(
            lengthscales=tuple(np.logspace(-1, 1, 7)),
            signal_vars=tuple(v * np.logspace(-1, 1, 5)),
            noise_vars=tuple(v * np.array([1e-10, 1e-8, 1e-6, 1e-4])),
        )


def standardization(X) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return mu, np.where(sd > 0, sd, 1.0)


def gp_fit(X, y=None, grid: HyperGrid | None = None) -> GpModel:
    """Fit by maximising the exact log marginal likelihood over ``grid``.

    ``X`` is a feature matrix with targets ``y``, or a dataset exposing
    ``features()`` and ``latency_ms``.  Inputs are z-scored per feature; the
    constant mean is ``mean(y)``.  Equal likelihoods keep the smaller
    lengthscale.
    """
    if hasattr(X, "features"):
        X, y = X.features(), X.latency_ms
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) < 2 or len(X) != len(y):
        raise FitError(f"need at least two rows with targets, got {len(X)} inputs, {len(y)} targets")
    grid = HyperGrid.default(y) if grid is None else grid
    mu, sd = standardization(X)
    Xs = (X - mu) / sd
    best, best_lml, last_err = None, -math.inf, None
    for ls, sv, nv in itertools.product(sorted(grid.lengthscales), grid.signal_vars, grid.noise_vars):
        try:
            model = GpModel.build(Xs, y, HyperParams(float(ls), float(sv), float(nv)), mu, sd)
        except FitError as exc:
            last_err = exc
            continue
        lml = model.log_marginal_likelihood()
        if lml > best_lml:
            best, best_lml = model, lml
    if best is None:
        raise FitError(f"no hyperparameter setting produced a valid fit: {last_err}")
    return best
