"""Gaussian-process regression with an RBF kernel and per-point noise.

The kernel is ``k(x, x') = amplitude * exp(-|x - x'|^2 / lengthscale^2)``.
Targets are centred on their sample mean before fitting and the mean is
added back to predictions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

FLOOR, CEILING = 1e-8, 1e8
JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
DUPLICATE_TOL = 1e-10


class GpError(RuntimeError):
    pass


@dataclass(frozen=True)
class Kernel:
    amplitude: float
    lengthscale: float

    def __post_init__(self):
        if not (self.amplitude > 0 and self.lengthscale > 0):
            raise ValueError("kernel hyperparameters must be positive")

    def __call__(self, A, B) -> np.ndarray:
        return self.amplitude * np.exp(-sqdist(A, B) / self.lengthscale**2)


def sqdist(A, B) -> np.ndarray:
    # direct differences: exact zeros on the diagonal, unlike |a|^2 + |b|^2 - 2ab
    return cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")


@dataclass(frozen=True, eq=False)
class TrainingSet:
    """Inputs in normalised space, raw targets and noise variances."""

    X: np.ndarray
    y: np.ndarray
    noise: np.ndarray

    def __post_init__(self):
        n = len(self.y)
        if self.X.ndim != 2 or self.X.shape[0] != n or self.noise.shape != (n,):
            raise ValueError("inputs, targets and noise must have matching lengths")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("training data must be finite")
        if np.any(self.noise < 0):
            raise ValueError("noise variances must be non-negative")

    @classmethod
    def build(cls, X, y, noise=None) -> "TrainingSet":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != len(y) and X.shape[1] == len(y) and X.shape[0] == 1:
            X = X.T
        noise = np.zeros(len(y)) if noise is None else np.broadcast_to(np.asarray(noise, dtype=float), y.shape)
        return cls(X, y, noise.copy()).merged()

    def merged(self) -> "TrainingSet":
        """Combine points closer than 1e-10 into one, weighting targets by
        precision (noise-free points take precedence)."""
        n = len(self.y)
        if n < 2:
            return self
        diff = self.X[:, None, :] - self.X[None, :, :]
        close = np.sqrt(np.sum(diff**2, axis=-1)) <= DUPLICATE_TOL
        if close.sum() == n:
            return self
        group = -np.ones(n, dtype=int)
        g = 0
        for i in range(n):
            if group[i] < 0:
                group[(group < 0) & close[i]] = g
                g += 1
        X, y, s2 = [], [], []
        for j in range(g):
            idx = np.flatnonzero(group == j)
            exact = idx[self.noise[idx] == 0]
            X.append(self.X[idx[0]])
            if len(exact):
                y.append(self.y[exact].mean())
                s2.append(0.0)
            else:
                w = 1.0 / self.noise[idx]
                y.append(np.sum(w * self.y[idx]) / w.sum())
                s2.append(1.0 / w.sum())
        return TrainingSet(np.array(X), np.array(y), np.array(s2))

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class Posterior:
    mean: float
    variance: float


def _factor(train: TrainingSet, kern: Kernel):
    K = kern(train.X, train.X)
    base = K + np.diag(train.noise)
    for j in JITTERS:
        try:
            L = cholesky(base + np.eye(len(train)) * j * kern.amplitude, lower=True)
            return K, L, j
        except LinAlgError:
            continue
    raise GpError("covariance matrix is ill-conditioned even with jitter %g" % (JITTERS[-1] * kern.amplitude))


class FittedGp:
    """Cached Cholesky factor and weights of a GP on a training set."""

    def __init__(self, train: TrainingSet, kern: Kernel):
        self.train = train
        self.kernel = kern
        self.offset = float(np.mean(train.y))
        self.yc = train.y - self.offset
        self.K, self.L, self.jitter = _factor(train, kern)
        self.weights = cho_solve((self.L, True), self.yc)

    @property
    def X(self):
        return self.train.X

    @property
    def dim(self):
        return self.train.X.shape[1]

    def predict(self, x) -> Posterior:
        m, v = self.predict_many(np.atleast_2d(np.asarray(x, dtype=float)))
        return Posterior(float(m[0]), float(v[0]))

    def predict_many(self, Xq):
        """Posterior means and variances at the rows of ``Xq``."""
        Xq = np.atleast_2d(Xq)
        Ks = self.kernel(Xq, self.X)
        mean = self.offset + Ks @ self.weights
        V = solve_triangular(self.L, Ks.T, lower=True)
        var = self.kernel.amplitude - np.sum(V**2, axis=0)
        return mean, np.maximum(var, 0.0)

    def ucb(self, Xq, beta):
        m, v = self.predict_many(Xq)
        return m + beta * np.sqrt(v)

    # derivatives -------------------------------------------------------
    def _local(self, x):
        x = np.asarray(x, dtype=float)
        diff = x[None, :] - self.X
        lam2 = self.kernel.lengthscale**2
        k = self.kernel.amplitude * np.exp(-np.sum(diff**2, 1) / lam2)
        dk = -2.0 * diff / lam2 * k[:, None]
        return diff, k, dk, lam2

    def mean_derivatives(self, x):
        """Value, gradient and Hessian of the posterior mean at ``x``."""
        diff, k, dk, lam2 = self._local(x)
        w = self.weights * k
        grad = dk.T @ self.weights
        hess = 4.0 / lam2**2 * (diff.T * w) @ diff - 2.0 / lam2 * w.sum() * np.eye(len(x))
        return self.offset + k @ self.weights, grad, hess

    def variance_derivatives(self, x):
        """Value, gradient and Hessian of the posterior variance at ``x``."""
        diff, k, dk, lam2 = self._local(x)
        b = cho_solve((self.L, True), k)
        Adk = cho_solve((self.L, True), dk)
        v = self.kernel.amplitude - k @ b
        grad = -2.0 * dk.T @ b
        bk = b * k
        sum_bHk = 4.0 / lam2**2 * (diff.T * bk) @ diff - 2.0 / lam2 * bk.sum() * np.eye(len(x))
        hess = -2.0 * (dk.T @ Adk + sum_bHk)
        return max(v, 0.0), grad, hess

    def ucb_derivatives(self, x, beta):
        m, gm, Hm = self.mean_derivatives(x)
        if beta == 0:
            return m, gm, Hm
        v, gv, Hv = self.variance_derivatives(x)
        if v < 1e-14 * self.kernel.amplitude:
            return m, gm, Hm
        s = math.sqrt(v)
        gs = gv / (2 * s)
        Hs = Hv / (2 * s) - np.outer(gv, gv) / (4 * s**3)
        return m + beta * s, gm + beta * gs, Hm + beta * Hs


def fit(train: TrainingSet, kern: Kernel) -> FittedGp:
    return FittedGp(train, kern)


def log_evidence(train: TrainingSet, kern: Kernel, grad: bool = False):
    """Log marginal likelihood of the centred targets, optionally with its
    gradient with respect to (log amplitude, log lengthscale)."""
    yc = train.y - np.mean(train.y)
    K, L, _ = _factor(train, kern)
    alpha = cho_solve((L, True), yc)
    n = len(yc)
    value = -0.5 * yc @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    if not grad:
        return float(value)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    dK_amp = K
    dK_len = K * 2.0 * sqdist(train.X, train.X) / kern.lengthscale**2
    g = np.array([0.5 * np.sum(W * dK_amp), 0.5 * np.sum(W * dK_len)])
    return float(value), g


def optimize_hyperparams(train: TrainingSet, n_starts: int = 5, seed=None) -> Kernel:
    """Best kernel over several bounded quasi-Newton ascents of the evidence
    in (log amplitude, log lengthscale), started log-uniformly."""
    if len(train) < 3:
        warnings.warn("fewer than 3 training points: hyperparameters are poorly determined", RuntimeWarning)
    rng = np.random.default_rng(seed)
    var_y = float(np.var(train.y))
    scale = var_y if var_y > 0 else 1.0
    bounds = [(math.log(FLOOR), math.log(CEILING))] * 2

    def negative(u):
        try:
            v, g = log_evidence(train, Kernel(math.exp(u[0]), math.exp(u[1])), grad=True)
        except GpError:
            return 1e300, np.zeros(2)
        return -v, -g

    best_u, best_val = None, -np.inf
    for _ in range(n_starts):
        u0 = np.array(
            [
                math.log(scale) + rng.uniform(math.log(0.01), math.log(100.0)),
                rng.uniform(math.log(0.05), math.log(4.0)),
            ]
        )
        u0 = np.clip(u0, bounds[0][0], bounds[0][1])
        f0 = negative(u0)[0]
        candidates = [(f0, u0)]
        try:
            res = minimize(negative, u0, jac=True, method="L-BFGS-B", bounds=bounds)
            candidates.append((float(res.fun), res.x))
        except (ValueError, FloatingPointError, LinAlgError):
            pass
        f, u = min(candidates, key=lambda c: c[0])
        if f < 1e300 and -f > best_val:
            best_u, best_val = u, -f
    if best_u is None:
        warnings.warn("hyperparameter optimisation failed; using defaults", RuntimeWarning)
        return Kernel(scale, 1.0)
    amp, lam = math.exp(best_u[0]), math.exp(best_u[1])
    if amp <= FLOOR * 1.0001:
        warnings.warn("kernel amplitude clipped at its floor (flat data?)", RuntimeWarning)
    if len(train) > 1:
        gaps = sqdist(train.X, train.X)
        spacing = math.sqrt(float(np.min(gaps[~np.eye(len(train), dtype=bool)])))
        if lam < 0.1 * spacing:
            # every point is then explained as noise around the mean
            warnings.warn(
                "lengthscale %.3g collapsed below the input spacing %.3g; "
                "the initial design may be too small" % (lam, spacing),
                RuntimeWarning,
            )
    return Kernel(min(max(amp, FLOOR), CEILING), min(max(lam, FLOOR), CEILING))
