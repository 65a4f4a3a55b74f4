"""Bayesian statistical model checking and the objectives built on it.

Joint truth values of ``d`` formulae are encoded as outcome indices in
``range(2**d)``: formula ``i`` contributes bit ``d-1-i``, so the index read
in binary is the bitstring of truth values from the first formula to the
last.
"""

from __future__ import annotations

import csv
import multiprocessing
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln

from .lang import Formula, GammaPrior, temporal_depth
from .monitor import MonitorError, monitor
from .sim import RngStream, SimConfig, simulate


@dataclass(frozen=True)
class NoisyValue:
    value: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError("noise std must be non-negative, got %r" % self.std)


# ---------------------------------------------------------------------------
# outcomes


def outcome_index(bits) -> int:
    idx = 0
    for b in bits:
        idx = 2 * idx + int(bool(b))
    return idx


def outcome_bits(index: int, d: int) -> str:
    return format(index, "0%db" % d)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Observed truth values: ``truth[n, i]`` is formula ``i`` on run ``n``."""

    names: tuple[str, ...]
    truth: np.ndarray

    def __post_init__(self):
        if self.truth.ndim != 2 or self.truth.shape[1] != len(self.names):
            raise ValueError("truth must be an (N, d) array matching the names")
        if len(self.names) < 1 or self.truth.shape[0] < 1:
            raise ValueError("need at least one formula and one observation")

    @property
    def d(self) -> int:
        return len(self.names)

    def counts(self) -> np.ndarray:
        """Occurrences of each joint outcome."""
        weights = 2 ** np.arange(self.d - 1, -1, -1)
        idx = self.truth.astype(int) @ weights
        return np.bincount(idx, minlength=2**self.d)

    @classmethod
    def read_csv(cls, path) -> "DesignMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
        if not rows:
            raise ValueError("%s: empty observation file" % path)
        names = tuple(h.strip() for h in rows[0])
        data = []
        for n, row in enumerate(rows[1:], start=2):
            if len(row) != len(names):
                raise ValueError("%s, line %d: expected %d columns" % (path, n, len(names)))
            try:
                vals = [int(v) for v in row]
            except ValueError:
                raise ValueError("%s, line %d: entries must be 0 or 1" % (path, n)) from None
            if any(v not in (0, 1) for v in vals):
                raise ValueError("%s, line %d: entries must be 0 or 1" % (path, n))
            data.append(vals)
        return cls(names, np.array(data, dtype=bool).reshape(-1, len(names)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            w.writerows(self.truth.astype(int).tolist())


@dataclass(frozen=True, eq=False)
class DirichletPosterior:
    prior: np.ndarray
    counts: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return self.prior + self.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def d(self) -> int:
        return int(np.log2(len(self.prior)))


def dirichlet_posterior(counts, prior=1.0) -> DirichletPosterior:
    counts = np.asarray(counts, dtype=float)
    prior = np.broadcast_to(np.asarray(prior, dtype=float), counts.shape).copy()
    if np.any(prior <= 0) or np.any(counts < 0):
        raise ValueError("pseudo-counts must be positive and counts non-negative")
    return DirichletPosterior(prior, counts)


def predictive(post: DirichletPosterior) -> np.ndarray:
    """Posterior predictive probability of each joint outcome."""
    a = post.alpha
    return a / a.sum()


# ---------------------------------------------------------------------------
# sampling


def _truth_counts(model, theta, formulas, cfg, seed, indices):
    d = len(formulas)
    counts = np.zeros(2**d, dtype=np.int64)
    constants = dict(model.constants)
    for i in indices:
        traj = simulate(model, theta, cfg, RngStream(seed, i))
        bits = [monitor(f, traj, constants) for f in formulas]
        counts[outcome_index(bits)] += 1
    return counts


def _check_horizon(formulas, cfg: SimConfig):
    depth = max(temporal_depth(f) for f in formulas)
    if cfg.horizon < depth:
        raise MonitorError("horizon %g is shorter than the formulas' time depth %g" % (cfg.horizon, depth))


def smc_sample(
    model,
    theta: Mapping[str, float],
    formulas: Sequence[Formula],
    n_runs: int,
    cfg: SimConfig,
    seed: int,
    prior=1.0,
    workers: int = 1,
) -> DirichletPosterior:
    """Simulate ``n_runs`` trajectories, monitor every formula on each and
    return the Dirichlet posterior over joint outcomes.

    Trajectory ``i`` uses stream ``(seed, i)``, so the result does not depend
    on ``workers``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    formulas = list(formulas.values()) if isinstance(formulas, Mapping) else list(formulas)
    if not formulas:
        raise ValueError("need at least one formula")
    _check_horizon(formulas, cfg)
    if workers <= 1 or n_runs < 2 * workers:
        counts = _truth_counts(model, theta, formulas, cfg, seed, range(n_runs))
    else:
        # compile the kernel once before forking
        simulate(model, theta, cfg, RngStream(seed, 0))
        chunks = np.array_split(np.arange(n_runs), workers)
        ctx = multiprocessing.get_context("fork")
        counts = np.zeros(2 ** len(formulas), dtype=np.int64)
        with ProcessPoolExecutor(workers, mp_context=ctx) as pool:
            futures = [
                pool.submit(_truth_counts, model, theta, formulas, cfg, seed, c.tolist()) for c in chunks
            ]
            for fut in futures:
                counts += fut.result()
    return dirichlet_posterior(counts, prior)


# ---------------------------------------------------------------------------
# objectives


def log_likelihood(h, q) -> float:
    """``sum_j h_j log q_j`` for outcome counts ``h`` (or a DesignMatrix)."""
    if isinstance(h, DesignMatrix):
        h = h.counts()
    h = np.asarray(h, dtype=float)
    q = np.asarray(q, dtype=float)
    if h.shape != q.shape:
        raise ValueError("outcome counts and probabilities differ in size")
    seen = h > 0
    if np.any(q[seen] <= 0):
        warnings.warn("observed outcome has zero probability; log-likelihood is -inf", RuntimeWarning)
        return -np.inf
    return float(np.sum(h[seen] * np.log(q[seen])))


def log_prior(theta: Mapping[str, float], priors: Mapping[str, GammaPrior]) -> float:
    """Sum of Gamma log-densities of the prior-carrying parameters."""
    total = 0.0
    for name, pr in priors.items():
        x = float(theta[name])
        if x <= 0:
            raise ValueError("parameter %s must be positive under a gamma prior" % name)
        s, r = pr.shape, pr.rate
        total += (s - 1) * np.log(x) - r * x + s * np.log(r) - gammaln(s)
    return float(total)


def log_posterior(h, q, theta, priors=None) -> float:
    """Unnormalised log-posterior: log-likelihood plus Gamma log-priors."""
    return log_likelihood(h, q) + (log_prior(theta, priors) if priors else 0.0)


def jsd(p, q) -> float:
    """Jensen-Shannon divergence in nats (bounded by log 2)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distributions differ in size")
    return float(_jsd_rows(p[None, :], q[None, :])[0])


def _jsd_rows(p, q):
    m = p + q
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = np.where(p > 0, p * np.log(2 * p / m), 0.0)
        tq = np.where(q > 0, q * np.log(2 * q / m), 0.0)
    return np.maximum(0.5 * np.sum(tp + tq, axis=-1), 0.0)


def loglik_objective(h) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised ``q -> sum_j h_j log q_j`` over rows of ``q``."""
    h = np.asarray(h, dtype=float)
    seen = h > 0

    def f(q):
        q = np.atleast_2d(q)
        with np.errstate(divide="ignore"):
            return np.log(q[:, seen]) @ h[seen]

    return f


def jsd_objective(target) -> Callable[[np.ndarray], np.ndarray]:
    """Vectorised ``q -> -JSD(target, q)`` (a quantity to maximise)."""
    target = np.asarray(target, dtype=float)

    def f(q):
        q = np.atleast_2d(q)
        return -_jsd_rows(np.broadcast_to(target, q.shape), q)

    return f


def bootstrap_noise(counts, objective, B: int = 200, seed: int = 0, prior=1.0) -> NoisyValue:
    """Objective at the observed SMC counts, with the spread of the
    objective over ``B`` multinomial resamples of those counts."""
    if B < 2:
        raise ValueError("need at least two bootstrap resamples")
    counts = np.asarray(counts, dtype=float)
    k = int(round(counts.sum()))
    if k < 1:
        raise ValueError("bootstrap needs at least one simulated run")
    prior = np.broadcast_to(np.asarray(prior, dtype=float), counts.shape)
    value = float(objective((prior + counts) / (prior.sum() + k))[0])
    rng = np.random.default_rng(seed)
    resampled = rng.multinomial(k, counts / k, size=B)
    q = (prior + resampled) / (prior.sum() + k)
    vals = objective(q)
    vals = vals[np.isfinite(vals)]
    std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else 0.0
    return NoisyValue(value, std)


def _log_mbeta(x):
    return np.sum(gammaln(x), axis=-1) - gammaln(np.sum(x, axis=-1))


def posterior_moments(post: DirichletPosterior, h):
    """``(log E[L], log VAR[L])`` of the likelihood ``L(q) = prod q_j^h_j``
    under the Dirichlet posterior, computed from log multinomial-Beta values."""
    h = _counts_vector(h)
    a = post.alpha
    if h.shape != a.shape:
        raise ValueError("outcome counts and posterior differ in size")
    base = _log_mbeta(a)
    log_m1 = _log_mbeta(a + h) - base
    log_m2 = _log_mbeta(a + 2 * h) - base
    # VAR = E[L^2] - E[L]^2 = E[L]^2 (exp(log_m2 - 2 log_m1) - 1)
    gap = max(log_m2 - 2 * log_m1, 0.0)
    log_var = 2 * log_m1 + np.log(np.expm1(gap)) if gap > 0 else -np.inf
    return float(log_m1), float(log_var)


def posterior_noise(post: DirichletPosterior, h) -> NoisyValue:
    """Log expected likelihood with the standard deviation of a log-normal
    matched to the first two likelihood moments, ``sqrt(log(E[L^2] / E[L]^2))``.

    For small relative spread this equals ``sqrt(VAR[L]) / E[L]``; unlike that
    ratio it stays bounded where the likelihood is tiny and heavy-tailed.
    """
    h = _counts_vector(h)
    a = post.alpha
    if h.shape != a.shape:
        raise ValueError("outcome counts and posterior differ in size")
    base = _log_mbeta(a)
    log_m1 = _log_mbeta(a + h) - base
    log_m2 = _log_mbeta(a + 2 * h) - base
    gap = max(log_m2 - 2 * log_m1, 0.0)
    return NoisyValue(float(log_m1), float(np.sqrt(gap)))


def _counts_vector(h):
    if isinstance(h, DesignMatrix):
        h = h.counts()
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or np.any(h != np.round(h)):
        raise ValueError("outcome counts must be non-negative integers")
    return h


# ---------------------------------------------------------------------------
# target distributions


def validate_target(p, d: int | None = None, tol: float = 1e-6) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    n = len(p)
    if n < 2 or n & (n - 1):
        raise ValueError("target must have 2^d entries, got %d" % n)
    if d is not None and n != 2**d:
        raise ValueError("target has %d entries but %d formulae need %d" % (n, d, 2**d))
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("target probabilities must be non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError("target probabilities sum to %.9g, not 1" % p.sum())
    return p


def read_target(path, d: int | None = None) -> np.ndarray:
    """Read ``bitstring,probability`` rows (optional header line)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].strip().startswith("#")]
    if rows:
        try:
            float(rows[0][1])
        except (ValueError, IndexError):
            rows = rows[1:]
    if not rows:
        raise ValueError("%s: no target rows" % path)
    width = len(rows[0][0].strip())
    if d is not None and width != d:
        raise ValueError("%s: bitstrings have %d bits but there are %d formulae" % (path, width, d))
    p = np.full(2**width, np.nan)
    for row in rows:
        bits = row[0].strip()
        if len(bits) != width or set(bits) - {"0", "1"}:
            raise ValueError("%s: bad bitstring %r" % (path, bits))
        p[int(bits, 2)] = float(row[1])
    if np.isnan(p).any():
        raise ValueError("%s: target must list all %d outcomes" % (path, 2**width))
    return validate_target(p, d)


def write_target(path, p) -> None:
    d = int(np.log2(len(p)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bits", "probability"])
        for j, v in enumerate(p):
            w.writerow([outcome_bits(j, d), repr(float(v))])


def sample_observations(
    model, theta, formulas: Mapping[str, Formula], n: int, cfg: SimConfig, seed: int
) -> DesignMatrix:
    """Synthetic design matrix: truth of every formula on ``n`` fresh runs."""
    if n < 1:
        raise ValueError("need at least one observation")
    constants = dict(model.constants)
    rows = []
    for i in range(n):
        traj = simulate(model, theta, cfg, RngStream(seed, i))
        rows.append([monitor(f, traj, constants) for f in formulas.values()])
    return DesignMatrix(tuple(formulas), np.array(rows, dtype=bool))
