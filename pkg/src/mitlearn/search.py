"""GP-UCB maximisation of noisy objectives over a box, and the two
pipelines built on it: parameter identification and system design.

The search works in the normalised cube ``[-1, 1]^d`` of a
``ParameterSpace``. It evaluates an orthogonal Latin hypercube, fits a GP
with per-point noise, then repeatedly picks the best upper-confidence point
on a fresh random grid, polishes it by local ascent and evaluates the
objective there if it promises an improvement. ``beta`` grows while no
candidate looks promising and the loop stops after a few such rounds.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .gp import FittedGp, GpError, Kernel, TrainingSet, fit, optimize_hyperparams
from .lang import Formula, GammaPrior, temporal_depth
from .model import ParameterSpace
from .sim import SimConfig
from .smc import (
    DesignMatrix,
    NoisyValue,
    _check_horizon,
    bootstrap_noise,
    jsd,
    jsd_objective,
    log_prior,
    loglik_objective,
    posterior_noise,
    predictive,
    smc_sample,
    validate_target,
)

log = logging.getLogger(__name__)

# design results whose JSD exceeds this fraction of log 2 are flagged
POOR_FIT = 0.1


class SearchError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# designs


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def lhs(k: int, dims: int, seed=None) -> np.ndarray:
    """Latin hypercube of ``k`` points in ``[-1, 1]^dims``: every axis is cut
    into ``k`` equal bins and each bin holds exactly one point."""
    if k < 1 or dims < 1:
        raise ValueError("need k >= 1 and dims >= 1")
    rng = _rng(seed)
    bins = np.column_stack([rng.permutation(k) for _ in range(dims)])
    u = (bins + rng.random((k, dims))) / k
    return 2.0 * u - 1.0


def _blocks(k: int, dims: int) -> int:
    s = int(round(k ** (1.0 / dims))) + 1
    while s >= 2:
        if k % s**dims == 0:
            return s
        s -= 1
    return 1


def orthogonal_lhs(k: int, dims: int, seed=None) -> np.ndarray:
    """Latin hypercube that also puts the same number of points in each of
    the ``s^dims`` subcubes obtained by cutting every axis into ``s`` blocks.

    ``s`` is the largest integer >= 2 with ``s^dims`` dividing ``k``; when
    there is none a plain Latin hypercube is returned with a warning.
    """
    if k < 1 or dims < 1:
        raise ValueError("need k >= 1 and dims >= 1")
    s = _blocks(k, dims)
    if s < 2:
        if k > 1:
            warnings.warn(
                "no balanced subcube split for %d points in %d dimensions; using plain LHS" % (k, dims),
                RuntimeWarning,
            )
        return lhs(k, dims, seed)
    rng = _rng(seed)
    per_block = k // s  # bins of width 2/k inside one axis block
    # each subcube gets k / s^d points; enumerate subcube labels per point
    cells = np.array(np.unravel_index(np.repeat(np.arange(s**dims), k // s**dims), (s,) * dims)).T
    bins = np.empty((k, dims), dtype=int)
    for a in range(dims):
        for b in range(s):
            members = np.flatnonzero(cells[:, a] == b)
            bins[members, a] = b * per_block + rng.permutation(per_block)
    u = (bins + rng.random((k, dims))) / k
    return 2.0 * u - 1.0


# ---------------------------------------------------------------------------
# acquisition


def ucb_select(gp: FittedGp, candidates, beta: float):
    """Candidate maximising ``mean + beta * std`` (lowest index on ties),
    and its score."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    if C.shape[0] == 0 or C.size == 0:
        raise SearchError("empty candidate set")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    scores = gp.ucb(C, beta)
    i = int(np.argmax(scores))
    return C[i].copy(), float(scores[i])


def _ucb_at(gp, x, beta):
    return float(gp.ucb(x[None, :], beta)[0])


def local_refine(gp: FittedGp, x0, beta: float, max_steps: int = 50, tol: float = 1e-9) -> np.ndarray:
    """Projected Newton ascent of the UCB surface from ``x0`` inside the box.

    Uses the analytic gradient and Hessian; falls back to a gradient step
    when the Hessian is not negative definite on the free coordinates, and
    backtracks until the surface value increases. The result never scores
    lower than ``x0``.
    """
    x = np.clip(np.asarray(x0, dtype=float).copy(), -1.0, 1.0)
    f = _ucb_at(gp, x, beta)
    lam = gp.kernel.lengthscale
    for _ in range(max_steps):
        _, g, H = gp.ucb_derivatives(x, beta)
        free = ~(((x <= -1.0) & (g < 0)) | ((x >= 1.0) & (g > 0)))
        gf = g[free]
        if not free.any() or np.linalg.norm(gf) <= tol * max(1.0, abs(f)):
            break
        step = np.zeros_like(x)
        try:
            Lc = np.linalg.cholesky(-H[np.ix_(free, free)])
            step[free] = np.linalg.solve(Lc.T, np.linalg.solve(Lc, gf))
        except np.linalg.LinAlgError:
            step[free] = gf / np.linalg.norm(gf) * lam
        t, moved = 1.0, False
        while t > 1e-10:
            xn = np.clip(x + t * step, -1.0, 1.0)
            fn = _ucb_at(gp, xn, beta)
            if fn > f:
                moved = True
                break
            t *= 0.5
        if not moved:
            break
        dx = np.linalg.norm(xn - x)
        x, f = xn, fn
        if dx <= tol:
            break
    return x


# ---------------------------------------------------------------------------
# Laplace


@dataclass(frozen=True)
class LaplaceResult:
    covariance: np.ndarray  # raw scale
    std: np.ndarray  # raw scale, inf along non-negative curvature
    clipped: int  # number of directions without negative curvature
    boundary: bool


def laplace(gp: FittedGp, x, space: ParameterSpace) -> LaplaceResult:
    """Gaussian uncertainty from the curvature of the GP mean at ``x``.

    The covariance is ``(-H)^-1`` in normalised space, mapped to raw
    parameters with the Jacobian of ``denormalize``. Eigen-directions with
    non-negative curvature get infinite variance and are counted in
    ``clipped``.
    """
    x = np.asarray(x, dtype=float)
    boundary = bool(np.any(np.abs(x) >= 1.0 - 1e-6))
    if boundary:
        warnings.warn("optimum lies on the boundary of the search space; Laplace std is unreliable", RuntimeWarning)
    _, _, H = gp.mean_derivatives(x)
    A = -0.5 * (H + H.T)
    w, V = np.linalg.eigh(A)
    scale = max(np.max(np.abs(w)), 1e-300)
    good = w > 1e-12 * scale
    clipped = int(np.sum(~good))
    if clipped:
        warnings.warn("%d direction(s) without negative curvature at the optimum" % clipped, RuntimeWarning)
    inv_w = np.where(good, 1.0 / np.where(good, w, 1.0), np.inf)
    J = np.diag(space.jacobian(x))
    if clipped == 0:
        cov_n = (V * inv_w) @ V.T
        cov = J @ cov_n @ J
        cov = 0.5 * (cov + cov.T)
        std = np.sqrt(np.diag(cov))
    else:
        # finite part from the positive eigen-directions, inf along the rest
        cov_n = (V[:, good] * inv_w[good]) @ V[:, good].T
        cov = J @ cov_n @ J
        touched = np.any(np.abs(V[:, ~good]) > 1e-12, axis=1)
        std = np.sqrt(np.diag(cov))
        std[touched] = np.inf
        cov[touched, :] = np.inf
        cov[:, touched] = np.inf
    return LaplaceResult(cov, std, clipped, boundary)


# ---------------------------------------------------------------------------
# the loop


@dataclass(frozen=True)
class UcbConfig:
    """Knobs of the GP-UCB loop.

    ``threshold`` picks the rule that decides whether a loop iteration
    evaluates the objective:

    ``"ucb"``
        the best grid candidate must score above the upper confidence bound
        at every observed input; it is then refined and evaluated. Suits
        noisy objectives, where the bound at observed inputs absorbs noise.
    ``"observed"``
        the refined candidate must score above the best observed value.
        Converges more tightly on noiseless objectives but keeps sampling
        when evaluations are noisy.

    Either way the candidate must lie at least ``min_distance`` (normalised
    units) from every observed input, and the loop stops after
    ``max_stagnant`` consecutive iterations without an evaluation, or at
    ``max_evaluations`` in total.
    """

    n_init: int = 48
    n_grid: int = 500
    beta0: float = 2.0
    beta_growth: float = 2.0
    beta_cap: float = 16.0
    max_stagnant: int = 3
    refine_steps: int = 50
    runs: int = 1000
    seed: int = 0
    n_restarts: int = 5
    improvement: float = 1e-6
    min_distance: float = 1e-3
    threshold: str = "ucb"
    max_evaluations: int = 500
    refit_hyperparams: bool = False

    def __post_init__(self):
        if self.n_init < 2:
            raise ValueError("initial design needs at least 2 points")
        if self.n_grid < self.n_init:
            raise ValueError("grid size must be at least the initial design size")
        if not self.beta0 > 0:
            raise ValueError("beta0 must be positive")
        if self.beta_growth < 1 or self.beta_cap < self.beta0:
            raise ValueError("beta must not shrink on stagnation")
        if self.max_stagnant < 1:
            raise ValueError("max_stagnant must be at least 1")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.threshold not in ("observed", "ucb"):
            raise ValueError("threshold must be 'observed' or 'ucb'")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    theta: np.ndarray  # raw scale
    value: float  # nan when the objective failed
    std: float


@dataclass(eq=False)
class SearchResult:
    names: tuple[str, ...]
    theta: np.ndarray
    best: NoisyValue
    covariance: np.ndarray
    std: np.ndarray
    clipped: int
    trace: list[TraceEntry]
    evaluations: int
    n_init: int
    kernel: Kernel
    gp: FittedGp = field(repr=False)
    stagnated: bool = True
    boundary: bool = False
    iterations: int = 0

    @property
    def best_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.theta.tolist()))

    @property
    def std_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.std.tolist()))

    @property
    def extra_evaluations(self) -> int:
        return self.evaluations - self.n_init

    def write_trace(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", *self.names, "value", "std"])
            for e in self.trace:
                w.writerow([e.iteration, *map(repr, e.theta.tolist()), repr(e.value), repr(e.std)])


def _evaluate(objective, theta, where):
    last = None
    for attempt in range(2):
        try:
            v = objective(theta)
            if not isinstance(v, NoisyValue):
                v = NoisyValue(float(v), 0.0)
            if not math.isfinite(v.value) or not math.isfinite(v.std):
                raise SearchError("non-finite objective value %r" % (v,))
            return v
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            last = exc
            log.warning("objective failed at %s (attempt %d): %s", where, attempt + 1, exc)
    return last


def gpucb_maximize(objective: Callable, space: ParameterSpace, cfg: UcbConfig = UcbConfig()) -> SearchResult:
    """Maximise a noisy black-box ``objective(theta) -> NoisyValue`` over
    ``space`` by GP-UCB.

    Failed evaluations are retried once, then logged in the trace with a
    NaN value and left out of the GP.
    """
    d = space.dim
    if d < 1:
        raise SearchError("search space has no free parameters")
    design_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(0,)))
    hyper_seed = np.random.SeedSequence(cfg.seed, spawn_key=(1,))

    X, y, s2, trace = [], [], [], []

    def run(x, iteration):
        theta = space.denormalize(x)
        v = _evaluate(objective, theta, space.to_dict(theta))
        if isinstance(v, NoisyValue):
            X.append(np.asarray(x, dtype=float))
            y.append(v.value)
            s2.append(v.std**2)
            trace.append(TraceEntry(iteration, theta, v.value, v.std))
            return True
        trace.append(TraceEntry(iteration, theta, math.nan, math.nan))
        return False

    for x in orthogonal_lhs(cfg.n_init, d, design_rng):
        run(x, 0)
    if len(y) < 2:
        raise SearchError("objective failed on all but %d of the initial points" % len(y))

    def training():
        return TrainingSet.build(np.array(X), np.array(y), np.array(s2))

    kern = optimize_hyperparams(training(), cfg.n_restarts, seed=hyper_seed.spawn(1)[0])
    gp = fit(training(), kern)
    log.info("initial design done: best %.6g, kernel %s", max(y), kern)

    beta, stagnant, iteration = cfg.beta0, 0, 0
    stagnated = True
    while stagnant < cfg.max_stagnant:
        if len(trace) >= cfg.max_evaluations:
            warnings.warn("evaluation budget of %d exhausted before convergence" % cfg.max_evaluations, RuntimeWarning)
            stagnated = False
            break
        iteration += 1
        grid = orthogonal_lhs(cfg.n_grid, d, design_rng)
        x_sel, grid_score = ucb_select(gp, grid, beta)
        if cfg.threshold == "observed":
            # refined upper bound against the best observed value
            x_new = local_refine(gp, x_sel, beta, cfg.refine_steps)
            score = _ucb_at(gp, x_new, beta)
            bar = max(y)
        else:
            # the grid winner must beat the upper bound at every observed
            # input; only then is it refined and evaluated
            x_new, score = x_sel, grid_score
            bar = float(np.max(gp.ucb(np.array(X), beta)))
        gap = np.min(np.linalg.norm(np.array(X) - x_new, axis=1))
        if score > bar + cfg.improvement and gap >= cfg.min_distance:
            if cfg.threshold == "ucb":
                x_new = local_refine(gp, x_sel, beta, cfg.refine_steps)
            ok = run(x_new, iteration)
            if ok:
                if cfg.refit_hyperparams:
                    kern = optimize_hyperparams(training(), cfg.n_restarts, seed=hyper_seed.spawn(1)[0])
                try:
                    gp = fit(training(), kern)
                except GpError:
                    kern = optimize_hyperparams(training(), cfg.n_restarts, seed=hyper_seed.spawn(1)[0])
                    gp = fit(training(), kern)
                beta, stagnant = cfg.beta0, 0
                log.info("iteration %d: evaluated %s -> %.6g", iteration, space.to_dict(space.denormalize(x_new)), y[-1])
                continue
        stagnant += 1
        beta = min(beta * cfg.beta_growth, cfg.beta_cap)
        log.info("iteration %d: no promising point (beta now %g)", iteration, beta)

    i_best = int(np.argmax(y))
    x_best = X[i_best]
    # polish on the mean surface before measuring curvature
    x_star = local_refine(gp, x_best, 0.0, cfg.refine_steps)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        lap = laplace(gp, x_star, space)
    for w in caught:
        warnings.warn(w.message, w.category)
    return SearchResult(
        names=space.names,
        theta=space.denormalize(x_best),
        best=NoisyValue(y[i_best], math.sqrt(s2[i_best])),
        covariance=lap.covariance,
        std=lap.std,
        clipped=lap.clipped,
        trace=trace,
        evaluations=len(trace),
        n_init=cfg.n_init,
        kernel=kern,
        gp=gp,
        stagnated=stagnated,
        boundary=bool(np.any(np.abs(x_best) >= 1.0 - 1e-6)) or lap.boundary,
        iterations=iteration,
    )


# ---------------------------------------------------------------------------
# pipelines


def _eval_seed(seed: int, count: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(2, count)).generate_state(1)[0])


def _formula_list(formulas):
    if isinstance(formulas, Mapping):
        return tuple(formulas), list(formulas.values())
    formulas = list(formulas)
    return tuple("phi%d" % i for i in range(len(formulas))), formulas


def _noise_mode(noise):
    if isinstance(noise, (int, float)):
        if noise < 0:
            raise ValueError("fixed noise std must be non-negative")
        return "fixed", float(noise)
    if noise in ("bootstrap", "posterior"):
        return noise, None
    raise ValueError("noise must be 'bootstrap', 'posterior' or a fixed std, got %r" % (noise,))


def identify(
    model,
    formulas,
    data: DesignMatrix,
    space: ParameterSpace,
    priors: Mapping[str, GammaPrior] | None = None,
    cfg: UcbConfig = UcbConfig(),
    sim: SimConfig | None = None,
    noise="bootstrap",
    bootstrap: int = 200,
    workers: int = 1,
) -> SearchResult:
    """Maximum-likelihood (or, with ``priors``, maximum a posteriori)
    parameters given observed truth values of ``formulas``."""
    names, flist = _formula_list(formulas)
    if tuple(data.names) != names:
        raise ValueError(
            "observation columns %s do not match the properties %s" % (list(data.names), list(names))
        )
    space.check_model(model)
    mode, fixed = _noise_mode(noise)
    h = data.counts()
    obj = loglik_objective(h)
    sim = sim or SimConfig(_default_horizon(flist))
    _check_horizon(flist, sim)
    counter = [0]

    def objective(theta):
        seed = _eval_seed(cfg.seed, counter[0])
        counter[0] += 1
        th = space.to_dict(theta)
        post = smc_sample(model, th, flist, cfg.runs, sim, seed, workers=workers)
        if mode == "posterior":
            v = posterior_noise(post, h)
        elif mode == "bootstrap":
            v = bootstrap_noise(post.counts, obj, B=bootstrap, seed=seed)
        else:
            v = NoisyValue(float(obj(predictive(post))[0]), fixed)
        if priors:
            v = NoisyValue(v.value + log_prior(th, priors), v.std)
        return v

    return gpucb_maximize(objective, space, cfg)


def design(
    model,
    formulas,
    target,
    space: ParameterSpace,
    cfg: UcbConfig = UcbConfig(),
    sim: SimConfig | None = None,
    noise="bootstrap",
    bootstrap: int = 200,
    workers: int = 1,
) -> SearchResult:
    """Parameters whose joint satisfaction distribution is closest in
    Jensen-Shannon divergence to ``target``. The maximised objective is
    ``-JSD``."""
    names, flist = _formula_list(formulas)
    target = validate_target(target, len(flist))
    space.check_model(model)
    mode, fixed = _noise_mode(noise)
    if mode == "posterior":
        raise ValueError("the posterior noise model applies to likelihoods only; use bootstrap or fixed")
    obj = jsd_objective(target)
    sim = sim or SimConfig(_default_horizon(flist))
    _check_horizon(flist, sim)
    counter = [0]

    def objective(theta):
        seed = _eval_seed(cfg.seed, counter[0])
        counter[0] += 1
        post = smc_sample(model, space.to_dict(theta), flist, cfg.runs, sim, seed, workers=workers)
        if mode == "bootstrap":
            return bootstrap_noise(post.counts, obj, B=bootstrap, seed=seed)
        return NoisyValue(float(obj(predictive(post))[0]), fixed)

    res = gpucb_maximize(objective, space, cfg)
    if -res.best.value > POOR_FIT * math.log(2):
        warnings.warn(
            "poor fit: best JSD %.3g exceeds %g of its maximum log 2" % (-res.best.value, POOR_FIT), RuntimeWarning
        )
    return res


def achieved_distribution(model, formulas, theta, runs, sim: SimConfig, seed: int, workers: int = 1):
    """Predictive joint distribution at ``theta`` from an independent SMC run."""
    _, flist = _formula_list(formulas)
    return predictive(smc_sample(model, theta, flist, runs, sim, seed, workers=workers))


def _default_horizon(formulas: Sequence[Formula]) -> float:
    depth = max(temporal_depth(f) for f in formulas)
    return depth if depth > 0 else 1.0


__all__ = [
    "SearchError",
    "lhs",
    "orthogonal_lhs",
    "ucb_select",
    "local_refine",
    "laplace",
    "LaplaceResult",
    "UcbConfig",
    "TraceEntry",
    "SearchResult",
    "gpucb_maximize",
    "identify",
    "design",
    "achieved_distribution",
    "jsd",
]
