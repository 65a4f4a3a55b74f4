"""Trajectory samplers: Gillespie SSA, Euler-Maruyama and hybrid SDE/jump.

For every model a specialised kernel is generated as Python source, with
rates and drifts inlined, and compiled with numba. Kernels draw from a
``numpy.random.Generator``; numba reproduces numpy's streams exactly, so a
``(seed, index)`` pair always yields the same trajectory.
"""

from __future__ import annotations

import hashlib
import importlib.util
import math
import os
import sys
from dataclasses import dataclass
from typing import Mapping

import numba
import numpy as np

from .model import (
    HybridSystem,
    ModelError,
    ReactionNetwork,
    SdeSystem,
    Trajectory,
    bind_parameters,
    to_python,
)

_JIT = os.environ.get("MITLEARN_NOJIT", "") == ""

# kernel exit codes
OK, BAD_RATE, EXPLOSION, NOT_FINITE, NEGATIVE = 0, 1, 2, 3, 4
_REASONS = {
    BAD_RATE: "negative or undefined rate",
    EXPLOSION: "maximum number of events exceeded (explosive chain?)",
    NOT_FINITE: "state became non-finite",
    NEGATIVE: "population became negative",
}


class SimulationError(RuntimeError):
    def __init__(self, message, index=None):
        if index is not None:
            message = "trajectory %d: %s" % (index, message)
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class RngStream:
    """One independent random stream per (master seed, trajectory index)."""

    seed: int
    index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.index,))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    step: float = 0.1
    max_events: int = 10**7

    def __post_init__(self):
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        if not self.step > 0:
            raise ModelError("step must be positive")
        if self.step > self.horizon:
            raise ModelError("step %g exceeds the horizon %g: empty time grid" % (self.step, self.horizon))
        if self.max_events < 1:
            raise ModelError("max_events must be at least 1")


# ---------------------------------------------------------------------------
# code generation

_cache: dict[str, object] = {}


_PRELUDE = "import math\nimport numpy as np\n"


def _kernel_dir():
    root = os.environ.get("MITLEARN_CACHE") or os.path.join(
        os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache"), "mitlearn"
    )
    path = os.path.join(root, "kernels")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError:
        return None
    return path if os.access(path, os.W_OK) else None


def _load_from_file(source: str):
    """Materialise the kernel as a module file so numba can cache the
    machine code on disk; compiling a kernel takes several seconds."""
    where = _kernel_dir()
    if where is None:
        return None
    digest = hashlib.sha256((numba.__version__ + source).encode()).hexdigest()[:24]
    path = os.path.join(where, "k_%s.py" % digest)
    if not os.path.exists(path):
        tmp = "%s.%d.tmp" % (path, os.getpid())
        with open(tmp, "w") as fh:
            fh.write(_PRELUDE + source)
        os.replace(tmp, path)
    modname = "mitlearn_kernel_" + digest
    mod = sys.modules.get(modname)
    if mod is None:
        spec = importlib.util.spec_from_file_location(modname, path)
        mod = importlib.util.module_from_spec(spec)
        sys.modules[modname] = mod
        spec.loader.exec_module(mod)
    return mod.kernel


def _compile(source: str, name: str):
    fn = _cache.get(source)
    if fn is None:
        if _JIT:
            try:
                fn = _load_from_file(source)
            except OSError:
                fn = None
            if fn is not None:
                fn = numba.njit(cache=True)(fn)
        if fn is None:
            ns = {"np": np, "math": math}
            exec(compile(source, "<mitlearn-kernel %s>" % name, "exec"), ns)
            fn = ns["kernel"]
            if _JIT:
                fn = numba.njit(cache=False)(fn)
        _cache[source] = fn
    return fn


_by_model: dict[int, tuple] = {}


def _kernel_for(model, make_source, *args):
    """Compiled kernel for ``model``, memoised on the model object."""
    hit = _by_model.get(id(model))
    if hit is not None and hit[0] is model:
        return hit[1]
    fn = _compile(make_source(model, *args), model.name)
    _by_model[id(model)] = (model, fn)
    return fn


def _lookup(model, state, extra=()):
    table = {}
    for i, s in enumerate(state):
        table[s] = "x[%d]" % i
    for i, s in enumerate(extra):
        table[s] = "m[%d]" % i
    for i, s in enumerate(model.parameters):
        table[s] = "p[%d]" % i
    for s, v in model.constants.items():
        table[s] = "(%r)" % float(v)
    return table


def _ssa_source(net: ReactionNetwork) -> str:
    lk = _lookup(net, net.species)
    props = "\n".join(
        "        a[%d] = %s" % (j, to_python(r.rate, lk)) for j, r in enumerate(net.reactions)
    )
    R = len(net.reactions)
    return f'''
def kernel(rng, x0, p, horizon, max_events, change):
    n = x0.shape[0]
    cap = 256
    times = np.empty(cap)
    states = np.empty((cap, n))
    x = x0.copy()
    times[0] = 0.0
    states[0, :] = x
    k = 1
    a = np.empty({R})
    t = 0.0
    events = 0
    while True:
{props}
        total = 0.0
        for j in range({R}):
            if not (a[j] >= 0.0):
                return times[:k].copy(), states[:k].copy(), 1, j
            total += a[j]
        if total == 0.0:
            break
        if not (total < math.inf):
            return times[:k].copy(), states[:k].copy(), 1, -1
        t += rng.exponential(1.0 / total)
        if t >= horizon:
            break
        u = rng.random() * total
        j = 0
        acc = a[0]
        while (acc <= u or a[j] == 0.0) and j < {R} - 1:
            j += 1
            acc += a[j]
        for i in range(n):
            x[i] += change[j, i]
            if x[i] < 0.0:
                return times[:k].copy(), states[:k].copy(), 4, j
        events += 1
        if events > max_events:
            return times[:k].copy(), states[:k].copy(), 2, -1
        if k == cap:
            cap *= 2
            t2 = np.empty(cap)
            s2 = np.empty((cap, n))
            t2[:k] = times
            s2[:k, :] = states
            times = t2
            states = s2
        times[k] = t
        states[k, :] = x
        k += 1
    return times[:k].copy(), states[:k].copy(), 0, -1
'''


def _em_source(sde: SdeSystem, modes=()) -> str:
    """Euler-Maruyama kernel, with cumulative-hazard mode switching when
    ``modes`` is non-empty."""
    mode_names = tuple(m.name for m in modes)
    lk = _lookup(sde, sde.variables, mode_names)
    n, d, nm = len(sde.variables), len(sde.channels), len(modes)
    lines = []
    for i, m in enumerate(modes):
        lines.append("        if m[%d] > 0.5:" % i)
        lines.append("            r = %s" % to_python(m.off_rate, lk))
        lines.append("        else:")
        lines.append("            r = %s" % to_python(m.on_rate, lk))
        lines.append("        if not (r >= 0.0):")
        lines.append("            return states[:s + 1].copy(), 1, %d" % i)
        lines.append("        H[%d] += r * h" % i)
    for i in range(n):
        terms = ["(%s) * h" % to_python(sde.drift[i], lk)]
        for c in range(d):
            g = sde.diffusion[i][c]
            if g is not None:
                terms.append("(%s) * xi[%d]" % (to_python(g, lk), c))
        lines.append("        dx[%d] = %s" % (i, " + ".join(terms)))
    body = "\n".join(lines)
    return f'''
def kernel(rng, x0, m0, p, h, nsteps):
    n = {n}
    nm = {nm}
    states = np.empty((nsteps + 1, n + nm))
    x = x0.copy()
    m = m0.copy()
    states[0, :n] = x
    states[0, n:] = m
    sq = math.sqrt(h)
    xi = np.empty({d})
    dx = np.empty(n)
    H = np.zeros(nm)
    E = np.empty(nm)
    for i in range(nm):
        E[i] = rng.exponential(1.0)
    for s in range(nsteps):
        for c in range({d}):
            xi[c] = rng.standard_normal() * sq
{body}
        for i in range(n):
            x[i] += dx[i]
            if not (abs(x[i]) < math.inf):
                return states[:s + 1].copy(), 3, i
        for i in range(nm):
            if H[i] > E[i]:
                m[i] = 1.0 - m[i]
                H[i] = 0.0
                E[i] = rng.exponential(1.0)
        states[s + 1, :n] = x
        states[s + 1, n:] = m
    return states, 0, -1
'''


# ---------------------------------------------------------------------------
# samplers


def _raise(code, where, names, index):
    msg = _REASONS[code]
    if where >= 0 and names:
        msg += " (%s)" % names[where]
    raise SimulationError(msg, index)


def ssa_simulate(net: ReactionNetwork, theta: Mapping[str, float], cfg: SimConfig, rng: RngStream) -> Trajectory:
    """Exact Gillespie (direct method) trajectory on ``[0, cfg.horizon]``."""
    p = bind_parameters(net, theta)
    x0 = np.array(net.initial, dtype=float)
    if not net.reactions:
        return Trajectory(np.zeros(1), x0[None, :], net.species, cfg.horizon, integer=True)
    change = np.array([r.change for r in net.reactions], dtype=float)
    kernel = _kernel_for(net, _ssa_source)
    try:
        times, states, code, where = kernel(rng.generator(), x0, p, float(cfg.horizon), int(cfg.max_events), change)
    except ZeroDivisionError:
        raise SimulationError("division by zero in a rate", rng.index) from None
    if code != OK:
        _raise(code, where, [r.name for r in net.reactions], rng.index)
    return Trajectory(times, states, net.species, cfg.horizon, integer=True)


def _grid(cfg: SimConfig):
    nsteps = int(math.floor(cfg.horizon / cfg.step + 1e-9))
    times = np.arange(nsteps + 1) * cfg.step
    times[-1] = min(times[-1], cfg.horizon)
    return nsteps, times


def em_simulate(sde: SdeSystem, theta: Mapping[str, float], cfg: SimConfig, rng: RngStream) -> Trajectory:
    """Euler-Maruyama samples on the grid ``0, h, 2h, ...``, held constant
    between grid points."""
    if sde.extra_symbols:
        raise ModelError("SDE references mode states; simulate the hybrid system instead")
    p = bind_parameters(sde, theta)
    nsteps, times = _grid(cfg)
    kernel = _kernel_for(sde, _em_source)
    x0 = np.array(sde.initial, dtype=float)
    try:
        states, code, where = kernel(rng.generator(), x0, np.zeros(0), p, float(cfg.step), nsteps)
    except ZeroDivisionError:
        raise SimulationError("division by zero in drift or diffusion", rng.index) from None
    if code != OK:
        _raise(code, where, sde.variables, rng.index)
    return Trajectory(times, states, sde.variables, cfg.horizon)


def shs_simulate(hs: HybridSystem, theta: Mapping[str, float], cfg: SimConfig, rng: RngStream) -> Trajectory:
    """Hybrid trajectory: Euler-Maruyama for the continuous part, modes
    flipping when their integrated hazard passes an Exp(1) threshold.

    Mode values are appended to the continuous state in the trajectory.
    """
    sde = hs.continuous
    p = bind_parameters(sde, theta)
    nsteps, times = _grid(cfg)
    kernel = _kernel_for(hs, lambda h: _em_source(h.continuous, h.modes))
    x0 = np.array(sde.initial, dtype=float)
    m0 = np.array([m.initial for m in hs.modes], dtype=float)
    try:
        states, code, where = kernel(rng.generator(), x0, m0, p, float(cfg.step), nsteps)
    except ZeroDivisionError:
        raise SimulationError("division by zero in a rate, drift or diffusion", rng.index) from None
    if code != OK:
        names = [m.name for m in hs.modes] if code == BAD_RATE else list(sde.variables)
        _raise(code, where, names, rng.index)
    return Trajectory(times, states, hs.state_names, cfg.horizon)


def simulate(model, theta: Mapping[str, float], cfg: SimConfig, rng: RngStream) -> Trajectory:
    """Dispatch on the model class."""
    if isinstance(model, ReactionNetwork):
        return ssa_simulate(model, theta, cfg, rng)
    if isinstance(model, HybridSystem):
        return shs_simulate(model, theta, cfg, rng)
    if isinstance(model, SdeSystem):
        return em_simulate(model, theta, cfg, rng)
    raise TypeError("unknown model type %r" % type(model).__name__)
