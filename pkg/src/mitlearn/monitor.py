"""Offline MiTL monitoring with boolean signals.

A signal is a finite union of disjoint, non-adjacent half-open intervals
``[l, u)`` inside ``[0, T)``. Formulae are evaluated bottom-up on their
desugared form and satisfaction is read off at time 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import os

import numba
import numpy as np

from .lang import (
    And,
    Atomic,
    Formula,
    Not,
    TrueF,
    Until,
    desugar,
    temporal_depth,
)
from .model import Trajectory, to_python

EQ_TOL = 1e-9
_JIT = os.environ.get("MITLEARN_NOJIT", "") == ""


class MonitorError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BooleanSignal:
    starts: np.ndarray
    ends: np.ndarray
    horizon: float

    @classmethod
    def from_intervals(cls, intervals, horizon) -> "BooleanSignal":
        arr = np.asarray(list(intervals), dtype=float).reshape(-1, 2)
        return _normalize(arr[:, 0], arr[:, 1], horizon)

    @classmethod
    def full(cls, horizon) -> "BooleanSignal":
        return cls(np.array([0.0]), np.array([float(horizon)]), float(horizon))

    @classmethod
    def empty(cls, horizon) -> "BooleanSignal":
        return cls(np.zeros(0), np.zeros(0), float(horizon))

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.starts.tolist(), self.ends.tolist()))

    def __contains__(self, t) -> bool:
        i = np.searchsorted(self.starts, t, side="right") - 1
        return bool(i >= 0 and t < self.ends[i])

    def __eq__(self, other):
        if not isinstance(other, BooleanSignal):
            return NotImplemented
        return (
            self.horizon == other.horizon
            and np.array_equal(self.starts, other.starts)
            and np.array_equal(self.ends, other.ends)
        )

    def __repr__(self):
        return "BooleanSignal(%s, T=%g)" % (self.intervals, self.horizon)


def _maybe_jit(fn):
    return numba.njit(cache=True)(fn) if _JIT else fn


@_maybe_jit
def _merge(starts, ends, horizon):
    """Clip to ``[0, T)``, drop empty pieces, sort and merge overlapping or
    touching intervals."""
    n = starts.shape[0]
    s = np.empty(n)
    e = np.empty(n)
    k = 0
    for i in range(n):
        lo = max(starts[i], 0.0)
        hi = min(ends[i], horizon)
        if lo < hi:
            s[k] = lo
            e[k] = hi
            k += 1
    s = s[:k]
    e = e[:k]
    sorted_ = True
    for i in range(1, k):
        if s[i] < s[i - 1]:
            sorted_ = False
            break
    if not sorted_:
        order = np.argsort(s, kind="mergesort")
        s = s[order]
        e = e[order]
    os_ = np.empty(k)
    oe = np.empty(k)
    m = 0
    for i in range(k):
        if m > 0 and s[i] <= oe[m - 1]:
            if e[i] > oe[m - 1]:
                oe[m - 1] = e[i]
        else:
            os_[m] = s[i]
            oe[m] = e[i]
            m += 1
    return os_[:m].copy(), oe[:m].copy()


@_maybe_jit
def _complement(starts, ends, horizon):
    n = starts.shape[0]
    s = np.empty(n + 1)
    e = np.empty(n + 1)
    k = 0
    prev = 0.0
    for i in range(n):
        if starts[i] > prev:
            s[k] = prev
            e[k] = starts[i]
            k += 1
        prev = ends[i]
    if prev < horizon:
        s[k] = prev
        e[k] = horizon
        k += 1
    return s[:k].copy(), e[:k].copy()


@_maybe_jit
def _intersect(s1, e1, s2, e2, horizon):
    n1 = s1.shape[0]
    n2 = s2.shape[0]
    s = np.empty(n1 + n2)
    e = np.empty(n1 + n2)
    i = 0
    j = 0
    k = 0
    while i < n1 and j < n2:
        lo = max(s1[i], s2[j])
        hi = min(e1[i], e2[j])
        if lo < hi:
            s[k] = lo
            e[k] = hi
            k += 1
        if e1[i] < e2[j]:
            i += 1
        else:
            j += 1
    return _merge(s[:k], e[:k], horizon)


@_maybe_jit
def _until(s1, e1, s2, e2, lo, hi, horizon):
    bs, be = _intersect(s1, e1, s2, e2, horizon)
    n = bs.shape[0]
    s = np.empty(n)
    e = np.empty(n)
    j = 0
    for i in range(n):
        # owner: the maximal interval of the left operand containing bs[i]
        while e1[j] <= bs[i]:
            j += 1
        s[i] = max(s1[j], bs[i] - hi)
        e[i] = min(e1[j], be[i] - lo)
    return _merge(s, e, horizon)


@_maybe_jit
def _runs(times, truth, horizon):
    """Intervals on which a piecewise-constant boolean sample is true."""
    n = truth.shape[0]
    s = np.empty(n)
    e = np.empty(n)
    k = 0
    i = 0
    while i < n:
        if truth[i]:
            j = i
            while j + 1 < n and truth[j + 1]:
                j += 1
            s[k] = times[i]
            e[k] = times[j + 1] if j + 1 < n else horizon
            k += 1
            i = j + 1
        else:
            i += 1
    return _merge(s[:k], e[:k], horizon)


def _normalize(starts, ends, horizon) -> BooleanSignal:
    s, e = _merge(np.asarray(starts, dtype=float), np.asarray(ends, dtype=float), float(horizon))
    return BooleanSignal(s, e, float(horizon))


def _check(s1, s2):
    if s1.horizon != s2.horizon:
        raise MonitorError("signals have different horizons (%g, %g)" % (s1.horizon, s2.horizon))


def sig_not(s: BooleanSignal) -> BooleanSignal:
    return BooleanSignal(*_complement(s.starts, s.ends, s.horizon), s.horizon)


def sig_and(s1: BooleanSignal, s2: BooleanSignal) -> BooleanSignal:
    _check(s1, s2)
    return BooleanSignal(*_intersect(s1.starts, s1.ends, s2.starts, s2.ends, s1.horizon), s1.horizon)


def sig_or(s1: BooleanSignal, s2: BooleanSignal) -> BooleanSignal:
    _check(s1, s2)
    return _normalize(np.concatenate([s1.starts, s2.starts]), np.concatenate([s1.ends, s2.ends]), s1.horizon)


def _check_bounds(lo, hi):
    if not 0 <= lo < hi:
        raise MonitorError("until bounds must satisfy 0 <= lo < hi, got [%g, %g]" % (lo, hi))


def sig_until(s1: BooleanSignal, s2: BooleanSignal, lo: float, hi: float) -> BooleanSignal:
    """Timed until: ``t`` holds iff some ``t1`` in ``[t+lo, t+hi]`` satisfies
    both operands and the left operand holds throughout ``[t, t1]``.

    Each maximal piece ``K = [a, b)`` of ``s1 & s2`` lies in exactly one
    maximal interval ``I = [l, u)`` of ``s1`` and contributes
    ``[max(l, a - hi), min(u, b - lo))``.
    """
    _check(s1, s2)
    _check_bounds(lo, hi)
    s, e = _until(s1.starts, s1.ends, s2.starts, s2.ends, float(lo), float(hi), s1.horizon)
    return BooleanSignal(s, e, s1.horizon)


# ---------------------------------------------------------------------------
# atoms

_atom_cache: dict[tuple, object] = {}


def _atom_function(atom: Atomic, names: tuple[str, ...], constants):
    key = (atom, names, tuple(sorted(constants.items())))
    fn = _atom_cache.get(key)
    if fn is None:
        lookup = {n: "X[:, %d]" % i for i, n in enumerate(names)}
        lookup.update({n: "(%r)" % float(v) for n, v in constants.items() if n not in lookup})
        left = to_python(atom.left, lookup, lib="np")
        right = to_python(atom.right, lookup, lib="np")
        src = "lambda X, n: (np.zeros(n) + (%s), np.zeros(n) + (%s))" % (left, right)
        fn = eval(src, {"np": np})
        _atom_cache[key] = fn
    return fn


def atomic_signal(traj: Trajectory, atom: Atomic, constants=None) -> BooleanSignal:
    """Evaluate a comparison on every segment of a piecewise-constant
    trajectory and merge the true segments.

    ``=`` is exact on integer-valued (CTMC) trajectories and holds within
    ``1e-9`` on continuous ones.
    """
    constants = constants or {}
    try:
        fn = _atom_function(atom, traj.names, constants)
    except KeyError as exc:
        raise MonitorError("atom references unknown name %s" % exc) from None
    with np.errstate(all="ignore"):
        left, right = fn(traj.values, len(traj.times))
        if atom.op == "<":
            truth = left < right
        elif atom.op == "<=":
            truth = left <= right
        elif atom.op == ">":
            truth = left > right
        elif atom.op == ">=":
            truth = left >= right
        elif atom.op == "=":
            truth = left == right if traj.integer else np.abs(left - right) <= EQ_TOL
        else:
            raise MonitorError("unknown comparison %r" % atom.op)
    s, e = _runs(traj.times, np.ascontiguousarray(truth), float(traj.horizon))
    return BooleanSignal(s, e, float(traj.horizon))


# ---------------------------------------------------------------------------
# formulae


def signal(f: Formula, traj: Trajectory, constants=None) -> BooleanSignal:
    """Full satisfaction signal of ``f`` (any syntax, desugared here)."""
    T = float(traj.horizon)
    s, e = _signal(_desugared(f), traj, constants or {}, T)
    return BooleanSignal(s, e, T)


_desugar_cache: dict = {}


def _desugared(f):
    g = _desugar_cache.get(f)
    if g is None:
        g = _desugar_cache[f] = desugar(f)
    return g


def _signal(f, traj, constants, T):
    if isinstance(f, TrueF):
        return np.array([0.0]), np.array([T])
    if isinstance(f, Atomic):
        sig = atomic_signal(traj, f, constants)
        return sig.starts, sig.ends
    if isinstance(f, Not):
        return _complement(*_signal(f.sub, traj, constants, T), T)
    if isinstance(f, And):
        return _intersect(*_signal(f.left, traj, constants, T), *_signal(f.right, traj, constants, T), T)
    if isinstance(f, Until):
        _check_bounds(f.lo, f.hi)
        return _until(
            *_signal(f.left, traj, constants, T), *_signal(f.right, traj, constants, T), float(f.lo), float(f.hi), T
        )
    raise TypeError("unexpected node %r" % (f,))


def monitor(f: Formula, traj: Trajectory, constants=None) -> bool:
    """Whether ``traj`` satisfies ``f`` at time 0.

    Raises ``MonitorError`` if the trajectory is shorter than the time
    window the formula needs.
    """
    depth = temporal_depth(f)
    if depth > traj.horizon:
        raise MonitorError("horizon %g is shorter than the formula's time depth %g" % (traj.horizon, depth))
    return 0.0 in signal(f, traj, constants)
