import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mitlearn.lang import Always, And, Atomic, Eventually, Not, Or, TrueF, Until, parse_formula
from mitlearn.model import Const, Trajectory, Var
from mitlearn.monitor import (
    BooleanSignal,
    MonitorError,
    atomic_signal,
    monitor,
    sig_and,
    sig_not,
    sig_or,
    sig_until,
    signal,
)

from .oracle import BruteForce
from .strategies import NAMES, formulas, int_atoms, step_trajectories


def traj(times, xs, horizon, name="X", integer=True):
    return Trajectory(np.asarray(times, float), np.asarray(xs, float).reshape(-1, 1), (name,), float(horizon), integer)


def gt(c, name="X"):
    return Atomic(">", Var(name), Const(float(c)))


def iv(*pairs):
    return [tuple(map(float, p)) for p in pairs]


def test_constant_atom():
    assert atomic_signal(traj([0], [5], 200), Atomic("<", Var("X"), Const(45.0))).intervals == iv((0, 200))


def test_step_atom():
    assert atomic_signal(traj([0, 0.5], [0, 4], 2), gt(3)).intervals == iv((0.5, 2))


def test_equal_neighbours_merge():
    assert atomic_signal(traj([0, 1], [5, 5], 2), gt(3)).intervals == iv((0, 2))


def test_continuous_equality_uses_tolerance():
    tr = traj([0, 1], [1e-12, 0.5], 2, integer=False)
    assert atomic_signal(tr, Atomic("=", Var("X"), Const(0.0))).intervals == iv((0, 1))
    tr = traj([0, 1], [1e-6, 0.5], 2, integer=False)
    assert atomic_signal(tr, Atomic("=", Var("X"), Const(0.0))).intervals == []


def test_not_full_is_empty():
    assert sig_not(BooleanSignal.full(5.0)).intervals == []


def test_and_intersects():
    s = sig_and(BooleanSignal.from_intervals([(0, 2)], 4), BooleanSignal.from_intervals([(1, 3)], 4))
    assert s.intervals == iv((1, 2))


def test_or_merges_adjacent():
    s = sig_or(BooleanSignal.from_intervals([(0, 1)], 4), BooleanSignal.from_intervals([(1, 2)], 4))
    assert s.intervals == iv((0, 2))


def test_from_intervals_normalizes():
    s = BooleanSignal.from_intervals([(3, 5), (0, 1), (0.5, 2), (4, 4)], 4)
    assert s.intervals == iv((0, 2), (3, 4))


def test_until_hand_example():
    s1 = BooleanSignal.from_intervals([(0, 1.5)], 4)
    s2 = BooleanSignal.from_intervals([(1.4, 3)], 4)
    out = sig_until(s1, s2, 1.0, 2.0)
    assert 0.0 in out
    assert out.intervals[0] == (0.0, 0.5)


def test_until_with_empty_left():
    s2 = BooleanSignal.from_intervals([(1, 3)], 4)
    assert sig_until(BooleanSignal.empty(4), s2, 0, 1).intervals == []


def test_until_with_full_right():
    s1 = BooleanSignal.from_intervals([(0, 2), (3, 6)], 8)
    out = sig_until(s1, BooleanSignal.full(8), 1, 2)
    # a witness one unit ahead must still lie inside the same run of s1
    assert out.intervals == iv((0, 1), (3, 5))


def test_until_bounds_checked():
    s = BooleanSignal.full(4)
    with pytest.raises(MonitorError):
        sig_until(s, s, 2, 1)


def test_horizon_mismatch():
    with pytest.raises(MonitorError):
        sig_and(BooleanSignal.full(1), BooleanSignal.full(2))


def test_short_trajectory_rejected():
    with pytest.raises(MonitorError, match="shorter"):
        monitor(Eventually(0, 5, TrueF()), traj([0], [1], 2))


def test_true_holds():
    assert monitor(TrueF(), traj([0, 1], [3, 7], 2))


def test_rumour_bounded(rumour):
    m, props = rumour[0], rumour[1]
    times = [0, 10, 20, 30, 60, 70]
    S = [1, 20, 40, 25, 5, 0]
    tr = Trajectory(
        np.array(times, float),
        np.column_stack([[99 - s for s in S], S, [0] * 6]).astype(float),
        ("I", "S", "R"),
        200.0,
        True,
    )
    assert monitor(props["bounded"], tr, m.constants)
    assert monitor(props["extinction"], tr, m.constants)
    # S = 40 on [20, 30) overlaps the peak window
    assert monitor(props["peak"], tr, m.constants)
    early = Trajectory(tr.times - np.r_[0, 9, 9, 9, 9, 9], tr.values, tr.names, 200.0, True)
    assert not monitor(props["peak"], early, m.constants)


def test_extinction_too_early(rumour):
    m, props = rumour[0], rumour[1]
    tr = Trajectory(np.array([0.0, 50.0]), np.array([[99, 1, 0], [0, 0, 100]], float), ("I", "S", "R"), 200.0, True)
    assert not monitor(props["extinction"], tr, m.constants)


def test_constants_in_atoms():
    tr = traj([0, 1], [0, 50], 3, name="S")
    f = parse_formula("F[0,2] (S > N / 4)", {"S", "N"})
    assert monitor(f, tr, {"N": 100.0})
    assert not monitor(f, tr, {"N": 400.0})


# -- oracle equivalence -------------------------------------------------------

pairs = st.tuples(step_trajectories(horizon=20), formulas(int_atoms, max_leaves=5, max_bound=5))


def _depth_ok(f):
    from mitlearn.lang import temporal_depth

    return temporal_depth(f) <= 20


def _agree(tr, f):
    bf = BruteForce(tr)
    sig = signal(f, tr)
    for t in bf.probe_points():
        assert (t in sig) == bf.holds(f, t), (f, t, sig)
    assert monitor(f, tr) == bf.holds(f, 0.0)


@settings(max_examples=300, deadline=None)
@given(pairs)
def test_signal_matches_brute_force(pair):
    tr, f = pair
    if _depth_ok(f):
        _agree(tr, f)


def test_oracle_regressions():
    # closed-left window: the left operand must hold at t itself
    tr = Trajectory(np.array([0.0, 1.0]), np.array([[0.0, 1.0], [1.0, 1.0]]), NAMES, 4.0, True)
    _agree(tr, Until(1, 2, gt(0), gt(0, "Y")))
    # the left operand must also hold at the witness
    _agree(tr, Until(0, 2, Not(gt(0)), gt(0)))


@settings(max_examples=200, deadline=None)
@given(pairs, formulas(int_atoms, max_leaves=3, max_bound=4))
def test_de_morgan(pair, g):
    tr, f = pair
    if _depth_ok(f) and _depth_ok(g):
        assert signal(Not(And(f, g)), tr) == signal(Or(Not(f), Not(g)), tr)


@settings(max_examples=200, deadline=None)
@given(step_trajectories(horizon=20), formulas(int_atoms, max_leaves=3, max_bound=4), st.integers(0, 5), st.integers(1, 5))
def test_derived_operators(tr, f, a, w):
    b = a + w
    assert signal(Eventually(a, b, f), tr) == signal(Until(a, b, TrueF(), f), tr)
    assert signal(Always(a, b, f), tr) == signal(Not(Eventually(a, b, Not(f))), tr)
    # and against the oracle directly
    bf = BruteForce(tr)
    sig = signal(Eventually(a, b, f), tr)
    for t in bf.probe_points():
        assert (t in sig) == bf.holds(Until(a, b, TrueF(), f), t)


@settings(max_examples=200, deadline=None)
@given(step_trajectories(horizon=20), formulas(int_atoms, max_leaves=4, max_bound=4))
def test_signals_are_maximal(tr, f):
    s = signal(f, tr)
    assert np.all(s.starts < s.ends)
    assert np.all(s.ends[:-1] < s.starts[1:])
    assert np.all(s.starts >= 0) and np.all(s.ends <= s.horizon)
