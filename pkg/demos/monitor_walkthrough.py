"""Monitoring temporal-logic formulae on a hand-made trajectory.

The monitor turns each subformula into the set of time points where it
holds, stored as disjoint half-open intervals. A formula holds on the
trajectory if time 0 lies in its signal.

Near the end of the horizon a time window can run past the recorded
trajectory. Eventually is then false and Always vacuously true, which is
why ``G[4,8]`` below also holds on ``[16, 20)``. Only the value at time 0
is meaningful when the horizon covers the formula's time depth.

Run with ``python demos/monitor_walkthrough.py``.
"""

import numpy as np

from mitlearn import Trajectory, format_formula, monitor, parse_formula, signal

# X climbs to 5, stays there a while and falls back; Y switches on late.
times = np.array([0.0, 2.0, 4.0, 9.0, 12.0])
values = np.array([[0, 0], [3, 0], [5, 0], [5, 1], [1, 1]], dtype=float)
traj = Trajectory(times, values, ("X", "Y"), horizon=20.0, integer=True)

symbols = {"X", "Y"}
for text in [
    "X >= 5",
    "F[0,5] (X >= 5)",
    "G[4,8] (X >= 5)",
    "(X > 0) U[0,10] (Y = 1)",
    "F[0,3] G[0,4] (X >= 5)",
    "!(X >= 5) | Y = 1",
]:
    f = parse_formula(text, symbols)
    sig = signal(f, traj)
    spans = ", ".join("[%g, %g)" % iv for iv in sig.intervals) or "never"
    print("%-28s holds at t=0: %-5s  signal: %s" % (format_formula(f), monitor(f, traj), spans))
