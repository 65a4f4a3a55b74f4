"""GP-UCB on a cheap, noisy one-dimensional function.

The objective is a bumpy curve observed with Gaussian noise of known
size. The search starts from a small Latin hypercube design, then adds
points where mean plus beta times standard deviation is largest, and
stops once that bound no longer beats what has been seen.

Run with ``python demos/gpucb_toy.py``.
"""

import numpy as np

from mitlearn import Axis, NoisyValue, ParameterSpace, UcbConfig, gpucb_maximize

rng = np.random.default_rng(0)
NOISE = 0.05


def f(x):
    return np.sin(3 * x) + 0.5 * np.cos(7 * x) - 0.1 * x**2


def objective(theta):
    return NoisyValue(float(f(theta[0]) + NOISE * rng.normal()), NOISE)


space = ParameterSpace((Axis("x", -3.0, 3.0, "linear"),))
res = gpucb_maximize(objective, space, UcbConfig(n_init=16, n_grid=200, seed=3))

grid = np.linspace(-3, 3, 20001)
best = grid[np.argmax(f(grid))]
print("true maximiser %.4f, found %.4f after %d evaluations (%d beyond the initial design)"
      % (best, res.theta[0], res.evaluations, res.extra_evaluations))
print("GP hyperparameters: amplitude %.3f, lengthscale %.3f" % (res.kernel.amplitude, res.kernel.lengthscale))
for e in res.trace[16:]:
    print("  iteration %2d  x=%+.4f  y=%+.4f" % (e.iteration, e.theta[0], e.value))
