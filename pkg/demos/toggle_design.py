"""Designing a genetic toggle switch with a fair coin-flip outcome.

The toggle switch is a hybrid model: two promoters flip on and off at
rates that depend on protein levels, and the proteins follow a diffusion.
We ask for parameters under which the cell commits to "X1 high" or
"X1 low" with equal probability and almost never does both or neither.
The search minimises the Jensen-Shannon divergence between that target
and the simulated outcome distribution. Takes about two minutes.

Run with ``python demos/toggle_design.py``.
"""

import warnings
from importlib.resources import files

from mitlearn import SimConfig, UcbConfig, design, jsd, parse_model, parse_properties, parse_space
from mitlearn.search import achieved_distribution
from mitlearn.smc import read_target

DATA = files("mitlearn") / "data"

model = parse_model((DATA / "toggle.model").read_text())
props = parse_properties((DATA / "toggle_short.props").read_text(), model)
space = parse_space((DATA / "toggle_design.space").read_text())
target = read_target(DATA / "toggle_design.target", len(props))
sim = SimConfig(2000.0, 0.1)

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    res = design(model, props, target, space, UcbConfig(n_init=96, n_grid=1024, runs=300, seed=0), sim)

print("design:", ", ".join("%s=%.4g" % kv for kv in res.best_dict.items()))
# judge the design on fresh simulations
q = achieved_distribution(model, props, space.to_dict(res.theta), 300, sim, seed=12345)
print("outcomes (%s): target %s, achieved %s" % (" ".join(props), target.round(3), q.round(3)))
print("JSD %.4f (maximum possible %.4f)" % (jsd(target, q), 0.6931))
