"""Recovering the rates of a rumour-spreading chain from yes/no data.

We only observe whether each of 40 runs satisfied four temporal-logic
properties (a peak window, an extinction window, a bound on the number of
spreaders and the final share of repressors). GP-UCB searches for the
rates that make those observations most likely, once without priors and
once with Gamma priors. Takes one to two minutes.

Run with ``python demos/rumour_identify.py``.
"""

import warnings
from importlib.resources import files

from mitlearn import (
    SimConfig,
    UcbConfig,
    identify,
    parse_model,
    parse_priors,
    parse_properties,
    parse_space,
)
from mitlearn.smc import outcome_bits, sample_observations

DATA = files("mitlearn") / "data"
TRUE = {"ks": 1.0, "kr": 0.8}

model = parse_model((DATA / "rumour.model").read_text())
props = parse_properties((DATA / "rumour.props").read_text(), model)
space = parse_space((DATA / "rumour.space").read_text())
priors = parse_priors((DATA / "rumour.priors").read_text())
sim = SimConfig(200.0)

obs = sample_observations(model, TRUE, props, 40, sim, seed=1000)
counts = obs.counts()
print("observed outcome counts (%s):" % " ".join(props))
for i, c in enumerate(counts):
    if c:
        print("  %s  %d" % (outcome_bits(i, len(props)), c))

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    for label, pri in (("ML", None), ("MAP", priors)):
        res = identify(model, props, obs, space, pri, UcbConfig(runs=500, seed=0), sim)
        est = "  ".join("%s=%.3f+-%.3f" % (n, v, s) for n, v, s in zip(res.names, res.theta, res.std))
        print("%-3s %s  (%d extra evaluations)" % (label, est, res.extra_evaluations))
print("true  " + "  ".join("%s=%.3f" % kv for kv in TRUE.items()))
