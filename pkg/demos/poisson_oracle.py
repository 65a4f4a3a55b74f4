"""Poisson counter: a model whose answers are known in closed form.

A counter X jumps by one at rate mu. The probability that it passes 3
within one time unit is one minus the Poisson cdf at 3, so both the
statistical model checker and the parameter search can be compared with
exact values.

Run with ``python demos/poisson_oracle.py``.
"""

import math
from importlib.resources import files

from scipy.optimize import brentq

from mitlearn import SimConfig, UcbConfig, identify, parse_model, parse_properties, parse_space
from mitlearn.smc import predictive, sample_observations, smc_sample

DATA = files("mitlearn") / "data"


def exact(mu):
    return 1 - math.exp(-mu) * (1 + mu + mu**2 / 2 + mu**3 / 6)


model = parse_model((DATA / "poisson.model").read_text())
props = parse_properties((DATA / "poisson.props").read_text(), model)
space = parse_space((DATA / "poisson.space").read_text())
sim = SimConfig(1.0)

# Statistical model checking at a few rates.
for mu in (1.0, 2.0, 3.0):
    post = smc_sample(model, {"mu": mu}, list(props.values()), 10_000, sim, seed=1)
    print("mu=%.1f  estimate %.4f  exact %.4f" % (mu, predictive(post)[1], exact(mu)))

# Forty observed runs at mu=2. The likelihood peaks where the
# satisfaction probability equals the observed fraction.
obs = sample_observations(model, {"mu": 2.0}, props, 40, sim, seed=5)
k = int(obs.truth.sum())
target = brentq(lambda m: exact(m) - k / 40, 1e-3, 20)
res = identify(model, props, obs, space, cfg=UcbConfig(n_init=16, n_grid=100, runs=1000, seed=5), sim=sim)
print("%d/40 runs satisfied the property" % k)
print("analytic argmax %.3f, GP-UCB estimate %.3f +- %.3f (%d evaluations)"
      % (target, res.theta[0], res.std[0], res.evaluations))
