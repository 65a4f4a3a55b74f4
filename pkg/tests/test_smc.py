import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mitlearn.lang import GammaPrior, Not, parse_formula
from mitlearn.sim import SimConfig
from mitlearn.smc import (
    DesignMatrix,
    NoisyValue,
    bootstrap_noise,
    dirichlet_posterior,
    jsd,
    jsd_objective,
    log_likelihood,
    log_posterior,
    log_prior,
    loglik_objective,
    outcome_index,
    posterior_moments,
    posterior_noise,
    predictive,
    read_target,
    smc_sample,
    validate_target,
    write_target,
)

P2 = 1 - math.exp(-2) * (1 + 2 + 2 + 4 / 3)

probabilities = st.integers(1, 3).flatmap(
    lambda d: st.lists(st.floats(0, 1), min_size=2**d, max_size=2**d).filter(lambda v: sum(v) > 1e-6)
).map(lambda v: np.array(v) / np.sum(v))


def test_outcome_index_msb_first():
    assert outcome_index([True, False]) == 2
    assert outcome_index([False, True, True]) == 3


def test_poisson_marginal(poisson):
    m, props = poisson
    post = smc_sample(m, {"mu": 2.0}, list(props.values()), 10_000, SimConfig(1.0), seed=11)
    assert abs(predictive(post)[1] - P2) < 0.01
    assert post.alpha.sum() == 2 + 10_000


def test_zero_runs_rejected(poisson):
    m, props = poisson
    with pytest.raises(ValueError):
        smc_sample(m, {"mu": 2.0}, list(props.values()), 0, SimConfig(1.0), seed=0)


def test_single_run(poisson):
    m, props = poisson
    post = smc_sample(m, {"mu": 2.0}, list(props.values()), 1, SimConfig(1.0), seed=0)
    assert sorted(post.alpha.tolist()) == [1.0, 2.0]


def test_contradictory_outcomes_keep_prior(poisson):
    m, props = poisson
    f = props["above3"]
    post = smc_sample(m, {"mu": 2.0}, [f, Not(f)], 300, SimConfig(1.0), seed=3)
    # outcomes 00 and 11 are impossible
    assert post.alpha[0] == 1.0 and post.alpha[3] == 1.0
    assert post.counts.sum() == 300


def test_reproducible_and_worker_independent(poisson):
    m, props = poisson
    f = list(props.values())
    a = smc_sample(m, {"mu": 2.5}, f, 400, SimConfig(1.0), seed=9)
    b = smc_sample(m, {"mu": 2.5}, f, 400, SimConfig(1.0), seed=9)
    c = smc_sample(m, {"mu": 2.5}, f, 400, SimConfig(1.0), seed=9, workers=2)
    assert a.counts.tobytes() == b.counts.tobytes() == c.counts.tobytes()


def test_horizon_must_cover_formulae(poisson):
    m, props = poisson
    with pytest.raises(ValueError, match="shorter"):
        smc_sample(m, {"mu": 2.0}, list(props.values()), 5, SimConfig(0.5), seed=0)


def test_predictive_hand_example():
    q = predictive(dirichlet_posterior([3, 7]))
    assert q == pytest.approx([4 / 12, 8 / 12])


def test_predictive_prior_only():
    assert predictive(dirichlet_posterior(np.zeros(4))).tolist() == [0.25] * 4


def test_predictive_regularizes():
    q = predictive(dirichlet_posterior([0, 10**6]))
    assert 0 < q[0] < 1.01e-6
    assert q[1] == pytest.approx(1 - 1e-6, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=2, max_size=16).filter(lambda v: (len(v) & (len(v) - 1)) == 0))
def test_predictive_normalized(counts):
    q = predictive(dirichlet_posterior(counts))
    assert abs(q.sum() - 1) <= 1e-12
    assert np.all(q > 0)


def test_log_likelihood_examples():
    assert log_likelihood([2, 1], [0.5, 0.5]) == pytest.approx(3 * math.log(0.5))
    assert log_likelihood([0, 5], [0.0, 1.0]) == 0.0
    assert log_likelihood([4, 6], [1 - P2, P2]) == pytest.approx(6 * math.log(P2) + 4 * math.log(1 - P2))


def test_log_likelihood_from_design_matrix():
    D = DesignMatrix(("a", "b"), np.array([[1, 0], [1, 1], [0, 0], [1, 0]], bool))
    assert D.counts().tolist() == [1, 0, 2, 1]
    q = np.array([0.1, 0.2, 0.3, 0.4])
    assert log_likelihood(D, q) == pytest.approx(math.log(0.1) + 2 * math.log(0.3) + math.log(0.4))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 3), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_log_likelihood_column_permutation(d, n, seed):
    rng = np.random.default_rng(seed)
    truth = rng.random((n, d)) < 0.5
    q = rng.dirichlet(np.ones(2**d))
    D1 = DesignMatrix(tuple("abc"[:d]), truth)
    D2 = DesignMatrix(tuple("abc"[:d]), truth[rng.permutation(n)])
    assert log_likelihood(D1, q) == pytest.approx(log_likelihood(D2, q), rel=1e-12)


def test_gamma_log_prior_matches_reference():
    lp = log_prior({"ks": 1.0}, {"ks": GammaPrior(10, 1.0)})
    assert lp == pytest.approx(-10 + 10 * math.log(10) - math.lgamma(10))
    assert lp == pytest.approx(stats.gamma.logpdf(1.0, a=10, scale=0.1))


def test_log_posterior_without_priors_is_likelihood():
    assert log_posterior([2, 1], [0.3, 0.7], {"k": 1.0}) == log_likelihood([2, 1], [0.3, 0.7])


def test_jsd_examples():
    assert jsd([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert jsd([1, 0], [0, 1]) == pytest.approx(math.log(2))
    assert jsd([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.03382, abs=1e-5)


@settings(max_examples=300, deadline=None)
@given(probabilities, st.data())
def test_jsd_properties(p, data):
    q = np.array(data.draw(st.lists(st.floats(0, 1), min_size=len(p), max_size=len(p)).filter(lambda v: sum(v) > 1e-6)))
    q = q / q.sum()
    assert jsd(p, q) == jsd(q, p)
    assert 0.0 <= jsd(p, q) <= math.log(2) + 1e-12
    assert jsd(p, p) == 0.0


def test_bootstrap_degenerate_counts():
    v = bootstrap_noise([0, 500], loglik_objective([3, 7]), B=200, seed=0)
    assert v.std < 1e-12


def test_bootstrap_minimum_resamples():
    v = bootstrap_noise([40, 60], loglik_objective([3, 7]), B=2, seed=1)
    assert np.isfinite(v.std)
    with pytest.raises(ValueError):
        bootstrap_noise([40, 60], loglik_objective([3, 7]), B=1)


def test_bootstrap_scales_with_runs():
    # away from the likelihood maximum, where the spread is first order
    p = np.array([0.5, 0.5])
    obj = loglik_objective([12, 28])
    rng = np.random.default_rng(0)
    small = [bootstrap_noise(rng.multinomial(500, p), obj, seed=s).std for s in range(30)]
    large = [bootstrap_noise(rng.multinomial(2000, p), obj, seed=s).std for s in range(30)]
    assert np.mean(large) / np.mean(small) == pytest.approx(0.5, rel=0.1)


def test_bootstrap_for_jsd():
    v = bootstrap_noise([100, 300], jsd_objective([0.5, 0.5]), B=100, seed=2)
    assert v.value == pytest.approx(-jsd([0.5, 0.5], predictive(dirichlet_posterior([100, 300]))))
    assert v.std > 0


def test_posterior_noise_empty_data():
    v = posterior_noise(dirichlet_posterior([5, 9]), [0, 0])
    assert v == NoisyValue(0.0, 0.0)


def test_posterior_moments_hand_example():
    post = dirichlet_posterior([1, 1])  # alpha + k = (2, 2)
    log_m, log_v = posterior_moments(post, [1, 0])
    assert math.exp(log_m) == pytest.approx(0.5)
    assert math.exp(log_v) == pytest.approx(0.05)


def test_posterior_noise_small_spread_limit():
    post = dirichlet_posterior([3000, 7000])
    log_m, log_v = posterior_moments(post, [3, 7])
    delta = math.exp(0.5 * log_v - log_m)
    assert posterior_noise(post, [3, 7]).std == pytest.approx(delta, rel=1e-3)


def test_posterior_noise_no_overflow():
    post = dirichlet_posterior(np.r_[[10**6] * 8])
    v = posterior_noise(post, [500] * 8)
    assert np.isfinite(v.value) and np.isfinite(v.std)


@pytest.mark.parametrize("case", range(12))
def test_posterior_mean_matches_monte_carlo(case):
    rng = np.random.default_rng(100 + case)
    d = 1 + case % 2
    counts = rng.integers(0, 21, 2**d)
    h = rng.integers(0, 4, 2**d)
    post = dirichlet_posterior(counts)
    q = rng.dirichlet(post.alpha, size=100_000)
    mc = np.mean(np.prod(q**h, axis=1))
    assert math.exp(posterior_moments(post, h)[0]) == pytest.approx(mc, rel=0.01)


def test_target_validation(tmp_path):
    assert validate_target([0.25] * 4, 2).sum() == 1
    with pytest.raises(ValueError, match="sum"):
        validate_target([0.3, 0.3])
    with pytest.raises(ValueError, match="2\\^d"):
        validate_target([0.5, 0.25, 0.25])
    with pytest.raises(ValueError):
        validate_target([0.5, 0.5], 2)
    path = tmp_path / "t.csv"
    write_target(path, [0.1, 0.2, 0.3, 0.4])
    assert read_target(path, 2).tolist() == [0.1, 0.2, 0.3, 0.4]


def test_shipped_target():
    from .conftest import data_path

    assert read_target(data_path("toggle_design.target"), 2).tolist() == [0, 0.5, 0.5, 0]


def test_design_matrix_csv(tmp_path):
    D = DesignMatrix(("a", "b"), np.array([[1, 0], [0, 1]], bool))
    D.write_csv(tmp_path / "d.csv")
    E = DesignMatrix.read_csv(tmp_path / "d.csv")
    assert E.names == ("a", "b") and np.array_equal(E.truth, D.truth)
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="0 or 1"):
        DesignMatrix.read_csv(tmp_path / "bad.csv")
