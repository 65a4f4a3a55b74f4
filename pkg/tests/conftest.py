from importlib import resources

import numpy as np
import pytest

from mitlearn.lang import parse_model, parse_properties, parse_space, parse_priors

DATA = resources.files("mitlearn") / "data"


def data_text(name):
    return (DATA / name).read_text(encoding="utf-8")


def data_path(name):
    return str(DATA / name)


@pytest.fixture(scope="session")
def poisson():
    m = parse_model(data_text("poisson.model"))
    return m, parse_properties(data_text("poisson.props"), m)


@pytest.fixture(scope="session")
def rumour():
    m = parse_model(data_text("rumour.model"))
    return (
        m,
        parse_properties(data_text("rumour.props"), m),
        parse_space(data_text("rumour.space")),
        parse_priors(data_text("rumour.priors")),
    )


@pytest.fixture(scope="session")
def toggle():
    return parse_model(data_text("toggle.model"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
