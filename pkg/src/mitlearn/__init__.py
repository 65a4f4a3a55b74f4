"""Learning and designing stochastic models from temporal-logic observations.

Models (reaction networks, SDEs and hybrid switching systems) are written in
a small text language, simulated, and checked against MiTL formulae. A
Gaussian-process upper-confidence-bound search then fits parameters to
observed truth values or tunes them towards a target distribution of
outcomes.
"""

__version__ = "0.1.0"

from .lang import (
    GammaPrior,
    ParseError,
    format_formula,
    parse_formula,
    parse_model,
    parse_priors,
    parse_properties,
    parse_space,
)
from .model import Axis, ModelError, ParameterSpace, Trajectory
from .monitor import BooleanSignal, monitor, signal
from .search import SearchResult, UcbConfig, design, gpucb_maximize, identify
from .sim import RngStream, SimConfig, SimulationError, simulate
from .smc import (
    DesignMatrix,
    NoisyValue,
    bootstrap_noise,
    jsd,
    log_likelihood,
    posterior_noise,
    predictive,
    smc_sample,
)

__all__ = [
    "Axis",
    "BooleanSignal",
    "DesignMatrix",
    "GammaPrior",
    "ModelError",
    "NoisyValue",
    "ParameterSpace",
    "ParseError",
    "RngStream",
    "SearchResult",
    "SimConfig",
    "SimulationError",
    "Trajectory",
    "UcbConfig",
    "bootstrap_noise",
    "design",
    "format_formula",
    "gpucb_maximize",
    "identify",
    "jsd",
    "log_likelihood",
    "monitor",
    "parse_formula",
    "parse_model",
    "parse_priors",
    "parse_properties",
    "parse_space",
    "posterior_noise",
    "predictive",
    "signal",
    "simulate",
    "smc_sample",
]
