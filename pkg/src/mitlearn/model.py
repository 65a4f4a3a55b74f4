"""Domain types for parametric stochastic models.

Three model classes are supported: reaction networks (simulated as CTMCs),
SDE systems and hybrid systems made of binary modes coupled to an SDE.
Rates, drifts, diffusions and atomic predicates are all written in a small
arithmetic expression language, represented here as immutable trees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np


class ModelError(ValueError):
    """Semantic error in a model, parameter space or configuration."""


class ExpressionError(ArithmeticError):
    """Evaluation failure, carrying the offending node."""

    def __init__(self, message, node=None):
        where = ""
        if node is not None and getattr(node, "pos", None) is not None:
            where = " (line %d, column %d)" % node.pos
        super().__init__(message + where)
        self.node = node


# ---------------------------------------------------------------------------
# expressions


@dataclass(frozen=True)
class Const:
    value: float
    pos: tuple | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: tuple | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expression"
    right: "Expression"
    pos: tuple | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class UnaryOp:
    op: str  # one of neg exp log
    operand: "Expression"
    pos: tuple | None = field(default=None, compare=False, repr=False)


Expression = Union[Const, Var, BinOp, UnaryOp]

BINARY_OPS = ("+", "-", "*", "/", "^")
UNARY_OPS = ("neg", "exp", "log")


def free_names(e: Expression) -> set[str]:
    """Names referenced anywhere in ``e``."""
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, BinOp):
        return free_names(e.left) | free_names(e.right)
    if isinstance(e, UnaryOp):
        return free_names(e.operand)
    return set()


def eval_expression(e: Expression, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` with variables bound by ``env``.

    Raises
    ------
    ExpressionError
        On an unbound name, division by zero or the log of a non-positive
        number. The offending node is attached to the exception.
    """
    if isinstance(e, Const):
        return float(e.value)
    if isinstance(e, Var):
        try:
            return float(env[e.name])
        except KeyError:
            raise ExpressionError("unbound name %r" % e.name, e) from None
    if isinstance(e, UnaryOp):
        x = eval_expression(e.operand, env)
        if e.op == "neg":
            return -x
        if e.op == "exp":
            try:
                return math.exp(x)
            except OverflowError:
                return math.inf
        if e.op == "log":
            if x <= 0:
                raise ExpressionError("log of non-positive value %g" % x, e)
            return math.log(x)
        raise ExpressionError("unknown unary operator %r" % e.op, e)
    if isinstance(e, BinOp):
        a = eval_expression(e.left, env)
        b = eval_expression(e.right, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0:
                raise ExpressionError("division by zero", e)
            return a / b
        if e.op == "^":
            try:
                return float(a**b)
            except OverflowError:
                return math.inf
            except ZeroDivisionError:
                raise ExpressionError("division by zero", e) from None
        raise ExpressionError("unknown binary operator %r" % e.op, e)
    raise TypeError("not an expression: %r" % (e,))


def to_python(e: Expression, lookup: Mapping[str, str], lib: str = "math") -> str:
    """Render ``e`` as Python source, mapping each name through ``lookup``.

    ``lib`` names the module providing ``exp`` and ``log`` in the generated
    code (``math`` for scalar kernels, ``np`` for vectorised evaluation).
    """
    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return lookup[e.name]
    if isinstance(e, UnaryOp):
        inner = to_python(e.operand, lookup, lib)
        if e.op == "neg":
            return "(-%s)" % inner
        return "%s.%s(%s)" % (lib, e.op, inner)
    op = "**" if e.op == "^" else e.op
    return "(%s %s %s)" % (to_python(e.left, lookup, lib), op, to_python(e.right, lookup, lib))


# ---------------------------------------------------------------------------
# models


def _check_names(where, expr, allowed):
    unknown = free_names(expr) - set(allowed)
    if unknown:
        raise ModelError("%s references undeclared symbol(s) %s" % (where, ", ".join(sorted(unknown))))


@dataclass(frozen=True)
class Reaction:
    name: str
    reactants: tuple[int, ...]
    products: tuple[int, ...]
    rate: Expression

    @property
    def change(self) -> tuple[int, ...]:
        return tuple(p - r for r, p in zip(self.reactants, self.products))


@dataclass(frozen=True)
class ReactionNetwork:
    """Population CTMC described by reactions with arbitrary rate functions."""

    name: str
    species: tuple[str, ...]
    initial: tuple[float, ...]
    constants: Mapping[str, float]
    parameters: tuple[str, ...]
    reactions: tuple[Reaction, ...] = ()

    def __post_init__(self):
        n = len(self.species)
        if len(self.initial) != n:
            raise ModelError("one initial count per species required")
        for x in self.initial:
            if x < 0 or x != int(x):
                raise ModelError("initial counts must be non-negative integers")
        symbols = set(self.species) | set(self.constants) | set(self.parameters)
        for r in self.reactions:
            if len(r.reactants) != n or len(r.products) != n:
                raise ModelError("reaction %s: stoichiometry must have %d entries" % (r.name, n))
            if min(r.reactants + r.products, default=0) < 0:
                raise ModelError("reaction %s: negative stoichiometry" % r.name)
            _check_names("rate of reaction %s" % r.name, r.rate, symbols)

    @property
    def state_names(self) -> tuple[str, ...]:
        return self.species


@dataclass(frozen=True)
class SdeSystem:
    """Ito SDE ``dV = F(V) dt + G(V) dW``.

    ``diffusion`` has one row per variable and one column per noise channel;
    ``None`` entries are structural zeros.
    """

    name: str
    variables: tuple[str, ...]
    initial: tuple[float, ...]
    drift: tuple[Expression, ...]
    diffusion: tuple[tuple[Expression | None, ...], ...]
    channels: tuple[str, ...]
    constants: Mapping[str, float]
    parameters: tuple[str, ...]
    # extra symbols the expressions may reference (hybrid mode states)
    extra_symbols: tuple[str, ...] = ()

    def __post_init__(self):
        n = len(self.variables)
        if len(self.initial) != n:
            raise ModelError("one initial value per variable required")
        if len(self.drift) != n:
            raise ModelError("drift must have one entry per variable")
        if len(self.diffusion) != n or any(len(row) != len(self.channels) for row in self.diffusion):
            raise ModelError("diffusion must be %d x %d" % (n, len(self.channels)))
        symbols = set(self.variables) | set(self.constants) | set(self.parameters) | set(self.extra_symbols)
        for v, f in zip(self.variables, self.drift):
            _check_names("drift of %s" % v, f, symbols)
        for v, row in zip(self.variables, self.diffusion):
            for g in row:
                if g is not None:
                    _check_names("noise of %s" % v, g, symbols)

    @property
    def state_names(self) -> tuple[str, ...]:
        return self.variables


@dataclass(frozen=True)
class Mode:
    name: str
    initial: int
    off_rate: Expression  # on -> off
    on_rate: Expression  # off -> on


@dataclass(frozen=True)
class HybridSystem:
    """Binary modes with state-dependent switching rates driving an SDE.

    In trajectories the mode values (0 or 1) follow the continuous
    variables in the state vector.
    """

    name: str
    modes: tuple[Mode, ...]
    continuous: SdeSystem

    def __post_init__(self):
        mode_names = {m.name for m in self.modes}
        clash = mode_names & set(self.continuous.variables)
        if clash:
            raise ModelError("mode names clash with variables: %s" % ", ".join(sorted(clash)))
        symbols = (
            mode_names
            | set(self.continuous.variables)
            | set(self.continuous.constants)
            | set(self.continuous.parameters)
        )
        for m in self.modes:
            if m.initial not in (0, 1):
                raise ModelError("mode %s must start at 0 or 1" % m.name)
            _check_names("on->off rate of %s" % m.name, m.off_rate, symbols)
            _check_names("off->on rate of %s" % m.name, m.on_rate, symbols)

    @property
    def parameters(self) -> tuple[str, ...]:
        return self.continuous.parameters

    @property
    def constants(self) -> Mapping[str, float]:
        return self.continuous.constants

    @property
    def state_names(self) -> tuple[str, ...]:
        return self.continuous.variables + tuple(m.name for m in self.modes)


Model = Union[ReactionNetwork, SdeSystem, HybridSystem]


def bind_parameters(model: Model, theta: Mapping[str, float]) -> np.ndarray:
    """Parameter values in the model's declaration order.

    Raises ``ModelError`` naming the first missing parameter.
    """
    values = []
    for name in model.parameters:
        if name not in theta:
            raise ModelError("missing value for parameter %r" % name)
        values.append(float(theta[name]))
    return np.array(values, dtype=float)


# ---------------------------------------------------------------------------
# parameter spaces


@dataclass(frozen=True)
class Axis:
    name: str
    lower: float
    upper: float
    scale: str = "log"

    def __post_init__(self):
        if self.scale not in ("log", "linear"):
            raise ModelError("axis %s: unknown scale %r" % (self.name, self.scale))
        if not self.lower < self.upper:
            raise ModelError("axis %s: lower bound must be below upper bound" % self.name)
        if self.scale == "log" and self.lower <= 0:
            raise ModelError("axis %s: log scale needs positive bounds" % self.name)


@dataclass(frozen=True)
class ParameterSpace:
    """Box of free parameters, each mapped affinely (in log or linear
    coordinates) onto ``[-1, 1]``, plus fixed parameter values."""

    axes: tuple[Axis, ...]
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ModelError("duplicate axis names")
        if set(names) & set(self.fixed):
            raise ModelError("parameter both free and fixed")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def dim(self) -> int:
        return len(self.axes)

    def _affine(self):
        lo = np.array([math.log(a.lower) if a.scale == "log" else a.lower for a in self.axes])
        hi = np.array([math.log(a.upper) if a.scale == "log" else a.upper for a in self.axes])
        logs = np.array([a.scale == "log" for a in self.axes])
        return lo, hi, logs

    def normalize(self, theta) -> np.ndarray:
        """Map raw parameter vector(s) into ``[-1, 1]^d``."""
        theta = np.asarray(theta, dtype=float)
        lower = np.array([a.lower for a in self.axes])
        upper = np.array([a.upper for a in self.axes])
        slack = 1e-12 * np.maximum(np.abs(lower), np.abs(upper))
        if np.any(theta < lower - slack) or np.any(theta > upper + slack):
            raise ModelError("parameter vector outside the search bounds")
        lo, hi, logs = self._affine()
        z = np.array(np.clip(theta, lower, upper), dtype=float)
        z[..., logs] = np.log(z[..., logs])
        return 2.0 * (z - lo) / (hi - lo) - 1.0

    def denormalize(self, x) -> np.ndarray:
        """Inverse of :meth:`normalize`; inputs are clipped to the box."""
        x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
        lo, hi, logs = self._affine()
        z = lo + (x + 1.0) * 0.5 * (hi - lo)
        theta = np.array(z, dtype=float)
        theta[..., logs] = np.exp(theta[..., logs])
        # keep exact bounds despite exp/log round-off
        lower = np.array([a.lower for a in self.axes])
        upper = np.array([a.upper for a in self.axes])
        return np.clip(theta, lower, upper)

    def jacobian(self, x) -> np.ndarray:
        """Diagonal of d theta / d x at normalized point ``x``."""
        lo, hi, logs = self._affine()
        theta = self.denormalize(x)
        half = 0.5 * (hi - lo)
        return np.where(logs, theta * half, half)

    def to_dict(self, theta) -> dict[str, float]:
        """Raw vector to a full parameter mapping including fixed values."""
        out = dict(self.fixed)
        out.update({a.name: float(v) for a, v in zip(self.axes, theta)})
        return out

    def check_model(self, model: Model) -> None:
        declared = set(model.parameters)
        for name in list(self.names) + list(self.fixed):
            if name not in declared:
                raise ModelError("parameter %r is not declared by model %s" % (name, model.name))
        missing = declared - set(self.names) - set(self.fixed)
        if missing:
            raise ModelError("parameters neither searched nor fixed: %s" % ", ".join(sorted(missing)))


# ---------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-constant signal: ``values[i]`` holds on ``[times[i], times[i+1])``
    and the last value holds up to ``horizon``."""

    times: np.ndarray
    values: np.ndarray
    names: tuple[str, ...]
    horizon: float
    integer: bool = False  # populations of a CTMC

    def __post_init__(self):
        t = self.times
        if t.ndim != 1 or len(t) == 0 or t[0] != 0.0:
            raise ValueError("trajectory times must start at 0")
        if len(t) > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if t[-1] > self.horizon:
            raise ValueError("trajectory extends past its horizon")
        if self.values.shape != (len(t), len(self.names)):
            raise ValueError("values must be a (len(times), len(names)) array")

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def at(self, t: float) -> np.ndarray:
        """State vector holding at time ``t``."""
        i = np.searchsorted(self.times, t, side="right") - 1
        return self.values[max(i, 0)]

    def to_csv(self, path_or_buffer) -> None:
        header = ",".join(("t",) + self.names)
        data = np.column_stack([self.times, self.values])
        fmt = ["%.17g"] + (["%d"] if self.integer else ["%.17g"]) * len(self.names)
        np.savetxt(path_or_buffer, data, delimiter=",", header=header, comments="", fmt=fmt)
