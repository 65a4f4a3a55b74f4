"""Text formats: the model DSL, MiTL formulae, parameter spaces and priors.

All parsers are hand-written recursive descent over a shared lexer and
report errors as :class:`ParseError` with 1-based line/column positions.

Formula syntax::

    tt | ff | e1 < e2 | e1 <= e2 | e1 > e2 | e1 >= e2 | e1 = e2 | a < e < b
    !f | f & g | f | g | f U[a,b] g | F[a,b] f | G[a,b] f | (f)

Precedence, tightest first: ``!``/``F``/``G``, ``&``, ``|``, ``U``.
``U`` associates to the right, ``&`` and ``|`` to the left.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .model import (
    Axis,
    BinOp,
    Const,
    Expression,
    HybridSystem,
    Mode,
    ModelError,
    ParameterSpace,
    Reaction,
    ReactionNetwork,
    SdeSystem,
    UnaryOp,
    Var,
    free_names,
)


class ParseError(ValueError):
    def __init__(self, line, column, expected, found):
        self.line = line
        self.column = column
        self.expected = expected
        self.found = found
        super().__init__("line %d, column %d: expected %s, found %s" % (line, column, expected, found))


# ---------------------------------------------------------------------------
# formula AST


@dataclass(frozen=True)
class TrueF:
    pass


@dataclass(frozen=True)
class Atomic:
    op: str  # < <= > >= =
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Not:
    sub: "Formula"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Until:
    lo: float
    hi: float
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Eventually:
    lo: float
    hi: float
    sub: "Formula"


@dataclass(frozen=True)
class Always:
    lo: float
    hi: float
    sub: "Formula"


Formula = Union[TrueF, Atomic, Not, And, Or, Until, Eventually, Always]

COMPARISONS = ("<", "<=", ">", ">=", "=")


def desugar(f: Formula) -> Formula:
    """Rewrite into the core grammar ``tt, atom, !, &, U``.

    ``F[a,b] f`` becomes ``tt U[a,b] f``, ``G[a,b] f`` becomes
    ``!F[a,b] !f`` and ``f | g`` becomes ``!(!f & !g)``.
    """
    if isinstance(f, (TrueF, Atomic)):
        return f
    if isinstance(f, Not):
        return Not(desugar(f.sub))
    if isinstance(f, And):
        return And(desugar(f.left), desugar(f.right))
    if isinstance(f, Or):
        return Not(And(Not(desugar(f.left)), Not(desugar(f.right))))
    if isinstance(f, Until):
        return Until(f.lo, f.hi, desugar(f.left), desugar(f.right))
    if isinstance(f, Eventually):
        return Until(f.lo, f.hi, TrueF(), desugar(f.sub))
    if isinstance(f, Always):
        return Not(Until(f.lo, f.hi, TrueF(), Not(desugar(f.sub))))
    raise TypeError("not a formula: %r" % (f,))


def temporal_depth(f: Formula) -> float:
    """Length of the time window needed to decide ``f`` at time 0."""
    if isinstance(f, (TrueF, Atomic)):
        return 0.0
    if isinstance(f, Not):
        return temporal_depth(f.sub)
    if isinstance(f, (And, Or)):
        return max(temporal_depth(f.left), temporal_depth(f.right))
    if isinstance(f, Until):
        return f.hi + max(temporal_depth(f.left), temporal_depth(f.right))
    return f.hi + temporal_depth(f.sub)


def formula_names(f: Formula) -> set[str]:
    if isinstance(f, TrueF):
        return set()
    if isinstance(f, Atomic):
        return free_names(f.left) | free_names(f.right)
    if isinstance(f, Not):
        return formula_names(f.sub)
    if isinstance(f, (Eventually, Always)):
        return formula_names(f.sub)
    return formula_names(f.left) | formula_names(f.right)


# ---------------------------------------------------------------------------
# printing


def _num(x: float) -> str:
    return "%.17g" % x


_EXPR_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def format_expression(e: Expression, prec: int = 0) -> str:
    if isinstance(e, Const):
        s, p = _num(e.value), 5
        if e.value < 0:
            p = 3
    elif isinstance(e, Var):
        s, p = e.name, 5
    elif isinstance(e, UnaryOp):
        if e.op == "neg":
            s, p = "-" + format_expression(e.operand, 3), 3
        else:
            s, p = "%s(%s)" % (e.op, format_expression(e.operand)), 5
    else:
        p = _EXPR_PREC[e.op]
        if e.op == "^":
            # right associative; the exponent may carry a unary minus
            s = "%s ^ %s" % (format_expression(e.left, 5), format_expression(e.right, 3))
        else:
            s = "%s %s %s" % (format_expression(e.left, p), e.op, format_expression(e.right, p + 1))
    return "(%s)" % s if p < prec else s


def format_formula(f: Formula, prec: int = 0) -> str:
    """Canonical text of ``f``; ``parse_formula`` inverts it exactly."""
    if isinstance(f, TrueF):
        s, p = "tt", 5
    elif isinstance(f, Atomic):
        s, p = "%s %s %s" % (format_expression(f.left), f.op, format_expression(f.right)), 4.5
    elif isinstance(f, Not):
        s, p = "!" + format_formula(f.sub, 5), 4
    elif isinstance(f, Eventually):
        s, p = "F[%s,%s] %s" % (_num(f.lo), _num(f.hi), format_formula(f.sub, 5)), 4
    elif isinstance(f, Always):
        s, p = "G[%s,%s] %s" % (_num(f.lo), _num(f.hi), format_formula(f.sub, 5)), 4
    elif isinstance(f, And):
        s, p = "%s & %s" % (format_formula(f.left, 3), format_formula(f.right, 4)), 3
    elif isinstance(f, Or):
        s, p = "%s | %s" % (format_formula(f.left, 2), format_formula(f.right, 3)), 2
    elif isinstance(f, Until):
        s = "%s U[%s,%s] %s" % (format_formula(f.left, 2), _num(f.lo), _num(f.hi), format_formula(f.right, 1))
        p = 1
    else:
        raise TypeError("not a formula: %r" % (f,))
    return "(%s)" % s if p < prec else s


# ---------------------------------------------------------------------------
# lexing


@dataclass(frozen=True)
class Token:
    kind: str  # NUMBER IDENT TEMPORAL OP EOF
    text: str
    line: int
    col: int
    value: float | None = field(default=None, compare=False)

    @property
    def pos(self):
        return (self.line, self.col)

    def describe(self):
        return "end of input" if self.kind == "EOF" else repr(self.text)


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<temporal>[FGU](?=\s*\[))
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>->|<=|>=|==|[{}()\[\];,:@+\-*/^<>=!&|~])
    """,
    re.VERBOSE,
)


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, i = 1, 0, 0
    while i < len(source):
        m = _TOKEN_RE.match(source, i)
        col = i - line_start + 1
        if m is None:
            raise ParseError(line, col, "a token", repr(source[i]))
        kind = m.lastgroup
        text = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "number":
            tokens.append(Token("NUMBER", text, line, col, float(text)))
        elif kind == "temporal":
            tokens.append(Token("TEMPORAL", text, line, col))
        elif kind == "ident":
            tokens.append(Token("IDENT", text, line, col))
        elif kind == "op":
            tokens.append(Token("OP", "=" if text == "==" else text, line, col))
        i = m.end()
    tokens.append(Token("EOF", "", line, i - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, source: str):
        self.tokens = tokenize(source)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k=1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, expected, tok=None):
        tok = tok or self.tok
        return ParseError(tok.line, tok.col, expected, tok.describe())

    def at(self, text, kind=None) -> bool:
        t = self.tok
        if kind is not None and t.kind != kind:
            return False
        return t.text == text and t.kind in ("OP", "IDENT", "TEMPORAL")

    def accept(self, text) -> Token | None:
        if self.at(text):
            t = self.tok
            self.i += 1
            return t
        return None

    def expect(self, text) -> Token:
        t = self.accept(text)
        if t is None:
            raise self.error(repr(text))
        return t

    def ident(self) -> Token:
        t = self.tok
        if t.kind != "IDENT":
            raise self.error("an identifier")
        self.i += 1
        return t

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        t = self.tok
        if t.kind != "NUMBER":
            raise self.error("a number")
        self.i += 1
        return sign * t.value

    def end(self):
        if self.tok.kind != "EOF":
            raise self.error("end of input")

    # expressions ------------------------------------------------------
    def expr(self) -> Expression:
        e = self.term()
        while self.at("+") or self.at("-"):
            t = self.tok
            self.i += 1
            e = BinOp(t.text, e, self.term(), pos=t.pos)
        return e

    def term(self) -> Expression:
        e = self.unary()
        while self.at("*") or self.at("/"):
            t = self.tok
            self.i += 1
            e = BinOp(t.text, e, self.unary(), pos=t.pos)
        return e

    def unary(self) -> Expression:
        t = self.accept("-")
        if t:
            return UnaryOp("neg", self.unary(), pos=t.pos)
        return self.power()

    def power(self) -> Expression:
        base = self.atom()
        t = self.accept("^")
        if t:
            return BinOp("^", base, self.unary(), pos=t.pos)
        return base

    def atom(self) -> Expression:
        t = self.tok
        if t.kind == "NUMBER":
            self.i += 1
            return Const(t.value, pos=t.pos)
        if t.kind == "IDENT":
            self.i += 1
            if t.text in ("exp", "log") and self.at("("):
                self.expect("(")
                e = self.expr()
                self.expect(")")
                return UnaryOp(t.text, e, pos=t.pos)
            return Var(t.text, pos=t.pos)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        raise self.error("an expression")


def _check_symbols(e: Expression, allowed: set[str], what: str):
    """Raise a positioned ParseError on the first undeclared name in ``e``."""
    if isinstance(e, Var):
        if e.name not in allowed:
            line, col = e.pos or (0, 0)
            raise ParseError(line, col, what, repr(e.name))
    elif isinstance(e, BinOp):
        _check_symbols(e.left, allowed, what)
        _check_symbols(e.right, allowed, what)
    elif isinstance(e, UnaryOp):
        _check_symbols(e.operand, allowed, what)


# ---------------------------------------------------------------------------
# models

_DECLS = {
    "ctmc": {"species", "const", "param", "reaction"},
    "sde": {"var", "const", "param", "drift", "noise"},
    "hybrid": {"var", "mode", "const", "param", "drift", "noise", "rate"},
}


def parse_model(source: str):
    """Parse a ``ctmc``, ``sde`` or ``hybrid`` block into a model object."""
    p = _Parser(source)
    kind_tok = p.tok
    if kind_tok.kind != "IDENT" or kind_tok.text not in _DECLS:
        raise p.error("'ctmc', 'sde' or 'hybrid'")
    p.i += 1
    kind = kind_tok.text
    name = p.ident().text
    p.expect("{")

    states: dict[str, float] = {}  # species or continuous vars, in order
    modes: dict[str, int] = {}
    constants: dict[str, float] = {}
    params: list[str] = []
    declared_at: dict[str, Token] = {}
    reactions = []  # (name token, reactants, products, rate)
    drifts: dict[str, tuple] = {}
    noises: list[tuple] = []  # (var token, channel name, expr)
    rates: dict[tuple[str, str], tuple] = {}

    def declare(tok):
        if tok.text in declared_at:
            raise ParseError(tok.line, tok.col, "a fresh name", "duplicate declaration of %r" % tok.text)
        declared_at[tok.text] = tok

    while not p.at("}"):
        kw = p.tok
        if kw.kind != "IDENT" or kw.text not in _DECLS[kind]:
            raise p.error("a declaration (%s)" % ", ".join(sorted(_DECLS[kind])))
        p.i += 1
        if kw.text in ("species", "var"):
            t = p.ident()
            declare(t)
            p.expect("=")
            states[t.text] = p.number()
        elif kw.text == "mode":
            t = p.ident()
            declare(t)
            p.expect("=")
            v_tok = p.tok
            v = p.number()
            if v not in (0.0, 1.0):
                raise ParseError(v_tok.line, v_tok.col, "0 or 1", v_tok.describe())
            modes[t.text] = int(v)
        elif kw.text == "const":
            t = p.ident()
            declare(t)
            p.expect("=")
            constants[t.text] = p.number()
        elif kw.text == "param":
            while True:
                t = p.ident()
                declare(t)
                params.append(t.text)
                if not p.accept(","):
                    break
        elif kw.text == "reaction":
            t = p.ident()
            p.expect(":")
            lhs = _side(p)
            p.expect("->")
            rhs = _side(p)
            p.expect("@")
            reactions.append((t, lhs, rhs, p.expr()))
        elif kw.text == "drift":
            t = p.ident()
            if t.text in drifts:
                raise ParseError(t.line, t.col, "one drift per variable", "second drift for %r" % t.text)
            p.expect("=")
            drifts[t.text] = (t, p.expr())
        elif kw.text == "noise":
            t = p.ident()
            channel = p.ident().text if p.accept(",") else t.text
            p.expect("=")
            noises.append((t, channel, p.expr()))
        elif kw.text == "rate":
            t = p.ident()
            src = p.ident()
            if src.text not in ("on", "off"):
                raise p.error("'on->off' or 'off->on'", src)
            p.expect("->")
            dst = p.ident()
            if {src.text, dst.text} != {"on", "off"}:
                raise p.error("'on->off' or 'off->on'", dst)
            p.expect("=")
            rates[(t.text, src.text)] = (t, p.expr())
        p.expect(";")
    p.expect("}")
    p.end()

    symbols = set(states) | set(modes) | set(constants) | set(params)
    undeclared = "a declared symbol"
    if kind == "ctmc":
        species = tuple(states)
        rxns = []
        for t, lhs, rhs, rate in reactions:
            vec = []
            for side in (lhs, rhs):
                counts = [0] * len(species)
                for coef, sp in side:
                    if sp.text not in states:
                        raise ParseError(sp.line, sp.col, "a species", "undeclared %r" % sp.text)
                    counts[species.index(sp.text)] += coef
                vec.append(tuple(counts))
            _check_symbols(rate, symbols, undeclared)
            rxns.append(Reaction(t.text, vec[0], vec[1], rate))
        return ReactionNetwork(
            name, species, tuple(states.values()), constants, tuple(params), tuple(rxns)
        )

    variables = tuple(states)
    for t, e in drifts.values():
        if t.text not in states:
            raise ParseError(t.line, t.col, "a continuous variable", repr(t.text))
        _check_symbols(e, symbols, undeclared)
    for v in variables:
        if v not in drifts:
            raise ModelError("no drift declared for variable %r" % v)
    channels: list[str] = []
    entries = {}
    for t, ch, e in noises:
        if t.text not in states:
            raise ParseError(t.line, t.col, "a continuous variable", repr(t.text))
        _check_symbols(e, symbols, undeclared)
        if ch not in channels:
            channels.append(ch)
        if (t.text, ch) in entries:
            raise ParseError(t.line, t.col, "one noise entry per (variable, channel)", "duplicate")
        entries[(t.text, ch)] = e
    diffusion = tuple(tuple(entries.get((v, ch)) for ch in channels) for v in variables)
    sde = SdeSystem(
        name,
        variables,
        tuple(states.values()),
        tuple(drifts[v][1] for v in variables),
        diffusion,
        tuple(channels),
        constants,
        tuple(params),
        extra_symbols=tuple(modes),
    )
    if kind == "sde":
        return sde
    mode_objs = []
    for (mname, _), (t, e) in rates.items():
        if mname not in modes:
            raise ParseError(t.line, t.col, "a mode", repr(mname))
        _check_symbols(e, symbols, undeclared)
    for m, init in modes.items():
        if (m, "on") not in rates or (m, "off") not in rates:
            raise ModelError("mode %r needs both on->off and off->on rates" % m)
        mode_objs.append(Mode(m, init, rates[(m, "on")][1], rates[(m, "off")][1]))
    return HybridSystem(name, tuple(mode_objs), sde)


def _side(p: _Parser):
    """``0`` or ``[n*]X + [n*]Y + ...`` as a list of (coefficient, token)."""
    if p.tok.kind == "NUMBER" and p.tok.value == 0 and not p.peek().text == "*":
        p.i += 1
        return []
    terms = []
    while True:
        coef = 1
        if p.tok.kind == "NUMBER":
            t = p.tok
            coef = p.number()
            if coef != int(coef) or coef < 1:
                raise ParseError(t.line, t.col, "a positive integer coefficient", t.describe())
            coef = int(coef)
            p.expect("*")
        terms.append((coef, p.ident()))
        if not p.accept("+"):
            return terms


def symbol_table(model) -> dict[str, str]:
    """Names usable in formulae over ``model``: name -> 'state' | 'const'."""
    table = {n: "state" for n in model.state_names}
    table.update({n: "const" for n in model.constants})
    return table


# ---------------------------------------------------------------------------
# formulae


class _FormulaParser(_Parser):
    def __init__(self, source, symbols):
        super().__init__(source)
        self.symbols = symbols

    def formula(self) -> Formula:
        left = self.disj()
        if self.tok.kind == "TEMPORAL" and self.tok.text == "U":
            self.i += 1
            lo, hi = self.bounds()
            return Until(lo, hi, left, self.formula())
        return left

    def disj(self) -> Formula:
        f = self.conj()
        while self.accept("|"):
            f = Or(f, self.conj())
        return f

    def conj(self) -> Formula:
        f = self.modal()
        while self.accept("&"):
            f = And(f, self.modal())
        return f

    def modal(self) -> Formula:
        if self.accept("!"):
            return Not(self.modal())
        t = self.tok
        if t.kind == "TEMPORAL" and t.text in ("F", "G"):
            self.i += 1
            lo, hi = self.bounds()
            sub = self.modal()
            return Eventually(lo, hi, sub) if t.text == "F" else Always(lo, hi, sub)
        return self.primary()

    def bounds(self):
        start = self.expect("[")
        lo = self.number()
        self.expect(",")
        hi = self.number()
        self.expect("]")
        if not 0 <= lo < hi:
            raise ParseError(start.line, start.col, "time bounds 0 <= T1 < T2", "[%s,%s]" % (_num(lo), _num(hi)))
        return lo, hi

    def primary(self) -> Formula:
        t = self.tok
        if t.kind == "IDENT" and t.text == "tt":
            self.i += 1
            return TrueF()
        if t.kind == "IDENT" and t.text == "ff":
            self.i += 1
            return Not(TrueF())
        if t.text == "(" and t.kind == "OP":
            # either a parenthesised formula or a comparison starting with a
            # parenthesised expression; try the comparison first
            save = self.i
            try:
                return self.comparison()
            except ParseError:
                self.i = save
            self.expect("(")
            f = self.formula()
            self.expect(")")
            return f
        return self.comparison()

    def comparison(self) -> Formula:
        left = self.expr()
        op = self.relop()
        right = self.expr()
        atom = Atomic(op, left, right)
        if self.tok.kind == "OP" and self.tok.text in COMPARISONS:
            op2 = self.relop()
            atom = And(atom, Atomic(op2, right, self.expr()))
        return atom

    def relop(self) -> str:
        t = self.tok
        if t.kind == "OP" and t.text in COMPARISONS:
            self.i += 1
            return t.text
        raise self.error("a comparison operator")

    def atom(self):
        e = super().atom()
        if isinstance(e, Var) and self.symbols is not None and e.name not in self.symbols:
            line, col = e.pos
            raise ParseError(line, col, "a state variable or constant", "unknown name %r" % e.name)
        return e


def _symbols_of(symbols):
    if symbols is None:
        return None
    if hasattr(symbols, "state_names"):
        return symbol_table(symbols)
    return set(symbols)


def parse_formula(source: str, symbols=None) -> Formula:
    """Parse one formula.

    ``symbols`` is a model, or an iterable of names the atoms may use;
    ``None`` skips name resolution.
    """
    p = _FormulaParser(source, _symbols_of(symbols))
    f = p.formula()
    p.end()
    return f


def parse_properties(source: str, symbols=None) -> dict[str, Formula]:
    """Named formulae, ``name: formula;`` repeated."""
    p = _FormulaParser(source, _symbols_of(symbols))
    out: dict[str, Formula] = {}
    while p.tok.kind != "EOF":
        t = p.ident()
        if t.text in out:
            raise ParseError(t.line, t.col, "a fresh property name", "duplicate %r" % t.text)
        p.expect(":")
        out[t.text] = p.formula()
        p.expect(";")
    if not out:
        raise p.error("at least one property")
    return out


def format_properties(props: Mapping[str, Formula]) -> str:
    return "".join("%s: %s;\n" % (name, format_formula(f)) for name, f in props.items())


# ---------------------------------------------------------------------------
# search spaces and priors


def parse_space(source: str) -> ParameterSpace:
    """``name in [lo, hi] (log|linear)`` or ``name = value``, separated by ``;``.

    The scale defaults to ``log``.
    """
    p = _Parser(source)
    axes: list[Axis] = []
    fixed: dict[str, float] = {}
    seen = set()
    while p.tok.kind != "EOF":
        t = p.ident()
        if t.text in seen:
            raise ParseError(t.line, t.col, "a fresh parameter name", "duplicate %r" % t.text)
        seen.add(t.text)
        if p.accept("="):
            fixed[t.text] = p.number()
        else:
            if not (p.tok.kind == "IDENT" and p.tok.text == "in"):
                raise p.error("'in' or '='")
            p.i += 1
            b = p.expect("[")
            lo = p.number()
            p.expect(",")
            hi = p.number()
            p.expect("]")
            scale = "log"
            if p.tok.kind == "IDENT" and p.tok.text in ("log", "linear"):
                scale = p.tok.text
                p.i += 1
            try:
                axes.append(Axis(t.text, lo, hi, scale))
            except ModelError as exc:
                raise ParseError(b.line, b.col, "valid bounds", str(exc)) from None
        if not p.accept(";"):
            break
    p.end()
    if not axes:
        raise ParseError(1, 1, "at least one searched parameter", "none")
    return ParameterSpace(tuple(axes), fixed)


@dataclass(frozen=True)
class GammaPrior:
    """Gamma prior given by shape and mean (rate = shape / mean)."""

    shape: float
    mean: float

    def __post_init__(self):
        if not (self.shape > 0 and self.mean > 0):
            raise ModelError("gamma prior needs positive shape and mean")

    @property
    def rate(self) -> float:
        return self.shape / self.mean


def parse_priors(source: str) -> dict[str, GammaPrior]:
    """``name ~ gamma(shape, mean);`` repeated."""
    p = _Parser(source)
    out = {}
    while p.tok.kind != "EOF":
        t = p.ident()
        p.expect("~")
        kind = p.ident()
        if kind.text != "gamma":
            raise p.error("'gamma'", kind)
        p.expect("(")
        shape_tok = p.tok
        shape = p.number()
        p.expect(",")
        mean = p.number()
        p.expect(")")
        try:
            out[t.text] = GammaPrior(shape, mean)
        except ModelError as exc:
            raise ParseError(shape_tok.line, shape_tok.col, "positive shape and mean", str(exc)) from None
        if not p.accept(";"):
            break
    p.end()
    return out


def read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def names_in(formulas: Iterable[Formula]) -> set[str]:
    out: set[str] = set()
    for f in formulas:
        out |= formula_names(f)
    return out
