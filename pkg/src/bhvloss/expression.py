"""Coefficient-bearing expression trees over ``fs, vin, d, rt``.

Trees are immutable ``Expr`` nodes. Leaves are input variables or named
coefficient placeholders ``p0..pK``; numeric constants do not exist, every
degree of freedom is a coefficient fitted per gate-drive condition.

Text form is lowercase prefix notation, e.g. ``(add (mul p0 fs) p1)``. The
canonical string is the identity of a model across GP runs and reports.
"""
from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import EvalDomain, MissingCoefficient, ParseError

VARIABLES = ("fs", "vin", "d", "rt")
UNARY = ("neg", "log", "exp", "tanh", "atan", "sqrt")
BINARY = ("add", "sub", "mul", "div", "pow")
COMMUTATIVE = ("add", "mul")
COEF = "p"

_NUMPY_FN = {
    "log": "np.log", "exp": "np.exp", "tanh": "np.tanh", "atan": "np.arctan",
    "sqrt": "np.sqrt", "pow": "np.power",
}
_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


@dataclass(frozen=True)
class Expr:
    op: str
    args: tuple = ()
    index: int = -1

    def __post_init__(self):
        arity = 1 if self.op in UNARY else 2 if self.op in BINARY else 0
        if self.op not in VARIABLES and self.op != COEF and arity == 0:
            raise ValueError(f"unknown node kind {self.op!r}")
        if len(self.args) != arity:
            raise ValueError(f"{self.op} takes {arity} argument(s), got {len(self.args)}")
        if self.op == COEF and self.index < 0:
            raise ValueError("coefficient needs a non-negative index")

    @property
    def is_leaf(self) -> bool:
        return not self.args

    @property
    def is_variable(self) -> bool:
        return self.op in VARIABLES

    @property
    def is_coefficient(self) -> bool:
        return self.op == COEF

    @functools.cached_property
    def depth(self) -> int:
        return 1 + max((a.depth for a in self.args), default=0)

    @functools.cached_property
    def size(self) -> int:
        return 1 + sum(a.size for a in self.args)

    def walk(self):
        """Pre-order traversal."""
        yield self
        for a in self.args:
            yield from a.walk()

    def coefficient_indices(self) -> list[int]:
        """Distinct coefficient indices in order of first appearance."""
        seen = {}
        for node in self.walk():
            if node.is_coefficient:
                seen.setdefault(node.index, None)
        return list(seen)

    @property
    def n_coefficients(self) -> int:
        """Number of coefficient slots needed to evaluate the tree (max index + 1)."""
        return max(self.coefficient_indices(), default=-1) + 1

    def has_variable(self) -> bool:
        return any(node.is_variable for node in self.walk())

    def __str__(self):
        return serialize(self)

    def __repr__(self):
        return f"Expr({serialize(self)!r})"


def var(name: str) -> Expr:
    return Expr(name)


def coef(k: int) -> Expr:
    return Expr(COEF, (), int(k))


def node(op: str, *args: Expr) -> Expr:
    return Expr(op, tuple(args))


FS, VIN, D, RT = (var(v) for v in VARIABLES)


def reference_model() -> Expr:
    """The three-coefficient switching-loss law.

    ``p0 * fs * vin^2 * (d - p1 d^2) / rt + p2 * fs * vin``, i.e. the form
    ``p0 fs vin^2 D (1 - p1 D) / R_T + p2 fs vin`` written without numeric
    constants.
    """
    quad = node("sub", D, node("mul", coef(1), node("mul", D, D)))
    first = node("div",
                 node("mul", coef(0), node("mul", node("mul", FS, node("mul", VIN, VIN)), quad)),
                 RT)
    second = node("mul", coef(2), node("mul", FS, VIN))
    return node("add", first, second)


# -- text form ---------------------------------------------------------------

def serialize(e: Expr) -> str:
    if e.is_coefficient:
        return f"p{e.index}"
    if e.is_leaf:
        return e.op
    return "(" + " ".join([e.op] + [serialize(a) for a in e.args]) + ")"


_TOKEN = re.compile(r"\(|\)|[^\s()]+")


def _tokenize(text: str):
    return [(m.group(), m.start()) for m in _TOKEN.finditer(text)]


def parse(text: str) -> Expr:
    """Parse prefix notation; raises ``ParseError`` carrying the offending position."""
    tokens = _tokenize(text)
    if not tokens:
        raise ParseError("empty expression", 0)
    e, k = _parse_at(tokens, 0, len(text))
    if k != len(tokens):
        raise ParseError(f"trailing token {tokens[k][0]!r}", tokens[k][1])
    return e


def _parse_at(tokens, k, end):
    if k >= len(tokens):
        raise ParseError("unexpected end of input", end)
    tok, pos = tokens[k]
    if tok == ")":
        raise ParseError("unexpected ')'", pos)
    if tok != "(":
        return _atom(tok, pos), k + 1
    if k + 1 >= len(tokens):
        raise ParseError("unexpected end of input", end)
    op, op_pos = tokens[k + 1]
    if op not in UNARY and op not in BINARY:
        raise ParseError(f"unknown operator {op!r}", op_pos)
    arity = 1 if op in UNARY else 2
    args = []
    k += 2
    for _ in range(arity):
        a, k = _parse_at(tokens, k, end)
        args.append(a)
    if k >= len(tokens):
        raise ParseError(f"missing ')' for {op!r} opened", pos)
    if tokens[k][0] != ")":
        raise ParseError(f"{op} takes {arity} argument(s)", tokens[k][1])
    return Expr(op, tuple(args)), k + 1


def _atom(tok, pos):
    if tok in VARIABLES:
        return var(tok)
    m = re.fullmatch(r"p(\d+)", tok)
    if m:
        return coef(int(m.group(1)))
    raise ParseError(f"unknown symbol {tok!r}", pos)


# -- evaluation --------------------------------------------------------------

def _apply(op, args):
    if op == "neg":
        return -args[0]
    if op in _INFIX:
        a, b = args
        return {"add": np.add, "sub": np.subtract, "mul": np.multiply, "div": np.divide}[op](a, b)
    return {"log": np.log, "exp": np.exp, "tanh": np.tanh, "atan": np.arctan,
            "sqrt": np.sqrt, "pow": np.power}[op](*args)


def evaluate(e: Expr, variables: dict, coeffs) -> float | np.ndarray:
    """Evaluate ``e`` at one point or element-wise over arrays.

    ``variables`` maps ``fs, vin, d, rt`` to scalars or equal-length arrays.
    The first node (bottom-up) producing a non-finite value raises
    ``EvalDomain`` with that node and the offending point.
    """
    coeffs = np.asarray(coeffs, dtype=float).ravel()
    need = e.n_coefficients
    if coeffs.size < need:
        raise MissingCoefficient(f"expression uses p{need - 1}, got {coeffs.size} coefficients")
    used = {n.op for n in e.walk() if n.is_variable}
    missing = sorted(used - set(variables))
    if missing:
        raise KeyError(f"no value for variable(s) {missing}")
    vals = {k: np.asarray(v, dtype=float) for k, v in variables.items() if k in VARIABLES}
    with np.errstate(all="ignore"):
        out = _eval_node(e, vals, coeffs)
    if np.ndim(out) == 0 and all(np.ndim(v) == 0 for v in vals.values()):
        return float(out)
    shape = np.broadcast_shapes(np.shape(out), *(np.shape(v) for v in vals.values()))
    return np.broadcast_to(out, shape).astype(float)


def _eval_node(e, vals, coeffs):
    if e.is_variable:
        return vals[e.op]
    if e.is_coefficient:
        return coeffs[e.index]
    args = [_eval_node(a, vals, coeffs) for a in e.args]
    out = _apply(e.op, args)
    bad = ~np.isfinite(out)
    if np.any(bad):
        raise EvalDomain(_point_of(vals, bad), serialize(e))
    return out


def _point_of(vals, bad):
    if np.ndim(bad) == 0:
        return {k: float(np.ravel(v)[0]) if np.size(v) == 1 else v for k, v in vals.items()}
    idx = int(np.flatnonzero(bad)[0])
    return {k: float(np.broadcast_to(v, np.shape(bad)).ravel()[idx]) for k, v in vals.items()}


def _source(e: Expr) -> str:
    if e.is_variable:
        return e.op
    if e.is_coefficient:
        return f"p[{e.index}]"
    args = [_source(a) for a in e.args]
    if e.op == "neg":
        return f"(-{args[0]})"
    if e.op in _INFIX:
        return f"({args[0]} {_INFIX[e.op]} {args[1]})"
    return f"{_NUMPY_FN[e.op]}({', '.join(args)})"


@functools.lru_cache(maxsize=65536)
def _compile_text(text: str):
    src = _source(parse(text))
    return eval(f"lambda fs, vin, d, rt, p: {src}", {"np": np})


def compile_expr(e: Expr):
    """Fast vectorized evaluator ``f(fs, vin, d, rt, p)`` without domain checks.

    ``p`` is indexed along its first axis, so a ``(K, B, 1)`` coefficient
    stack against ``(n,)`` variables yields a ``(B, n)`` batch in one call.
    Callers handle non-finite results themselves.
    """
    return _compile_text(serialize(e))


# -- complexity --------------------------------------------------------------

@dataclass(frozen=True)
class ComplexityTable:
    """Complexity factor per node kind.

    ``variable_product`` replaces the product factor when two or more input
    variables are multiplied directly with each other.
    """

    cf: dict = field(default_factory=lambda: {
        "add": 1.0, "mul": 1.0, "sub": 1.0, "div": 1.5, "pow": 1.5,
        "log": 1.5, "exp": 1.5, "atan": 1.5, "tanh": 1.5, "sqrt": 1.5, "neg": 1.0,
    })
    variable: float = 1.0
    coefficient: float = 1.0
    variable_product: float = 0.6

    def __post_init__(self):
        values = list(self.cf.values()) + [self.variable, self.coefficient, self.variable_product]
        if any(not v > 0 for v in values):
            raise ValueError("complexity factors must be > 0")
        missing = set(UNARY + BINARY) - set(self.cf)
        if missing:
            raise ValueError(f"complexity table lacks {sorted(missing)}")


DEFAULT_COMPLEXITY = ComplexityTable()


def _flatten(e: Expr, op: str) -> list[Expr]:
    if e.op != op:
        return [e]
    return _flatten(e.args[0], op) + _flatten(e.args[1], op)


def complexity(e: Expr, table: ComplexityTable = DEFAULT_COMPLEXITY) -> float:
    """Global complexity score of a tree.

    Nesting multiplies factors (``log(x)`` scores ``cf(log) * score(x)``);
    sums and products add the operand scores and scale by the operator
    factor. Chains of the same sum/product are scored as one n-ary node, so
    the score does not depend on how the chain is associated. Within a
    product, the plain input variables (two or more) form a group scored with
    the discounted ``variable_product`` factor.
    """
    if e.is_variable:
        return table.variable
    if e.is_coefficient:
        return table.coefficient
    if e.op in COMMUTATIVE:
        operands = _flatten(e, e.op)
        if e.op == "mul":
            vs = [o for o in operands if o.is_variable]
            if len(vs) >= 2:
                group = table.variable * len(vs) * table.variable_product
                rest = [o for o in operands if not o.is_variable]
                if not rest:
                    return group
                return math.fsum([group] + [complexity(o, table) for o in rest]) * table.cf["mul"]
        # fsum keeps the score independent of operand order
        return math.fsum(complexity(o, table) for o in operands) * table.cf[e.op]
    if e.op in UNARY:
        return table.cf[e.op] * complexity(e.args[0], table)
    return (complexity(e.args[0], table) + complexity(e.args[1], table)) * table.cf[e.op]


# -- canonical form ----------------------------------------------------------

def _shape_key(e: Expr) -> str:
    """Serialization with anonymous coefficients: the operand sort key."""
    if e.is_coefficient:
        return "p"
    if e.is_leaf:
        return e.op
    return "(" + " ".join([e.op] + [_shape_key(a) for a in e.args]) + ")"


def _canon_structure(e: Expr) -> Expr:
    if e.is_leaf:
        return e
    args = tuple(_canon_structure(a) for a in e.args)
    if e.op == "neg" and args[0].op == "neg":
        return args[0].args[0]
    if e.op in COMMUTATIVE:
        operands = []
        for a in args:
            operands.extend(_flatten(a, e.op))
        operands.sort(key=_shape_key)
        out = operands[0]
        for o in operands[1:]:
            out = Expr(e.op, (out, o))
        return out
    return Expr(e.op, args)


def _renumber(e: Expr, mapping: dict) -> Expr:
    if e.is_coefficient:
        if e.index not in mapping:
            mapping[e.index] = len(mapping)
        return coef(mapping[e.index])
    if e.is_leaf:
        return e
    return Expr(e.op, tuple(_renumber(a, mapping) for a in e.args))


def canonicalize(e: Expr) -> tuple[Expr, str]:
    """Canonical tree and its string.

    Sum and product chains are flattened, their operands sorted by shape and
    rebuilt left-deep; ``neg(neg(x))`` collapses to ``x``; coefficients are
    renumbered 0..K-1 by first appearance. Trees equal up to commutativity
    and association of sums/products map to the same string.
    """
    c = _renumber(_canon_structure(e), {})
    return c, serialize(c)


def canonical_string(e: Expr) -> str:
    return canonicalize(e)[1]


def violates_limits(e: Expr, max_depth: int, max_coefficients: int,
                    variable_pow: bool = False) -> str | None:
    """Reason string when ``e`` breaks a structural limit, else ``None``."""
    if e.depth > max_depth:
        return f"depth {e.depth} > {max_depth}"
    if len(e.coefficient_indices()) > max_coefficients:
        return f"{len(e.coefficient_indices())} coefficients > {max_coefficients}"
    if not variable_pow:
        for n in e.walk():
            if n.op == "pow" and n.args[1].has_variable():
                return "pow exponent contains a variable"
    return None
