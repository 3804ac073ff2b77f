"""Scalar expressions: parser, printer, evaluator and symbolic derivative.

Grammar, from tightest to loosest binding::

    atom     := NUMBER | NAME | NAME "(" sum ")" | "(" sum ")"
    power    := atom ["^" unary]          (right-associative)
    unary    := "-" unary | power
    product  := unary (("*" | "/") unary)*
    sum      := product (("+" | "-") product)*

Identifiers declared as parameters become ``Param`` nodes, everything else is
a ``Var``. ``pi`` is a literal. Evaluation goes through numpy ufuncs, so the
same compiled expression accepts scalars or whole sample arrays, and
division by zero or ``log`` of a non-positive value yields IEEE inf/nan
instead of raising.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Callable, Iterable, Mapping, Union

import numpy as np
from numpy.polynomial import Polynomial

from .errors import ExpressionSyntaxError, UnboundSymbol, UnknownFunction


# ── AST ─────────────────────────────────────────────


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Param:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: Expression


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Call:
    func: str
    arg: Expression


Expression = Union[Num, Var, Param, Neg, BinOp, Call]

ZERO = Num(0.0)
ONE = Num(1.0)
TWO = Num(2.0)


@dataclass(frozen=True)
class Environment:
    """Bindings for one evaluation: variables and parameters kept apart."""

    variables: Mapping[str, Any]
    params: Mapping[str, Any] = field(default_factory=dict)


# ── Function table ──────────────────────────────────

_UNARY: dict[str, np.ufunc] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "sinh": np.sinh,
    "cosh": np.cosh,
    "tanh": np.tanh,
    "atan": np.arctan,
}

_BINARY: dict[str, np.ufunc] = {
    "+": np.add,
    "-": np.subtract,
    "*": np.multiply,
    "/": np.divide,
    "^": np.power,
}

_FLATSTEP = re.compile(r"flatstep(?:_d(\d+))?$")

# exp(-1/t^2) underflows to exactly 0.0 for |t| below this
_FLAT_CUTOFF = 0.03


@lru_cache(maxsize=None)
def _flatstep_polynomial(order: int) -> Polynomial:
    # d/dt [P(s) e^{-s^2}] with s = 1/t gives P'(s)(-s^2) + 2 s^3 P(s)
    if order == 0:
        return Polynomial([1.0])
    prev = _flatstep_polynomial(order - 1)
    s = Polynomial([0.0, 1.0])
    return -(s**2) * prev.deriv() + 2.0 * s**3 * prev


def flatstep(t: Any, order: int = 0) -> Any:
    """``exp(-1/t^2)`` for t < 0 glued to 0 for t >= 0, or its k-th derivative."""
    t = np.asarray(t, dtype=float)
    active = t < -_FLAT_CUTOFF
    safe = np.where(active, t, -1.0)
    s = 1.0 / safe
    value = _flatstep_polynomial(order)(s) * np.exp(-(s * s))
    return np.where(active, value, 0.0)[()]


def _flatstep_order(name: str) -> int | None:
    match = _FLATSTEP.match(name)
    if match is None:
        return None
    return int(match.group(1)) if match.group(1) else 0


def _flatstep_name(order: int) -> str:
    return "flatstep" if order == 0 else f"flatstep_d{order}"


def is_function(name: str) -> bool:
    return name in _UNARY or _flatstep_order(name) is not None


def _function(name: str) -> Callable[[Any], Any]:
    if name in _UNARY:
        return _UNARY[name]
    order = _flatstep_order(name)
    if order is None:
        raise UnknownFunction(name)
    return lambda x: flatstep(x, order)


# ── Parser ──────────────────────────────────────────

_TOKEN = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | name | op | end
    text: str
    offset: int


def _byte_offset(source: str, index: int) -> int:
    return len(source[:index].encode("utf-8"))


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(source):
        if source[pos].isspace():
            pos += 1
            continue
        match = _TOKEN.match(source, pos)
        if match is None:
            raise ExpressionSyntaxError(
                f"unexpected character {source[pos]!r}", _byte_offset(source, pos), source
            )
        kind = match.lastgroup or "op"
        tokens.append(_Token(kind, match.group(), _byte_offset(source, pos)))
        pos = match.end()
    tokens.append(_Token("end", "", _byte_offset(source, len(source))))
    return tokens


class _Parser:
    def __init__(self, source: str, params: frozenset[str]) -> None:
        self.source = source
        self.params = params
        self.tokens = _tokenize(source)
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def _error(self, token: _Token) -> ExpressionSyntaxError:
        if token.kind == "end":
            return ExpressionSyntaxError("unexpected end of input", token.offset, self.source)
        return ExpressionSyntaxError(f"unexpected token {token.text!r}", token.offset, self.source)

    def _expect(self, text: str) -> None:
        if self.current.kind != "op" or self.current.text != text:
            raise self._error(self.current)
        self._advance()

    def _at(self, *ops: str) -> bool:
        return self.current.kind == "op" and self.current.text in ops

    def parse(self) -> Expression:
        tree = self._sum()
        if self.current.kind != "end":
            raise self._error(self.current)
        return tree

    def _sum(self) -> Expression:
        left = self._product()
        while self._at("+", "-"):
            op = self._advance().text
            left = BinOp(op, left, self._product())
        return left

    def _product(self) -> Expression:
        left = self._unary()
        while self._at("*", "/"):
            op = self._advance().text
            left = BinOp(op, left, self._unary())
        return left

    def _unary(self) -> Expression:
        if self._at("-"):
            self._advance()
            return Neg(self._unary())
        return self._power()

    def _power(self) -> Expression:
        base = self._atom()
        if self._at("^"):
            self._advance()
            return BinOp("^", base, self._unary())
        return base

    def _atom(self) -> Expression:
        token = self.current
        if token.kind == "num":
            self._advance()
            return Num(float(token.text))
        if token.kind == "name":
            self._advance()
            if self._at("("):
                if not is_function(token.text):
                    raise UnknownFunction(token.text, token.offset)
                self._advance()
                arg = self._sum()
                self._expect(")")
                return Call(token.text, arg)
            if token.text in self.params:
                return Param(token.text)
            if token.text == "pi":
                return Num(math.pi)
            return Var(token.text)
        if self._at("("):
            self._advance()
            inner = self._sum()
            self._expect(")")
            return inner
        raise self._error(token)


def parse(source: str, params: Iterable[str] = ()) -> Expression:
    """Parse ``source`` into an AST; names in ``params`` become parameters."""
    return _Parser(source, frozenset(params)).parse()


# ── Printer ─────────────────────────────────────────


def _precedence(e: Expression) -> int:
    if isinstance(e, BinOp):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[e.op]
    if isinstance(e, Neg):
        return 3
    return 5


def to_source(e: Expression) -> str:
    """Print an expression so that ``parse`` rebuilds the same tree."""
    if isinstance(e, Num):
        text = repr(float(e.value))
        return f"({text})" if e.value < 0 or text.startswith("-") else text
    if isinstance(e, (Var, Param)):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    if isinstance(e, Neg):
        inner = to_source(e.operand)
        if _precedence(e.operand) < 3:
            inner = f"({inner})"
        return "-" + inner

    left, right = to_source(e.left), to_source(e.right)
    if e.op == "^":
        if _precedence(e.left) <= 4:
            left = f"({left})"
        if _precedence(e.right) < 3:
            right = f"({right})"
        return f"{left}^{right}"
    level = _precedence(e)
    if _precedence(e.left) < level:
        left = f"({left})"
    if _precedence(e.right) <= level:
        right = f"({right})"
    return f"{left}{e.op}{right}"


# ── Symbols ─────────────────────────────────────────


def free_symbols(e: Expression) -> tuple[frozenset[str], frozenset[str]]:
    """(variables, parameters) occurring in ``e``."""
    variables: set[str] = set()
    params: set[str] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            variables.add(node.name)
        elif isinstance(node, Param):
            params.add(node.name)
        elif isinstance(node, Neg):
            stack.append(node.operand)
        elif isinstance(node, BinOp):
            stack.extend((node.left, node.right))
        elif isinstance(node, Call):
            stack.append(node.arg)
    return frozenset(variables), frozenset(params)


# ── Evaluation ──────────────────────────────────────

Compiled = Callable[[Mapping[str, Any], Mapping[str, Any]], Any]


def compile_expression(e: Expression) -> Compiled:
    """Turn the tree into nested closures ``f(variables, params)``.

    Callers wrap calls in ``np.errstate(all="ignore")`` when they want
    silent IEEE propagation.
    """
    if isinstance(e, Num):
        value = np.float64(e.value)
        return lambda variables, params: value

    if isinstance(e, Var):
        name = e.name

        def variable(variables: Mapping[str, Any], params: Mapping[str, Any]) -> Any:
            try:
                return variables[name]
            except KeyError:
                raise UnboundSymbol(name) from None

        return variable

    if isinstance(e, Param):
        pname = e.name

        def parameter(variables: Mapping[str, Any], params: Mapping[str, Any]) -> Any:
            try:
                return params[pname]
            except KeyError:
                raise UnboundSymbol(pname) from None

        return parameter

    if isinstance(e, Neg):
        inner = compile_expression(e.operand)
        return lambda variables, params: np.negative(inner(variables, params))

    if isinstance(e, BinOp):
        ufunc = _BINARY[e.op]
        left = compile_expression(e.left)
        right = compile_expression(e.right)
        return lambda variables, params: ufunc(left(variables, params), right(variables, params))

    if isinstance(e, Call):
        fn = _function(e.func)
        arg = compile_expression(e.arg)
        return lambda variables, params: fn(arg(variables, params))

    raise TypeError(f"not an expression node: {e!r}")


def _as_float(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.astype(float, copy=False)
    return np.float64(value)


def evaluate(e: Expression | str, env: Environment | Mapping[str, Any]) -> Any:
    """Evaluate with IEEE semantics; a plain mapping binds variables and parameters alike."""
    if isinstance(e, str):
        e = parse(e)
    if isinstance(env, Environment):
        variables = {k: _as_float(v) for k, v in env.variables.items()}
        params = {k: _as_float(v) for k, v in env.params.items()}
    else:
        variables = params = {k: _as_float(v) for k, v in env.items()}
    with np.errstate(all="ignore"):
        return compile_expression(e)(variables, params)


# ── Tree builders with constant folding ─────────────


def _fold(op: Callable[..., Any], *values: float) -> Num | None:
    with np.errstate(all="ignore"):
        result = float(op(*values))
    return Num(result) if math.isfinite(result) else None


def _is(e: Expression, value: float) -> bool:
    return isinstance(e, Num) and e.value == value


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        folded = _fold(np.add, a.value, b.value)
        if folded is not None:
            return folded
    if _is(a, 0.0):
        return b
    if _is(b, 0.0):
        return a
    return BinOp("+", a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        folded = _fold(np.subtract, a.value, b.value)
        if folded is not None:
            return folded
    if _is(b, 0.0):
        return a
    if _is(a, 0.0):
        return neg(b)
    return BinOp("-", a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        folded = _fold(np.multiply, a.value, b.value)
        if folded is not None:
            return folded
    if _is(a, 0.0) or _is(b, 0.0):
        return ZERO
    if _is(a, 1.0):
        return b
    if _is(b, 1.0):
        return a
    return BinOp("*", a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num) and b.value != 0.0:
        folded = _fold(np.divide, a.value, b.value)
        if folded is not None:
            return folded
    if _is(b, 1.0):
        return a
    if _is(a, 0.0) and not isinstance(b, Num):
        return ZERO
    return BinOp("/", a, b)


def power(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Num) and isinstance(b, Num):
        folded = _fold(np.power, a.value, b.value)
        if folded is not None:
            return folded
    if _is(b, 0.0):
        return ONE
    if _is(b, 1.0):
        return a
    return BinOp("^", a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Num):
        return Num(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def call(func: str, arg: Expression) -> Expression:
    if isinstance(arg, Num):
        folded = _fold(_function(func), arg.value)
        if folded is not None:
            return folded
    return Call(func, arg)


# ── Differentiation ─────────────────────────────────


def _outer_derivative(func: str, u: Expression) -> Expression:
    if func == "sin":
        return call("cos", u)
    if func == "cos":
        return neg(call("sin", u))
    if func == "tan":
        return div(ONE, power(call("cos", u), TWO))
    if func == "exp":
        return call("exp", u)
    if func == "log":
        return div(ONE, u)
    if func == "sqrt":
        return div(Num(0.5), call("sqrt", u))
    if func == "sinh":
        return call("cosh", u)
    if func == "cosh":
        return call("sinh", u)
    if func == "tanh":
        return sub(ONE, power(call("tanh", u), TWO))
    if func == "atan":
        return div(ONE, add(ONE, power(u, TWO)))
    order = _flatstep_order(func)
    if order is not None:
        return call(_flatstep_name(order + 1), u)
    raise UnknownFunction(func)


def differentiate(e: Expression, var: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to variable ``var``."""
    if isinstance(e, (Num, Param)):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.operand, var))
    if isinstance(e, Call):
        du = differentiate(e.arg, var)
        if _is(du, 0.0):
            return ZERO
        return mul(_outer_derivative(e.func, e.arg), du)

    a, b = e.left, e.right
    da = differentiate(a, var)
    db = differentiate(b, var)
    if e.op == "+":
        return add(da, db)
    if e.op == "-":
        return sub(da, db)
    if e.op == "*":
        return add(mul(da, b), mul(a, db))
    if e.op == "/":
        return div(sub(mul(da, b), mul(a, db)), power(b, TWO))
    # power rule; general form only when the exponent depends on var
    if var not in free_symbols(b)[0]:
        return mul(mul(b, power(a, sub(b, ONE))), da)
    return mul(e, add(mul(db, call("log", a)), div(mul(b, da), a)))
