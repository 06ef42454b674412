"""A small expression language for Lagrangians.

Expressions range over ``t``, ``x1..xm`` (the dependent variables),
``d1..dm`` (their left Caputo-Katugampola derivatives), ``z`` (the Herglotz
state) and user parameters. Grammar, whitespace-insensitive::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | power
    power  := atom ('^' factor)?          # right-associative
    atom   := number | identifier | fn '(' expr ')' | '(' expr ')'

``fn`` is one of sin, cos, exp, ln, sqrt, abs, sign. ``pi`` is a reserved
constant. Unary minus binds looser than ``^``, so ``-d1^2`` is ``-(d1^2)``.

Evaluation accepts scalars or numpy arrays for every binding and is
vectorized elementwise.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from .errors import EvalError, ParseError, UnboundVariable, UnknownIdentifier

__all__ = [
    "Expr",
    "Const",
    "Var",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Neg",
    "Call",
    "FUNCTIONS",
    "parse",
    "to_string",
    "evaluate",
    "diff",
    "free_vars",
    "Lagrangian",
]

FUNCTIONS = ("sin", "cos", "exp", "ln", "sqrt", "abs", "sign")


class Expr:
    """Base class of expression nodes. Nodes are immutable and hashable."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_string(self)

    def __add__(self, other):
        return Add(self, _lift(other))

    def __sub__(self, other):
        return Sub(self, _lift(other))

    def __mul__(self, other):
        return Mul(self, _lift(other))

    def __truediv__(self, other):
        return Div(self, _lift(other))

    def __neg__(self):
        return Neg(self)

    def __pow__(self, other):
        return Pow(self, _lift(other))


def _lift(v) -> Expr:
    return v if isinstance(v, Expr) else Const(float(v))


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Add(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Sub(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Mul(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Div(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: Expr


@dataclass(frozen=True)
class Neg(Expr):
    operand: Expr


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    arg: Expr


# ---------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)


def _tokenize(src: str):
    tokens = []
    pos = 0
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", _byte_offset(src, pos), "a number, name or operator")
        kind = m.lastgroup
        if kind != "ws":
            tokens.append((kind, m.group(), pos))
        pos = m.end()
    tokens.append(("end", "", len(src)))
    return tokens


def _byte_offset(src: str, pos: int) -> int:
    return len(src[:pos].encode("utf-8"))


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def fail(self, expected: str):
        kind, text, pos = self.tok
        found = "end of input" if kind == "end" else repr(text)
        raise ParseError(f"expected {expected}, found {found}", _byte_offset(self.src, pos), expected)

    def accept(self, op: str) -> bool:
        if self.tok[0] == "op" and self.tok[1] == op:
            self.i += 1
            return True
        return False

    def expr(self) -> Expr:
        node = self.term()
        while True:
            if self.accept("+"):
                node = Add(node, self.term())
            elif self.accept("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            if self.accept("*"):
                node = Mul(node, self.factor())
            elif self.accept("/"):
                node = Div(node, self.factor())
            else:
                return node

    def factor(self) -> Expr:
        if self.accept("-"):
            return Neg(self.factor())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.accept("^"):
            return Pow(base, self.factor())
        return base

    def atom(self) -> Expr:
        kind, text, _ = self.tok
        if kind == "num":
            self.i += 1
            return Const(float(text))
        if kind == "id":
            self.i += 1
            if self.tok[0] == "op" and self.tok[1] == "(":
                if text not in FUNCTIONS:
                    self.i -= 1
                    self.fail("one of the functions " + ", ".join(FUNCTIONS))
                self.i += 1
                arg = self.expr()
                if not self.accept(")"):
                    self.fail("')'")
                return Call(text, arg)
            if text == "pi":
                return Const(math.pi)
            if text in FUNCTIONS:
                self.fail(f"'(' after {text}")
            return Var(text)
        if self.accept("("):
            node = self.expr()
            if not self.accept(")"):
                self.fail("')'")
            return node
        self.fail("a number, name, function call or '('")


def parse(src: str) -> Expr:
    """Parse ``src`` into an expression tree; raises :class:`ParseError`."""
    if not src or not src.strip():
        raise ParseError("empty expression", 0, "an expression")
    p = _Parser(src)
    node = p.expr()
    if p.tok[0] != "end":
        p.fail("an operator or end of input")
    return node


# --------------------------------------------------------------- printing

_PREC = {Add: 1, Sub: 1, Mul: 2, Div: 2, Neg: 3, Pow: 4}


def _fmt_number(v: float) -> str:
    if v == int(v) and abs(v) < 1e16:
        s = str(int(v))
    else:
        s = repr(v)
    return f"({s})" if v < 0 or s.startswith("-") else s


def to_string(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_string(e))`` rebuilds the same tree."""
    return _emit(e, 0)


def _emit(e: Expr, min_prec: int) -> str:
    if isinstance(e, Const):
        return _fmt_number(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.fn}({_emit(e.arg, 0)})"
    prec = _PREC[type(e)]
    if isinstance(e, (Add, Sub)):
        op = " + " if isinstance(e, Add) else " - "
        s = _emit(e.left, 1) + op + _emit(e.right, 2)
    elif isinstance(e, (Mul, Div)):
        op = "*" if isinstance(e, Mul) else "/"
        s = _emit(e.left, 2) + op + _emit(e.right, 3)
    elif isinstance(e, Neg):
        s = "-" + _emit(e.operand, 3)
    else:  # Pow
        s = _emit(e.base, 5) + "^" + _emit(e.exponent, 3)
    return f"({s})" if prec < min_prec else s


# ------------------------------------------------------------- evaluation


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, (Neg,)):
        return free_vars(e.operand)
    if isinstance(e, Call):
        return free_vars(e.arg)
    if isinstance(e, Pow):
        return free_vars(e.base) | free_vars(e.exponent)
    return free_vars(e.left) | free_vars(e.right)


def _first(mask) -> int | None:
    if np.ndim(mask) == 0:
        return None
    return int(np.flatnonzero(mask)[0])


def _check(mask, kind: str, detail: str = ""):
    if np.any(mask):
        raise EvalError(kind, _first(mask), detail)


def evaluate(e: Expr, bindings: Mapping[str, object]):
    """Evaluate ``e`` in IEEE double precision.

    Raises :class:`EvalError` on division by zero, ``ln`` of a non-positive
    number, ``sqrt`` of a negative number, a negative base under a
    non-integer power, or any non-finite result. Array bindings give array
    results; ``EvalError.index`` then points at the first bad element.
    """
    with np.errstate(all="ignore"):
        out = _eval(e, bindings)
    _check(~np.isfinite(out), "NonFinite")
    return out


def _eval(e: Expr, env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariable(e.name) from None
    if isinstance(e, Add):
        return _eval(e.left, env) + _eval(e.right, env)
    if isinstance(e, Sub):
        return _eval(e.left, env) - _eval(e.right, env)
    if isinstance(e, Mul):
        return _eval(e.left, env) * _eval(e.right, env)
    if isinstance(e, Div):
        num = _eval(e.left, env)
        den = _eval(e.right, env)
        _check(np.asarray(den) == 0, "Div0")
        return np.divide(num, den)
    if isinstance(e, Neg):
        return -_eval(e.operand, env)
    if isinstance(e, Pow):
        base = _eval(e.base, env)
        ex = _eval(e.exponent, env)
        b_arr, e_arr = np.asarray(base), np.asarray(ex)
        _check((b_arr < 0) & (e_arr != np.round(e_arr)), "PowDomain", "negative base with non-integer exponent")
        _check((b_arr == 0) & (e_arr < 0), "Div0", "zero to a negative power")
        return np.power(np.asarray(base, dtype=float), ex) if np.ndim(base) or np.ndim(ex) else float(base) ** float(ex)
    if isinstance(e, Call):
        v = _eval(e.arg, env)
        fn = e.fn
        if fn == "sin":
            return np.sin(v)
        if fn == "cos":
            return np.cos(v)
        if fn == "exp":
            return np.exp(v)
        if fn == "ln":
            _check(np.asarray(v) <= 0, "LnNonPositive")
            return np.log(v)
        if fn == "sqrt":
            _check(np.asarray(v) < 0, "SqrtNegative")
            return np.sqrt(v)
        if fn == "abs":
            return np.abs(v)
        if fn == "sign":
            return np.sign(v)
    raise TypeError(f"not an expression node: {e!r}")


# -------------------------------------------------------- differentiation

_ZERO = Const(0.0)
_ONE = Const(1.0)


def _is(e: Expr, v: float) -> bool:
    return isinstance(e, Const) and e.value == v


def _add(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(b, Neg):
        return _sub(a, b.operand)
    return Add(a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return Sub(a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.operand
    return Neg(a)


def _mul(a: Expr, b: Expr) -> Expr:
    if _is(a, 0) or _is(b, 0):
        return _ZERO
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if _is(a, -1):
        return _neg(b)
    if _is(b, -1):
        return _neg(a)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if isinstance(b, Const) and not isinstance(a, Const):
        return _mul(b, a)
    if isinstance(a, Const) and isinstance(b, Mul) and isinstance(b.left, Const):
        return _mul(Const(a.value * b.left.value), b.right)
    return Mul(a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if _is(a, 0):
        return _ZERO
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return Div(a, b)


def _pow(a: Expr, b: Expr) -> Expr:
    if _is(b, 0):
        return _ONE
    if _is(b, 1):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        try:
            v = evaluate(Pow(a, b), {})
            return Const(float(v))
        except EvalError:
            pass
    return Pow(a, b)


def diff(e: Expr, var: str) -> Expr:
    """Exact symbolic derivative of ``e`` with respect to ``var``.

    Simplification is local (constant folding, 0 and 1 identities) and aims
    only at keeping trees small. ``abs`` differentiates to ``sign``, which is
    0 at 0.
    """
    return _d(e, var)


def _d(e: Expr, v: str) -> Expr:
    if isinstance(e, Const):
        return _ZERO
    if isinstance(e, Var):
        return _ONE if e.name == v else _ZERO
    if isinstance(e, Add):
        return _add(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Sub):
        return _sub(_d(e.left, v), _d(e.right, v))
    if isinstance(e, Neg):
        return _neg(_d(e.operand, v))
    if isinstance(e, Mul):
        return _add(_mul(_d(e.left, v), e.right), _mul(e.left, _d(e.right, v)))
    if isinstance(e, Div):
        du, dw = _d(e.left, v), _d(e.right, v)
        if _is(dw, 0):
            return _div(du, e.right)
        return _div(_sub(_mul(du, e.right), _mul(e.left, dw)), _pow(e.right, Const(2.0)))
    if isinstance(e, Pow):
        u, w = e.base, e.exponent
        du, dw = _d(u, v), _d(w, v)
        if _is(dw, 0):
            if _is(du, 0):
                return _ZERO
            return _mul(_mul(w, _pow(u, _sub(w, _ONE))), du)
        if _is(du, 0):
            return _mul(_mul(e, Call("ln", u)), dw)
        return _mul(e, _add(_mul(dw, Call("ln", u)), _div(_mul(w, du), u)))
    if isinstance(e, Call):
        u = e.arg
        du = _d(u, v)
        if _is(du, 0) or e.fn == "sign":
            return _ZERO
        if e.fn == "sin":
            outer = Call("cos", u)
        elif e.fn == "cos":
            outer = _neg(Call("sin", u))
        elif e.fn == "exp":
            outer = e
        elif e.fn == "ln":
            return _div(du, u)
        elif e.fn == "sqrt":
            return _div(du, _mul(Const(2.0), e))
        elif e.fn == "abs":
            outer = Call("sign", u)
        else:
            raise TypeError(f"unknown function {e.fn}")
        return _mul(outer, du)
    raise TypeError(f"not an expression node: {e!r}")


# ------------------------------------------------------------- Lagrangian


def _state_names(m: int, has_z: bool) -> tuple[str, ...]:
    names = ["t"] + [f"x{i}" for i in range(1, m + 1)] + [f"d{i}" for i in range(1, m + 1)]
    if has_z:
        names.append("z")
    return tuple(names)


@dataclass(frozen=True, eq=False)
class Lagrangian:
    """``L(t, x1..xm, d1..dm[, z])`` with named constant parameters.

    Partial derivatives are built symbolically on first use and cached.
    """

    expr: Expr
    m: int = 1
    has_z: bool = False
    params: Mapping[str, float] = field(default_factory=dict)
    _partials: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("a Lagrangian needs at least one dependent variable")
        reserved = set(_state_names(self.m, True)) | {"pi"}
        clash = reserved & set(self.params)
        if clash:
            raise ValueError("parameter names clash with reserved variables: " + ", ".join(sorted(clash)))
        unknown = free_vars(self.expr) - set(self.declared)
        if unknown:
            raise UnknownIdentifier(unknown)
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_source(cls, src: str, m: int = 1, has_z: bool = False, params: Mapping[str, float] | None = None):
        return cls(parse(src), m, has_z, dict(params or {}))

    @cached_property
    def declared(self) -> tuple[str, ...]:
        return _state_names(self.m, self.has_z) + tuple(self.params)

    def x_name(self, i: int) -> str:
        return f"x{i + 1}"

    def d_name(self, i: int) -> str:
        return f"d{i + 1}"

    def partial(self, *names: str) -> Expr:
        """Repeated partial derivative, e.g. ``partial('d1', 'd1')``."""
        key = tuple(names)
        out = self._partials.get(key)
        if out is None:
            out = self.expr if not key else diff(self.partial(*key[:-1]), key[-1])
            self._partials[key] = out
        return out

    def bindings(self, t, x, d, z=None) -> dict:
        env = dict(self.params)
        env["t"] = t
        for i in range(self.m):
            env[self.x_name(i)] = x[i]
            env[self.d_name(i)] = d[i]
        if self.has_z:
            env["z"] = 0.0 if z is None else z
        return env

    def eval(self, expr: Expr, t, x, d, z=None):
        """Evaluate ``expr`` (``self.expr`` or a partial) along a trajectory.

        Results are broadcast to the shape of ``t`` so constant partials come
        back as full arrays.
        """
        out = evaluate(expr, self.bindings(t, x, d, z))
        return np.broadcast_to(np.asarray(out, dtype=float), np.shape(t)).copy() if np.ndim(t) else float(out)

    def depends_on(self, name: str) -> bool:
        return name in free_vars(self.expr)

    def __add__(self, other: "Lagrangian") -> "Lagrangian":
        if other.m != self.m:
            raise ValueError("Lagrangians with different numbers of variables")
        params = dict(self.params)
        params.update(other.params)
        return Lagrangian(Add(self.expr, other.expr), self.m, self.has_z or other.has_z, params)

    def scaled(self, c: float) -> "Lagrangian":
        return Lagrangian(Mul(Const(float(c)), self.expr), self.m, self.has_z, dict(self.params))
