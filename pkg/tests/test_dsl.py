import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracvar.dsl import (
    Add,
    Call,
    Const,
    Div,
    Lagrangian,
    Mul,
    Neg,
    Pow,
    Sub,
    Var,
    diff,
    evaluate,
    free_vars,
    parse,
    to_string,
)
from fracvar.errors import EvalError, ParseError, UnboundVariable, UnknownIdentifier

CORPUS = Path(__file__).with_name("data").joinpath("dsl_corpus.txt").read_text().splitlines()
VARIABLES = ("t", "x1", "x2", "d1", "d2", "z", "c", "k")


def random_bindings(rng, size):
    return {v: rng.uniform(1, 2, size) if v == "t" else rng.uniform(-1.5, 1.5, size) for v in VARIABLES}


def fd_relative_error(e, var, env):
    """Max relative mismatch between diff(e, var) and a central difference."""
    exact = np.asarray(evaluate(diff(e, var), env), dtype=float) * np.ones_like(env["t"])
    h = 1e-6 * np.maximum(1.0, np.abs(env[var]))
    up, dn = dict(env), dict(env)
    up[var] = env[var] + h
    dn[var] = env[var] - h
    fd = (np.asarray(evaluate(e, up)) - np.asarray(evaluate(e, dn))) / (2 * h)
    return float(np.max(np.abs(fd - exact) / np.maximum(1.0, np.abs(exact))))


def test_parse_power():
    assert parse("d1^2") == Pow(Var("d1"), Const(2.0))


def test_parse_sum_root():
    e = parse("(d1 - sin(t))^2 + 0.5*x1^2")
    assert isinstance(e, Add)
    assert e.left == Pow(Sub(Var("d1"), Call("sin", Var("t"))), Const(2.0))
    assert e.right == Mul(Const(0.5), Pow(Var("x1"), Const(2.0)))


def test_precedence_and_associativity():
    assert parse("2^3^2") == Pow(Const(2.0), Pow(Const(3.0), Const(2.0)))
    assert evaluate(parse("2^3^2"), {}) == 512.0
    assert parse("-d1^2") == Neg(Pow(Var("d1"), Const(2.0)))
    assert evaluate(parse("-2^2"), {}) == -4.0
    assert parse("2^-1") == Pow(Const(2.0), Neg(Const(1.0)))
    assert parse("a - b - c") == Sub(Sub(Var("a"), Var("b")), Var("c"))
    assert parse("a / b * c") == Mul(Div(Var("a"), Var("b")), Var("c"))
    assert parse("  1.5e-3 *\tt ") == Mul(Const(1.5e-3), Var("t"))


@pytest.mark.parametrize(
    "src, offset",
    [("x1 + * 2", 5), ("", 0), ("(d1", 3), ("sin x", 4), ("d1 2", 3), ("x1$", 2), ("foo(x1)", 0), ("2 ** 3", 3)],
)
def test_parse_errors(src, offset):
    with pytest.raises(ParseError) as info:
        parse(src)
    assert info.value.offset == offset
    assert info.value.expected
    assert f"offset {offset}" in str(info.value)


def test_parse_error_offset_is_in_bytes():
    with pytest.raises(ParseError) as info:
        parse("(é + 1")
    assert info.value.offset == 1
    with pytest.raises(ParseError) as info:
        parse("1 + é")
    assert info.value.offset == 4


def test_eval_basics():
    assert evaluate(Pow(Var("t"), Const(2)), {"t": 3}) == 9
    assert evaluate(parse("pi"), {}) == 3.141592653589793
    assert evaluate(parse("abs(-2) + sign(-3) + sign(0)"), {}) == 1.0


@pytest.mark.parametrize(
    "src, env, kind",
    [
        ("ln(t)", {"t": 0.0}, "LnNonPositive"),
        ("ln(t)", {"t": -1.0}, "LnNonPositive"),
        ("1/x1", {"x1": 0.0}, "Div0"),
        ("x1^-1", {"x1": 0.0}, "Div0"),
        ("sqrt(x1)", {"x1": -1e-300}, "SqrtNegative"),
        ("x1^0.5", {"x1": -1.0}, "PowDomain"),
        ("exp(x1)", {"x1": 1000.0}, "NonFinite"),
    ],
)
def test_eval_domain_errors(src, env, kind):
    with pytest.raises(EvalError) as info:
        evaluate(parse(src), env)
    assert info.value.kind == kind


def test_negative_base_integer_power_is_fine():
    assert evaluate(parse("(-2)^3"), {}) == -8.0


def test_eval_error_reports_first_index():
    with pytest.raises(EvalError) as info:
        evaluate(parse("ln(t)"), {"t": np.array([1.0, 2.0, 0.0, -1.0])})
    assert info.value.index == 2


def test_unbound_variable():
    with pytest.raises(UnboundVariable):
        evaluate(parse("x1 + y"), {"x1": 1.0})


def test_eval_is_pure():
    e = parse("sin(t)^2 + exp(x1/3) * ln(1 + d1^2)")
    rng = np.random.default_rng(5)
    env = random_bindings(rng, 50)
    first = evaluate(e, env)
    assert np.array_equal(first, evaluate(e, env))
    assert all(np.array_equal(env[v], random_bindings(np.random.default_rng(5), 50)[v]) for v in env)


def test_diff_examples():
    assert diff(parse("d1^2"), "d1") == Mul(Const(2.0), Var("d1"))
    assert diff(diff(parse("d1^2"), "d1"), "d1") == Const(2.0)
    assert diff(parse("x1*sin(t)"), "t") == Mul(Var("x1"), Call("cos", Var("t")))
    assert diff(parse("x1*sin(t)"), "z") == Const(0.0)
    assert diff(parse("abs(d1)"), "d1") == Call("sign", Var("d1"))
    assert diff(parse("sign(d1)"), "d1") == Const(0.0)


def test_diff_fd_at_random_points():
    e = parse("x1*sin(t)")
    rng = np.random.default_rng(11)
    env = random_bindings(rng, 20)
    assert fd_relative_error(e, "t", env) <= 1e-7


def test_free_vars():
    assert free_vars(parse("x1*sin(t) + c*pi")) == {"x1", "t", "c"}


def test_corpus_size_and_coverage():
    assert len(CORPUS) == 100 and len(set(CORPUS)) == 100
    kinds = set()

    def walk(e):
        kinds.add(type(e).__name__ if not isinstance(e, Call) else e.fn)
        for child in vars(e).values():
            if isinstance(child, (Add, Sub, Mul, Div, Pow, Neg, Call, Const, Var)):
                walk(child)

    for src in CORPUS:
        walk(parse(src))
    assert {"Add", "Sub", "Mul", "Div", "Pow", "Neg", "Const", "Var"} <= kinds
    assert {"sin", "cos", "exp", "ln", "sqrt", "abs"} <= kinds


@pytest.mark.parametrize("src", CORPUS)
def test_corpus_round_trip(src):
    e = parse(src)
    assert parse(to_string(e)) == e


_ops = st.sampled_from(["+", "-", "*", "/", "^"])


def _trees():
    leaf = st.one_of(
        st.sampled_from(["t", "x1", "d1", "z", "c", "pi"]),
        st.floats(0, 1e6, allow_nan=False).map(repr),
    )

    def extend(children):
        return st.one_of(
            st.tuples(children, _ops, children).map(lambda p: f"({p[0]}) {p[1]} ({p[2]})"),
            st.tuples(st.sampled_from(["sin", "cos", "exp", "ln", "sqrt", "abs", "sign"]), children).map(
                lambda p: f"{p[0]}({p[1]})"
            ),
            children.map(lambda c: f"-{c}"),
        )

    return st.recursive(leaf, extend, max_leaves=12)


@settings(max_examples=200, deadline=None)
@given(_trees())
def test_round_trip_property(src):
    e = parse(src)
    printed = to_string(e)
    assert parse(printed) == e
    assert to_string(parse(printed)) == printed


def test_lagrangian_declared_names():
    L = Lagrangian.from_source("d1^2 + c*x2 + z", m=2, has_z=True, params={"c": 2.0})
    assert L.declared == ("t", "x1", "x2", "d1", "d2", "z", "c")
    with pytest.raises(UnknownIdentifier) as info:
        Lagrangian.from_source("d1^2 + q")
    assert info.value.names == ["q"]
    with pytest.raises(UnknownIdentifier):
        Lagrangian.from_source("d1 + z")
    with pytest.raises(ValueError):
        Lagrangian.from_source("d1", params={"t": 1.0})


def test_lagrangian_partials_cached_and_broadcast():
    L = Lagrangian.from_source("d1^2 + 3*t")
    assert L.partial("d1", "d1") is L.partial("d1", "d1")
    t = np.linspace(1, 2, 5)
    out = L.eval(L.partial("d1", "d1"), t, [t], [t])
    assert out.shape == (5,) and np.all(out == 2.0)
    assert L.depends_on("d1") and not L.depends_on("x1")
    assert L.eval(L.expr, 1.0, [0.0], [2.0]) == 7.0


def test_lagrangian_combinators():
    L = Lagrangian.from_source("d1^2", params={"a1": 1.0}) + Lagrangian.from_source("b1*x1", params={"b1": 2.0})
    assert L.params == {"a1": 1.0, "b1": 2.0}
    assert L.scaled(3.0).eval(L.scaled(3.0).expr, 1.0, [1.0], [1.0]) == pytest.approx(9.0)


def test_sqrt_fd_matches_near_domain():
    e = parse("sqrt(t) * ln(t)")
    env = {"t": np.linspace(1e-3, 5, 200)}
    assert fd_relative_error(e, "t", env) <= 1e-6
    assert math.isfinite(float(evaluate(diff(e, "t"), {"t": 2.0})))
