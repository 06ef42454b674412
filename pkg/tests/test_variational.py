import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracvar.dsl import Lagrangian, parse
from fracvar.errors import DomainError, EvalError, KindError, ProblemError, SingularConstraint
from fracvar.fracops import FracParams, ck_deriv, right_deriv
from fracvar.grid import SampledFunction, Spacing, make_grid, quad_trapezoid
from fracvar.variational import (
    FREE,
    Fixed,
    Herglotz,
    Holonomic,
    Isoperimetric,
    Problem,
    SplitDomain,
    constraint_defect,
    diagnostics,
    el_residual,
    functional_value,
    herglotz_lambda,
    holonomic_multiplier,
    ibp_defect,
    is_convex,
    legendre_margin,
    straight_line,
    trajectory,
    transversality,
)

TRACK_C = 2**0.5 / math.gamma(1.5)


def make(src, n=32, alpha=0.5, rho=1.5, a=1.0, b=2.0, left=FREE, right=FREE, kind=None, m=1, has_z=False, params=None):
    L = Lagrangian.from_source(src, m=m, has_z=has_z, params=params)
    g = make_grid(a, b, n, rho)
    args = (L, FracParams(alpha, rho), g, left, right)
    return Problem(*args) if kind is None else Problem(*args, kind)


def tracking(n):
    p = make("(d1 - c*(t^2 - 1)^0.5)^2", n=n, rho=2.0, left=Fixed(0.0), right=Fixed(3.0), params={"c": TRACK_C})
    return p, p.grid.nodes[None] ** 2 - 1


# ----------------------------------------------------------------- problem


def test_problem_validation():
    L = Lagrangian.from_source("d1^2")
    g = make_grid(1, 2, 16, 1.5)
    with pytest.raises(ProblemError):
        Problem(L, FracParams(0.5, 2.0), g)
    with pytest.raises(ProblemError):
        Problem(L, FracParams(0.5, 1.5), make_grid(1, 2, 16, 1.5, Spacing.UNIFORM_T))
    with pytest.raises(ProblemError):
        Problem(L, FracParams(0.5, 1.5), g, Fixed([0.0, 1.0]))
    with pytest.raises(ProblemError):
        Problem(L, FracParams(0.5, 1.5), g, 0.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(src="d1^2", kind=SplitDomain(2.0)),
        dict(src="d1^2", kind=SplitDomain(1.0)),
        dict(src="d1^2", kind=SplitDomain(1.3)),
        dict(src="d1^2", n=16, rho=1.0, kind=SplitDomain(1.0625)),
        dict(src="d1^2", rho=1.0, kind=SplitDomain(1.5, (1.0, 2.0))),
        dict(src="d1^2", kind=Holonomic(parse("x2 - x1"))),
        dict(src="d1^2 + d2^2", m=2, kind=Holonomic(parse("x2 - d1"))),
        dict(src="d1^2 + d2^2", m=2, left=Fixed([0.0, 1.0]), kind=Holonomic(parse("x2 - x1"))),
        dict(src="d1^2 + z", has_z=True),
        dict(src="d1^2", left=Fixed(0.0), right=Fixed(1.0), kind=Herglotz(0.0)),
        dict(src="d1^2 + z", has_z=True, left=FREE, right=Fixed(1.0), kind=Herglotz(0.0)),
        dict(src="d1^2", kind=Isoperimetric(Lagrangian.from_source("x1 + x2", m=2), 1.0)),
    ],
)
def test_problem_invariants_rejected(kwargs):
    with pytest.raises(ProblemError):
        make(**kwargs)


def test_problem_helpers():
    p = make("d1^2 + (x1 - t)^2", n=16, rho=1.0, left=Fixed(0.0), right=FREE, kind=SplitDomain(1.5, (1.0,)))
    assert p.split_index == 8
    assert p.fixed_mask().tolist() == [True] + [False] * 7 + [True] + [False] * 8
    w = p.cost_weights()
    assert not w[:8].any() and w[8:].sum() == pytest.approx(0.5)
    assert p.with_params(alpha=0.3).grid is p.grid
    with pytest.raises(ProblemError):
        p.with_params(rho=2.0)  # A = 1.5 is no longer a node
    q = make("d1^2", rho=1.0).with_params(alpha=0.3, rho=2.0)
    assert q.params == FracParams(0.3, 2.0) and q.grid.rho == 2.0 and q.grid.uniform_in_s


def test_straight_line_is_linear_in_s():
    p = make("d1^2", rho=2.0, left=Fixed(1.0), right=Fixed(4.0))
    x = straight_line(p)[0]
    s = p.grid.s_nodes
    np.testing.assert_allclose(np.diff(x) / np.diff(s), 1.0, rtol=1e-12)
    assert not straight_line(make("d1^2")).any()
    assert np.all(straight_line(make("d1^2", left=FREE, right=Fixed(2.0))) == 2.0)


def test_trajectory_shape_checks():
    p = make("d1^2", n=8)
    with pytest.raises(DomainError):
        trajectory(np.zeros(8), p)
    with pytest.raises(DomainError):
        trajectory(SampledFunction(make_grid(1, 3, 8, 1.5), np.zeros(9)), p)


# -------------------------------------------------------------- functional


def test_functional_constant_is_zero():
    p = make("d1^2")
    assert functional_value(np.full(p.grid.size, 2.5), p) == pytest.approx(0.0, abs=1e-25)


def test_functional_of_one_is_length():
    p = make("1 + 0*x1", a=1.5, b=4.0)
    assert functional_value(np.zeros(p.grid.size), p) == pytest.approx(2.5, rel=1e-14)


def test_functional_tracking_minimizer():
    for n in (32, 128):
        p, x = tracking(n)
        assert functional_value(x, p) <= 1e-25


def test_functional_split_uses_right_part_only():
    p = make("1 + 0*x1", n=16, rho=1.0, kind=SplitDomain(1.25))
    assert functional_value(np.zeros(17), p) == pytest.approx(0.75, rel=1e-14)


def test_functional_eval_error_carries_node():
    p = make("ln(x1) + d1^2", n=8)
    x = np.linspace(1, 2, 9)
    x[3] = 0.0
    with pytest.raises(EvalError) as info:
        functional_value(x, p)
    assert info.value.kind == "LnNonPositive" and info.value.index == 3


# -------------------------------------------------------------- residuals


def test_residual_constant_is_zero():
    p = make("d1^2", left=Fixed(1.0), right=Fixed(1.0))
    assert np.abs(el_residual(np.ones(p.grid.size), p).values).max() <= 1e-12


def test_residual_detects_non_extremal():
    p = make("x1")
    r = el_residual(np.sin(p.grid.nodes), p).scalar
    assert np.all(r == 1.0)
    q = make("x1", left=Fixed(0.0), right=Fixed(1.0))
    r = el_residual(np.linspace(0, 1, q.grid.size), q)
    assert r.scalar[0] == r.scalar[-1] == 0.0 and np.all(r.scalar[1:-1] == 1.0)
    assert np.all(el_residual(np.linspace(0, 1, q.grid.size), q, raw=True).scalar == 1.0)


def test_residual_formula():
    p = make("(d1 - t)^2 + x1^2*t", n=24, alpha=0.4, rho=1.2)
    x = np.cos(p.grid.nodes)
    X = SampledFunction(p.grid, x)
    d = ck_deriv(X, p.params).scalar
    expected = 2 * x * p.grid.nodes - right_deriv(SampledFunction(p.grid, 2 * (d - p.grid.nodes)), p.params).scalar
    np.testing.assert_allclose(el_residual(x, p).scalar, expected, rtol=1e-12, atol=1e-12)


def test_tracking_minimizer_residual_is_rounding_level():
    for n in (64, 128, 256):
        p, x = tracking(n)
        assert diagnostics(x, p).el_residual_norm <= 1e-10


def test_residual_norm_definition():
    p = make("(d1 - sin(t))^2 + x1^4", n=40, left=Fixed(0.0))
    x = np.sin(3 * p.grid.nodes)
    dg = diagnostics(x, p)
    r = dg.el_residual.scalar
    assert dg.el_residual_norm == float(np.sqrt(quad_trapezoid(r * r, p.grid)))
    assert dg.el_residual_norms == (dg.el_residual_norm,)


def test_split_residual_uses_both_right_derivatives():
    p = make("d1^2 + (x1 - t)^2", n=16, rho=1.0, left=FREE, right=Fixed(2.0), kind=SplitDomain(1.5))
    x = np.cos(p.grid.nodes)
    r = el_residual(x, p).scalar
    X = SampledFunction(p.grid, x)
    pd = 2 * ck_deriv(X, p.params).scalar
    full = right_deriv(SampledFunction(p.grid, pd), p.params).scalar
    g8 = p.grid.restrict(8)
    part = right_deriv(SampledFunction(g8, pd[:9]), p.params).scalar
    np.testing.assert_allclose(r[:8], part[:8] - full[:8], rtol=1e-12, atol=1e-12)
    plain = 2 * (x - p.grid.nodes) - full
    np.testing.assert_allclose(r[9:-1], plain[9:-1], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------- transversality


def test_transversality_constant():
    p = make("d1^2")
    assert transversality(np.full(p.grid.size, 3.0), p) == (pytest.approx(0.0, abs=1e-12), 0.0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), alpha=st.floats(0.1, 0.9))
def test_transversality_right_vanishes(seed, alpha):
    p = make("(d1 - x1)^2 + d1^4", n=16, alpha=alpha)
    x = np.random.default_rng(seed).normal(size=17)
    assert transversality(x, p)[1] == 0.0


# ---------------------------------------------------------------- Legendre


def test_legendre_examples():
    x = np.linspace(0, 1, 33)
    assert legendre_margin(x, make("d1^2")) == 2.0
    assert legendre_margin(x, make("-d1^2")) == -2.0
    assert legendre_margin(x, make("(d1 - sin(t))^2")) == 2.0
    assert not diagnostics(x, make("-d1^2")).legendre_ok
    assert diagnostics(x, make("d1^2")).legendre_ok


@settings(max_examples=40, deadline=None)
@given(
    coef=st.sampled_from(["t", "sin(t)", "exp(t)", "3", "t^2 - 1"]),
    seed=st.integers(0, 10**6),
)
def test_legendre_invariant_under_linear_d_terms(coef, seed):
    base = "(d1 - t)^2 + d1^4 + x1^2"
    x = np.random.default_rng(seed).normal(size=33)
    m0 = legendre_margin(x, make(base))
    m1 = legendre_margin(x, make(f"{base} + ({coef})*d1"))
    assert m0 == m1


# --------------------------------------------------------------------- IBP


def test_ibp_zero_x():
    g = make_grid(1, 2, 64, 1.5)
    y = SampledFunction(g, np.sin(g.nodes))
    assert ibp_defect(SampledFunction(g, np.zeros(65)), y, FracParams(0.4, 1.5)) == 0.0


def test_ibp_constant_y_refines():
    defects = []
    for n in (128, 256, 512):
        g = make_grid(1, 2, n, 1.5)
        x = SampledFunction(g, np.exp(g.nodes))
        defects.append(ibp_defect(x, SampledFunction(g, np.full(n + 1, 2.0)), FracParams(0.4, 1.5)))
    assert defects[0] > defects[1] > defects[2]


def test_ibp_example():
    g = make_grid(1, 2, 1024, 1.5)
    x = SampledFunction(g, g.nodes)
    y = SampledFunction(g, g.s_nodes - 1)
    assert ibp_defect(x, y, FracParams(0.4, 1.5)) <= 1e-3


def test_ibp_grids_must_match():
    g, h = make_grid(1, 2, 8, 1.0), make_grid(1, 3, 8, 1.0)
    with pytest.raises(DomainError):
        ibp_defect(SampledFunction(g, np.ones(9)), SampledFunction(h, np.ones(9)), FracParams(0.5, 1.0))


# ------------------------------------------------------------- constraints


def test_constraint_defect_examples():
    p = make("d1^2", kind=Isoperimetric(Lagrangian.from_source("1 + 0*x1"), 1.0))
    assert constraint_defect(np.random.default_rng(0).normal(size=33), p) == pytest.approx(0.0, abs=1e-14)
    p = make("d1^2", kind=Isoperimetric(Lagrangian.from_source("x1"), 1.0))
    assert constraint_defect(np.ones(33), p) == pytest.approx(0.0, abs=1e-14)
    p = make("d1^2 + d2^2", m=2, kind=Holonomic(parse("x1 + x2")))
    x1 = np.sin(p.grid.nodes)
    assert constraint_defect(np.vstack([x1, -x1]), p) == 0.0
    with pytest.raises(KindError):
        constraint_defect(np.ones(33), make("d1^2"))


def test_holonomic_multiplier_direct_substitution():
    p = make("d1^2 + d2^2", n=32, m=2, kind=Holonomic(parse("x2 - x1")))
    x1 = np.sin(2 * p.grid.nodes)
    lam = holonomic_multiplier(np.vstack([x1, x1]), p).scalar
    d2 = ck_deriv(SampledFunction(p.grid, x1), p.params).scalar
    expected = right_deriv(SampledFunction(p.grid, 2 * d2), p.params).scalar
    np.testing.assert_allclose(lam, expected, rtol=1e-12, atol=1e-12)


def test_holonomic_multiplier_singular():
    p = make("d1^2 + d2^2", n=16, m=2, kind=Holonomic(parse("x2^2 - x1")))
    t = p.grid.nodes
    x2 = t - t[5]
    with pytest.raises(SingularConstraint):
        holonomic_multiplier(np.vstack([x2**2, x2]), p)
    with pytest.raises(KindError):
        holonomic_multiplier(np.zeros(17), make("d1^2", n=16))


# -------------------------------------------------------------- convexity


def test_is_convex():
    p = make("(d1 - t)^2 + x1^2")
    tr = trajectory(np.sin(p.grid.nodes), p)
    assert is_convex(p.lagrangian, tr)
    assert not is_convex(Lagrangian.from_source("-d1^2"), tr)
    assert not is_convex(Lagrangian.from_source("x1*d1"), tr)
    assert not is_convex(Lagrangian.from_source("sin(x1) + d1^2"), tr)


# ---------------------------------------------------------------- Herglotz


def test_herglotz_state_for_z_free_lagrangian():
    p = make("1 + 0*z", has_z=True, left=Fixed(0.0), right=Fixed(1.0), kind=Herglotz(0.25))
    z = trajectory(np.linspace(0, 1, 33), p).z
    np.testing.assert_allclose(z, 0.25 + (p.grid.nodes - 1), rtol=1e-14)


def test_herglotz_state_growth_is_fourth_order():
    errs = []
    for n in (8, 16, 32):
        p = make("z + 0*x1", n=n, rho=1.0, has_z=True, left=Fixed(0.0), right=Fixed(0.0), kind=Herglotz(1.0))
        errs.append(abs(trajectory(np.zeros(n + 1), p).z[-1] - math.e))
    assert errs[0] / errs[1] > 14 and errs[1] / errs[2] > 14


def test_herglotz_lambda():
    p = make("d1^2 - z", has_z=True, left=Fixed(0.0), right=Fixed(1.0), kind=Herglotz(0.0))
    tr = trajectory(np.linspace(0, 1, 33), p)
    np.testing.assert_allclose(herglotz_lambda(p, tr), np.exp(p.grid.nodes - 1), rtol=1e-14)
    q = make("d1^2 + 0*z", has_z=True, left=Fixed(0.0), right=Fixed(1.0), kind=Herglotz(0.0))
    assert np.all(herglotz_lambda(q, trajectory(np.linspace(0, 1, 33), q)) == 1.0)


def test_herglotz_eval_error_node():
    p = make("ln(x1) + z", n=8, has_z=True, left=Fixed(1.0), right=Fixed(1.0), kind=Herglotz(0.0))
    x = np.ones(9)
    x[4] = -1.0
    with pytest.raises(EvalError) as info:
        trajectory(x, p)
    assert info.value.index == 3


# ------------------------------------------------------------- diagnostics


def test_diagnostics_bundle_is_serializable():
    p = make("(d1 - t)^2 + x1^2", kind=Isoperimetric(Lagrangian.from_source("x1"), 1.0), left=Fixed(0.0))
    dg = diagnostics(np.linspace(0, 1, 33), p, multiplier=0.5)
    d = dg.as_dict()
    json.dumps(d, allow_nan=False)
    assert d["convex"] is True and d["constraint_defect"] is not None
    assert set(d) >= {"J_value", "el_residual_norm", "transversality_left", "legendre_min", "ibp_defect"}


def test_diagnostics_is_deterministic():
    p = make("(d1 - t)^2 + sin(x1)", left=Fixed(0.0))
    x = np.cos(p.grid.nodes)
    assert diagnostics(x, p).as_dict() == diagnostics(x, p).as_dict()
