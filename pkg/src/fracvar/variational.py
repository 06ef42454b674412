"""Variational problems and their optimality certificates.

A :class:`Problem` bundles a Lagrangian, the fractional parameters, a grid,
boundary conditions and a problem kind. The functions here evaluate the
discrete functional and every necessary or sufficient condition attached to
it: Euler-Lagrange residuals, transversality values, the Legendre margin,
the integration-by-parts defect and constraint defects.

Conventions along a trajectory ``x`` (shape ``(m, n+1)``):

* ``d = ckD x`` componentwise (left Caputo-Katugampola derivative);
* ``p_i = dL/dd_i`` sampled at the nodes (discretize, then differentiate);
* the Euler-Lagrange residual is ``dL/dx_i - D_{b-} p_i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Union

import numpy as np

from .dsl import Expr, Lagrangian, diff, evaluate, free_vars
from .errors import DomainError, EvalError, KindError, ProblemError, SingularConstraint
from .fracops import FracParams, OperatorKind, assemble_matrix
from .grid import Grid, SampledFunction, Spacing, make_grid, quad_trapezoid, trapezoid_weights

__all__ = [
    "Fixed",
    "FREE",
    "Plain",
    "SplitDomain",
    "Isoperimetric",
    "Holonomic",
    "Herglotz",
    "Problem",
    "Diagnostics",
    "Trajectory",
    "trajectory",
    "functional_value",
    "el_residual",
    "transversality",
    "legendre_margin",
    "ibp_defect",
    "constraint_defect",
    "holonomic_multiplier",
    "herglotz_integrate",
    "herglotz_lambda",
    "is_convex",
    "diagnostics",
    "straight_line",
]


# ------------------------------------------------------------ boundary data


@dataclass(frozen=True)
class Fixed:
    values: tuple[float, ...]

    def __init__(self, values):
        vals = (values,) if np.ndim(values) == 0 else tuple(values)
        object.__setattr__(self, "values", tuple(float(v) for v in vals))


class _Free:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "FREE"

    def __reduce__(self):
        return (_Free, ())


FREE = _Free()
Boundary = Union[Fixed, _Free]


# ------------------------------------------------------------ problem kinds


@dataclass(frozen=True)
class Plain:
    pass


@dataclass(frozen=True)
class SplitDomain:
    """Cost integrated over ``[A, b]`` only; ``x(A)`` is pinned when ``x_A`` is given."""

    A: float
    x_A: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Isoperimetric:
    g: Lagrangian
    l: float


@dataclass(frozen=True)
class Holonomic:
    g: Expr


@dataclass(frozen=True)
class Herglotz:
    z_a: float


Kind = Union[Plain, SplitDomain, Isoperimetric, Holonomic, Herglotz]


@dataclass(frozen=True, eq=False)
class Problem:
    lagrangian: Lagrangian
    params: FracParams
    grid: Grid
    bc_left: Boundary = FREE
    bc_right: Boundary = FREE
    kind: Kind = field(default_factory=Plain)

    def __post_init__(self):
        L, g = self.lagrangian, self.grid
        if g.rho != self.params.rho:
            raise ProblemError(f"grid rho {g.rho} differs from operator rho {self.params.rho}")
        if not g.uniform_in_s:
            raise ProblemError("problems need a grid that is uniform in s = t**rho")
        for side, bc in (("left", self.bc_left), ("right", self.bc_right)):
            if isinstance(bc, Fixed) and len(bc.values) != L.m:
                raise ProblemError(f"{side} boundary has {len(bc.values)} values, expected {L.m}")
            if not isinstance(bc, (Fixed, _Free)):
                raise ProblemError(f"{side} boundary must be Fixed(...) or FREE")
        kind = self.kind
        if L.depends_on("z") and not isinstance(kind, Herglotz):
            raise ProblemError("only Herglotz problems may use z")
        if isinstance(kind, SplitDomain):
            if not g.a < kind.A < g.b:
                raise ProblemError(f"split point A={kind.A} must lie strictly inside ({g.a}, {g.b})")
            try:
                k = g.index_of(kind.A)
            except DomainError:
                raise ProblemError(f"split point A={kind.A} is not a grid node") from None
            if k < 2:
                raise ProblemError("split point needs at least two grid intervals to its left")
            if kind.x_A is not None and len(kind.x_A) != L.m:
                raise ProblemError(f"x_A has {len(kind.x_A)} values, expected {L.m}")
        elif isinstance(kind, Isoperimetric):
            if kind.g.m != L.m or kind.g.depends_on("z"):
                raise ProblemError("constraint integrand must use the same variables as L and no z")
        elif isinstance(kind, Holonomic):
            if L.m != 2:
                raise ProblemError("holonomic constraints need exactly two dependent variables")
            allowed = {"t", "x1", "x2"} | set(L.params)
            bad = free_vars(kind.g) - allowed
            if bad:
                raise ProblemError("holonomic constraint may only use t, x1, x2 and parameters, found " + ", ".join(sorted(bad)))
            for t, bc in ((g.a, self.bc_left), (g.b, self.bc_right)):
                if isinstance(bc, Fixed):
                    env = dict(L.params, t=t, x1=bc.values[0], x2=bc.values[1])
                    if abs(float(evaluate(kind.g, env))) > 1e-8:
                        raise ProblemError(f"boundary values at t={t} do not satisfy the holonomic constraint")
        elif isinstance(kind, Herglotz):
            if not L.has_z:
                raise ProblemError("Herglotz problems need a Lagrangian declared with z")
            if not (isinstance(self.bc_left, Fixed) and isinstance(self.bc_right, Fixed)):
                raise ProblemError("Herglotz problems need fixed boundary values at both ends")

    @property
    def m(self) -> int:
        return self.lagrangian.m

    @property
    def split_index(self) -> int | None:
        if isinstance(self.kind, SplitDomain):
            return self.grid.index_of(self.kind.A)
        return None

    def fixed_mask(self) -> np.ndarray:
        """Boolean ``(n+1,)`` mask of nodes where a Dirichlet condition holds."""
        mask = np.zeros(self.grid.size, dtype=bool)
        mask[0] = isinstance(self.bc_left, Fixed)
        mask[-1] = isinstance(self.bc_right, Fixed)
        if isinstance(self.kind, SplitDomain) and self.kind.x_A is not None:
            mask[self.split_index] = True
        return mask

    def cost_weights(self) -> np.ndarray:
        """Trapezoid weights of the cost integral (zero left of ``A`` for split problems)."""
        k = self.split_index
        if k is None:
            return self.grid.weights
        w = np.zeros(self.grid.size)
        w[k:] = trapezoid_weights(self.grid.nodes[k:])
        return w

    def with_lagrangian(self, L: Lagrangian, kind: Kind | None = None) -> "Problem":
        return Problem(L, self.params, self.grid, self.bc_left, self.bc_right, self.kind if kind is None else kind)

    def with_params(self, alpha: float | None = None, rho: float | None = None) -> "Problem":
        """Same problem at another order and/or rho; the grid is rebuilt when rho changes."""
        params = FracParams(self.params.alpha if alpha is None else alpha, self.params.rho if rho is None else rho)
        grid = self.grid
        if params.rho != grid.rho:
            grid = make_grid(grid.a, grid.b, grid.n, params.rho, Spacing.UNIFORM_S)
        return Problem(self.lagrangian, params, grid, self.bc_left, self.bc_right, self.kind)


# ------------------------------------------------------------ trajectories


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Node values ``x``, derivatives ``d`` and (Herglotz) state ``z``."""

    t: np.ndarray
    x: np.ndarray
    d: np.ndarray
    z: np.ndarray | None = None


def _values(x, p: Problem) -> np.ndarray:
    if isinstance(x, SampledFunction):
        if x.grid is not p.grid and not np.array_equal(x.grid.nodes, p.grid.nodes):
            raise DomainError("trajectory lives on a different grid")
        v = x.values
    else:
        v = np.atleast_2d(np.asarray(x, dtype=float))
    if v.shape != (p.m, p.grid.size):
        raise DomainError(f"expected trajectory of shape {(p.m, p.grid.size)}, got {v.shape}")
    return v


def trajectory(x, p: Problem) -> Trajectory:
    X = _values(x, p)
    Dx = assemble_matrix(OperatorKind.LEFT_DERIV, p.params, p.grid)(X)
    z = None
    if isinstance(p.kind, Herglotz):
        z = herglotz_integrate(p, X, Dx)
    return Trajectory(p.grid.nodes, X, Dx, z)


def _eval(L: Lagrangian, expr: Expr, tr: Trajectory) -> np.ndarray:
    return L.eval(expr, tr.t, tr.x, tr.d, tr.z)


def straight_line(p: Problem) -> np.ndarray:
    """Initial guess: linear in ``s`` between the boundary values (zero where free)."""
    s = p.grid.s_nodes
    u = (s - s[0]) / (s[-1] - s[0])
    left = np.array(p.bc_left.values) if isinstance(p.bc_left, Fixed) else None
    right = np.array(p.bc_right.values) if isinstance(p.bc_right, Fixed) else None
    if left is None and right is None:
        return np.zeros((p.m, p.grid.size))
    if left is None:
        left = right
    if right is None:
        right = left
    return left[:, None] * (1.0 - u)[None, :] + right[:, None] * u[None, :]


# ---------------------------------------------------------------- Herglotz


def herglotz_integrate(p: Problem, X: np.ndarray, Dx: np.ndarray) -> np.ndarray:
    """Solve ``z' = L(t, x, d, z)``, ``z(a) = z_a`` with classical RK4 on the grid.

    ``X`` and ``Dx`` may carry a leading batch axis ``(B, m, n+1)``; the
    result then has shape ``(B, n+1)``. Between nodes ``x`` and ``d`` are
    interpolated linearly for the stage evaluations.
    """
    L = p.lagrangian
    t = p.grid.nodes
    batched = X.ndim == 3
    if not batched:
        X, Dx = X[None], Dx[None]
    B = X.shape[0]
    z = np.empty((B, t.size))
    z[:, 0] = p.kind.z_a
    expr = L.expr
    ones = np.ones(B)

    def f(k_t, xs, ds, zs):
        try:
            return L.eval(expr, k_t * ones, xs, ds, zs)
        except EvalError as exc:
            raise exc.at_node(k) from None

    for k in range(t.size - 1):
        h = t[k + 1] - t[k]
        xa, xb = X[:, :, k].T, X[:, :, k + 1].T
        da, db = Dx[:, :, k].T, Dx[:, :, k + 1].T
        xm, dm = 0.5 * (xa + xb), 0.5 * (da + db)
        tm = t[k] + 0.5 * h
        zk = z[:, k]
        k1 = f(t[k], xa, da, zk)
        k2 = f(tm, xm, dm, zk + 0.5 * h * k1)
        k3 = f(tm, xm, dm, zk + 0.5 * h * k2)
        k4 = f(t[k + 1], xb, db, zk + h * k3)
        z[:, k + 1] = zk + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(z)):
        bad = np.argwhere(~np.isfinite(z))[0]
        raise EvalError("NonFinite", int(bad[-1]), "Herglotz state")
    return z if batched else z[0]


def herglotz_lambda(p: Problem, tr: Trajectory) -> np.ndarray:
    """Integrating factor ``exp(-int_a^t dL/dz)`` by cumulative trapezoid."""
    L = p.lagrangian
    dz = _eval(L, L.partial("z"), tr)
    h = np.diff(tr.t)
    cum = np.concatenate(([0.0], np.cumsum(0.5 * h * (dz[1:] + dz[:-1]))))
    return np.exp(-cum)


# ------------------------------------------------------------- functionals


def functional_value(x, p: Problem) -> float:
    """Discrete functional: trapezoid rule of ``L`` along ``x``.

    Split problems integrate over ``[A, b]`` only. For Herglotz problems the
    integrand also sees ``z`` from the state equation, so the value
    approximates ``z(b) - z_a``.
    """
    tr = trajectory(x, p)
    return _functional(tr, p)


def _functional(tr: Trajectory, p: Problem) -> float:
    L = p.lagrangian
    vals = _eval(L, L.expr, tr)
    return float(p.cost_weights() @ vals)


def _effective(p: Problem, multiplier) -> Lagrangian:
    if isinstance(p.kind, Isoperimetric) and multiplier is not None:
        return p.lagrangian + p.kind.g.scaled(float(multiplier))
    return p.lagrangian


def _momenta(p: Problem, tr: Trajectory, multiplier=None):
    """``(dL/dx_i, dL/dd_i)`` along the trajectory, with Herglotz weighting."""
    L = _effective(p, multiplier)
    Lx = np.array([_eval(L, L.partial(L.x_name(i)), tr) for i in range(p.m)])
    Ld = np.array([_eval(L, L.partial(L.d_name(i)), tr) for i in range(p.m)])
    if isinstance(p.kind, Herglotz):
        lam = herglotz_lambda(p, tr)
        Lx, Ld = Lx * lam, Ld * lam
    return Lx, Ld


def _right_ops(p: Problem):
    D = assemble_matrix(OperatorKind.RIGHT_DERIV, p.params, p.grid).weights
    return D


def el_residual(x, p: Problem, multiplier=None, raw: bool = False) -> SampledFunction:
    """Euler-Lagrange residual at every node, one component per variable.

    * Plain/Herglotz: ``dL/dx_i - D_{b-}(dL/dd_i)`` (Herglotz terms carry the
      integrating factor).
    * Isoperimetric: the same with ``K = L + lambda g``; ``multiplier`` is
      ``lambda``.
    * Holonomic: ``dL/dx_i - D_{b-}(dL/dd_i) + lambda(t) dg/dx_i`` with
      ``lambda(t)`` from :func:`holonomic_multiplier` unless supplied.
    * Split: ``D_{A-} p_i - D_{b-} p_i`` on ``[a, A)`` and the plain residual
      on ``[A, b]``.

    The equation is only asserted off the Dirichlet nodes, so unless ``raw``
    is set the residual is reported as 0 at nodes with fixed values.
    """
    tr = trajectory(x, p)
    R = _residual(tr, p, multiplier)
    if not raw:
        R[:, p.fixed_mask()] = 0.0
    return SampledFunction(p.grid, R)


def _residual(tr: Trajectory, p: Problem, multiplier=None) -> np.ndarray:
    Lx, Ld = _momenta(p, tr, multiplier)
    Dr = _right_ops(p)
    R = Lx - Ld @ Dr.T
    if isinstance(p.kind, SplitDomain):
        k = p.split_index
        sub = p.grid.restrict(k)
        DA = assemble_matrix(OperatorKind.RIGHT_DERIV, p.params, sub).weights
        R[:, :k] = (Ld[:, : k + 1] @ DA.T)[:, :k] - (Ld @ Dr.T)[:, :k]
    elif isinstance(p.kind, Holonomic):
        lam = multiplier
        if lam is None:
            lam = _holonomic_lambda(tr, p, Lx, Ld, Dr)
        lam = lam.scalar if isinstance(lam, SampledFunction) else np.asarray(lam, dtype=float)
        g = p.kind.g
        for i in range(2):
            gx = _g_partial(p, g, f"x{i + 1}", tr)
            R[i] += lam * gx
    return R


_diff_cached = lru_cache(maxsize=256)(diff)


def _g_partial(p: Problem, g: Expr, name: str, tr: Trajectory) -> np.ndarray:
    expr = _diff_cached(g, name)
    env = dict(p.lagrangian.params, t=tr.t, x1=tr.x[0], x2=tr.x[1])
    return np.broadcast_to(np.asarray(evaluate(expr, env), dtype=float), tr.t.shape).copy()


def _holonomic_lambda(tr, p, Lx, Ld, Dr) -> np.ndarray:
    gx2 = _g_partial(p, p.kind.g, "x2", tr)
    small = np.abs(gx2) < 1e-10
    if np.any(small):
        k = int(np.flatnonzero(small)[0])
        raise SingularConstraint(k, float(gx2[k]))
    return -(Lx[1] - Dr @ Ld[1]) / gx2


def holonomic_multiplier(x, p: Problem) -> SampledFunction:
    """``lambda(t) = -(dL/dx2 - D_{b-} dL/dd2) / (dg/dx2)`` on the grid."""
    if not isinstance(p.kind, Holonomic):
        raise KindError("holonomic_multiplier needs a Holonomic problem")
    tr = trajectory(x, p)
    Lx, Ld = _momenta(p, tr)
    return SampledFunction(p.grid, _holonomic_lambda(tr, p, Lx, Ld, _right_ops(p)))


def _pick(v: np.ndarray) -> float:
    # component of largest magnitude, sign kept
    return float(v[int(np.argmax(np.abs(v)))])


def transversality(x, p: Problem, multiplier=None) -> tuple[float, float]:
    """``I_{b-}^{1-alpha} (dL/dd)`` at ``t=a`` and ``t=b``.

    Both must vanish at a free endpoint. For split problems the left value is
    ``I_{A-}^{1-alpha} p - I_{b-}^{1-alpha} p`` at ``t = a``. With several
    variables the component of largest magnitude is returned.
    """
    tr = trajectory(x, p)
    return _transversality(tr, p, multiplier)


def _transversality(tr: Trajectory, p: Problem, multiplier=None) -> tuple[float, float]:
    _, Ld = _momenta(p, tr, multiplier)
    q = p.params.with_order(1.0 - p.params.alpha)
    Ib = assemble_matrix(OperatorKind.RIGHT_INT, q, p.grid).weights
    left = Ib[0] @ Ld.T
    right = Ib[-1] @ Ld.T
    if isinstance(p.kind, SplitDomain):
        k = p.split_index
        IA = assemble_matrix(OperatorKind.RIGHT_INT, q, p.grid.restrict(k)).weights
        left = IA[0] @ Ld[:, : k + 1].T - left
    return _pick(np.atleast_1d(left)), _pick(np.atleast_1d(right))


def legendre_margin(x, p: Problem, multiplier=None) -> float:
    """Minimum of ``d^2 L / dd_i^2`` over nodes and components (cost nodes only)."""
    tr = trajectory(x, p)
    return _legendre(tr, p, multiplier)


def _legendre(tr: Trajectory, p: Problem, multiplier=None) -> float:
    L = _effective(p, multiplier)
    k = p.split_index or 0
    vals = [_eval(L, L.partial(L.d_name(i), L.d_name(i)), tr)[k:] for i in range(p.m)]
    return float(np.min(vals))


def ibp_defect(x_vals: SampledFunction, y_vals: SampledFunction, p: FracParams) -> float:
    """Defect of the fractional integration-by-parts identity.

    ``int x cD y = [y I_{b-}^{1-alpha} x]_a^b - int y D_{b-} x``, every term
    computed with the discrete operators and the trapezoid rule.
    """
    grid = x_vals.grid
    if y_vals.grid is not grid and not np.array_equal(y_vals.grid.nodes, grid.nodes):
        raise DomainError("x and y live on different grids")
    xv, yv = x_vals.scalar, y_vals.scalar
    if not np.any(xv):
        return 0.0
    D = assemble_matrix(OperatorKind.LEFT_DERIV, p, grid)
    Dr = assemble_matrix(OperatorKind.RIGHT_DERIV, p, grid).weights
    Ib = assemble_matrix(OperatorKind.RIGHT_INT, p.with_order(1.0 - p.alpha), grid).weights
    w = grid.weights
    lhs = w @ (xv * D(yv))
    ix = Ib @ xv
    rhs = yv[-1] * ix[-1] - yv[0] * ix[0] - w @ (yv * (Dr @ xv))
    return float(abs(lhs - rhs))


def constraint_defect(x, p: Problem) -> float:
    """``|int g - l|`` (isoperimetric) or ``max |g|`` over nodes (holonomic)."""
    tr = trajectory(x, p)
    return _constraint(tr, p)


def _constraint(tr: Trajectory, p: Problem) -> float:
    kind = p.kind
    if isinstance(kind, Isoperimetric):
        g = kind.g
        return float(abs(quad_trapezoid(_eval(g, g.expr, tr), p.grid) - kind.l))
    if isinstance(kind, Holonomic):
        env = dict(p.lagrangian.params, t=tr.t, x1=tr.x[0], x2=tr.x[1])
        return float(np.max(np.abs(evaluate(kind.g, env) * np.ones_like(tr.t))))
    raise KindError(f"{type(kind).__name__} problems have no constraint")


def is_convex(L: Lagrangian, tr: Trajectory, samples: int = 64, seed: int = 0, tol: float = 1e-10) -> bool:
    """Sample the ``(x, d)`` Hessian of ``L`` near the trajectory and test PSD.

    Points are drawn at random nodes, perturbed by Gaussian noise scaled to
    the spread of the trajectory. Numerical evidence only.
    """
    names = [L.x_name(i) for i in range(L.m)] + [L.d_name(i) for i in range(L.m)]
    rng = np.random.default_rng(seed)
    k = rng.integers(0, tr.t.size, samples)
    scale_x = 1.0 + np.ptp(tr.x, axis=1)
    scale_d = 1.0 + np.ptp(tr.d, axis=1)
    xs = tr.x[:, k] + scale_x[:, None] * rng.standard_normal((L.m, samples))
    ds = tr.d[:, k] + scale_d[:, None] * rng.standard_normal((L.m, samples))
    zs = None if tr.z is None else tr.z[k]
    t = tr.t[k]
    H = np.empty((samples, len(names), len(names)))
    try:
        for i, u in enumerate(names):
            for j, v in enumerate(names[i:], start=i):
                H[:, i, j] = H[:, j, i] = L.eval(L.partial(u, v), t, xs, ds, zs)
    except (ArithmeticError, ValueError):
        return False
    eig = np.linalg.eigvalsh(H)
    return bool(np.all(eig[:, 0] >= -tol * (1.0 + np.abs(eig[:, -1]))))


# ------------------------------------------------------------- diagnostics


@dataclass(frozen=True, eq=False)
class Diagnostics:
    J_value: float
    el_residual: SampledFunction
    el_residual_norm: float
    el_residual_norms: tuple[float, ...]
    transversality_left: float
    transversality_right: float
    legendre_min: float
    constraint_defect: float | None
    ibp_defect: float
    convex: bool | None = None
    z_b: float | None = None
    el_residual_interior_norm: float = 0.0

    @property
    def legendre_ok(self) -> bool:
        return self.legendre_min >= 0.0

    def as_dict(self) -> dict:
        return {
            "J_value": self.J_value,
            "el_residual_norm": self.el_residual_norm,
            "el_residual_norms": list(self.el_residual_norms),
            "el_residual_interior_norm": self.el_residual_interior_norm,
            "transversality_left": self.transversality_left,
            "transversality_right": self.transversality_right,
            "legendre_min": self.legendre_min,
            "legendre_ok": self.legendre_ok,
            "constraint_defect": self.constraint_defect,
            "ibp_defect": self.ibp_defect,
            "convex": self.convex,
            "z_b": self.z_b,
        }


def _l2(r: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(quad_trapezoid(r * r, grid)))


def _interior_l2(R: np.ndarray, grid: Grid) -> float:
    # drops the first and last n/16 cells, where dL/dd may carry endpoint singularities
    cut = max(1, grid.n // 16)
    w = grid.weights[cut : grid.n + 1 - cut]
    return float(np.sqrt(w @ np.sum(R[:, cut : grid.n + 1 - cut] ** 2, axis=0)))


def diagnostics(x, p: Problem, multiplier=None, seed: int = 0) -> Diagnostics:
    """Every certificate for the trajectory ``x`` in one pass."""
    tr = trajectory(x, p)
    R = _residual(tr, p, multiplier)
    R[:, p.fixed_mask()] = 0.0
    norms = tuple(_l2(R[i], p.grid) for i in range(p.m))
    total = float(np.sqrt(quad_trapezoid(np.sum(R * R, axis=0), p.grid)))
    left, right = _transversality(tr, p, multiplier)
    _, Ld = _momenta(p, tr, multiplier)
    ibp = max(
        ibp_defect(SampledFunction(p.grid, Ld[i]), SampledFunction(p.grid, tr.x[i]), p.params) for i in range(p.m)
    )
    cd = _constraint(tr, p) if isinstance(p.kind, (Isoperimetric, Holonomic)) else None
    convex = None
    if not isinstance(p.kind, Herglotz):
        convex = is_convex(_effective(p, multiplier), tr, seed=seed)
    return Diagnostics(
        J_value=float(tr.z[-1]) if tr.z is not None else _functional(tr, p),
        el_residual=SampledFunction(p.grid, R),
        el_residual_norm=total,
        el_residual_norms=norms,
        transversality_left=left,
        transversality_right=right,
        legendre_min=_legendre(tr, p, multiplier),
        constraint_defect=cd,
        ibp_defect=ibp,
        convex=convex,
        z_b=float(tr.z[-1]) if tr.z is not None else None,
        el_residual_interior_norm=_interior_l2(R, p.grid),
    )
