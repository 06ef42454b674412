"""Direct (Ritz) minimization for every problem kind.

The unknowns are node values of ``x``; the discrete functional is a smooth
function of them because the left derivative is a fixed matrix. Each solver
minimizes that function with a limited-memory BFGS iteration and then
certifies the result with the Euler-Lagrange residual and friends from
:mod:`fracvar.variational`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .dsl import Lagrangian, diff, evaluate
from .errors import AbnormalCase, EvalError, KindError, NonConvergence, RootFindFailure, SingularConstraint
from .fracops import FracParams, OperatorKind, assemble_matrix, ck_deriv_nonuniform
from .grid import SampledFunction
from .variational import (
    Diagnostics,
    Fixed,
    Herglotz,
    Holonomic,
    Isoperimetric,
    Plain,
    Problem,
    SplitDomain,
    diagnostics,
    herglotz_integrate,
    herglotz_lambda,
    holonomic_multiplier,
    is_convex,
    straight_line,
    trajectory,
)

__all__ = [
    "SolverConfig",
    "SolveReport",
    "MinimizeResult",
    "lbfgs",
    "solve",
    "solve_plain",
    "solve_isoperimetric",
    "solve_holonomic",
    "solve_herglotz",
    "optimize_rho",
    "solve_constraint_nodes",
]


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 20000
    grad_tol: float = 1e-6
    constraint_tol: float = 1e-8
    fd_step: float = 1e-6
    line_search: str = "backtracking"
    penalty_growth: float = 2.0
    seed: int = 0
    memory: int = 12

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.constraint_tol > 0:
            raise ValueError("constraint_tol must be positive")
        if not 1e-10 < self.fd_step < 1e-2:
            raise ValueError("fd_step must lie in (1e-10, 1e-2)")
        if self.line_search != "backtracking":
            raise ValueError(f"unknown line search {self.line_search!r}; only 'backtracking' is available")
        if not self.penalty_growth > 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.memory < 1:
            raise ValueError("memory must be at least 1")


@dataclass(frozen=True, eq=False)
class SolveReport:
    x: SampledFunction
    J: float
    diagnostics: Diagnostics
    iterations: int
    converged: bool
    grad_norm: float
    multiplier: float | SampledFunction | None = None
    rho_opt: float | None = None
    history: tuple[float, ...] = ()
    info: dict = field(default_factory=dict)


# ------------------------------------------------------------------ L-BFGS


@dataclass(frozen=True, eq=False)
class MinimizeResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    grad_norm: float
    iterations: int
    converged: bool
    history: tuple[float, ...]
    message: str


def lbfgs(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    metric: np.ndarray,
    cfg: SolverConfig,
) -> MinimizeResult:
    """Minimize ``fun`` (returning value and gradient) from ``x0``.

    ``metric`` holds positive quadrature weights of the unknowns. The
    stopping test uses the dual norm ``sqrt(sum g**2 / metric)``, which is the
    discrete L2 norm of the Euler-Lagrange residual, and the same diagonal
    preconditions the initial inverse Hessian. Trial points where ``fun``
    raises :class:`EvalError` are treated as infinitely bad. ``history``
    records the objective at every accepted iterate and never increases.

    A step is accepted under the Armijo condition, or, once decreases are
    below rounding, when ``f`` does not increase and the directional
    derivative shrinks by the curvature factor 0.9.
    """
    minv = 1.0 / np.asarray(metric, dtype=float)
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not math.isfinite(f):
        raise EvalError("NonFinite", None, "objective at the initial guess")

    def norm(v):
        return float(np.sqrt(np.sum(v * v * minv)))

    gn = norm(g)
    history = [f]
    mem: list[tuple[np.ndarray, np.ndarray, float]] = []
    it = 0
    message = "converged"
    c1 = 1e-4
    while gn > cfg.grad_tol:
        if it >= cfg.max_iters:
            message = "iteration limit"
            break
        q = g.copy()
        alphas = []
        for s, y, r in reversed(mem):
            a = r * (s @ q)
            q -= a * y
            alphas.append(a)
        if mem:
            s, y, _ = mem[-1]
            gamma = (s @ y) / (y @ (minv * y))
        else:
            gamma = 1.0 / max(1.0, gn)
        d = gamma * minv * q
        for (s, y, r), a in zip(mem, reversed(alphas)):
            d += s * (a - r * (y @ d))
        d = -d
        slope = g @ d
        if not slope < 0:
            mem.clear()
            d = -minv * g / max(1.0, gn)
            slope = g @ d
        step = 1.0
        accepted = False
        for _ in range(60):
            xn = x + step * d
            try:
                fn, gnew = fun(xn)
            except EvalError:
                fn = math.inf
            if math.isfinite(fn):
                armijo = fn <= f + c1 * step * slope and fn < f
                # near the optimum the decrease drowns in rounding; accept a
                # step that does not raise f and cuts the directional slope
                flat = fn <= f and abs(gnew @ d) <= 0.9 * abs(slope)
                if armijo or flat:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            if mem:
                mem.clear()
                continue
            message = "line search stalled"
            break
        s = xn - x
        y = gnew - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
            if len(mem) > cfg.memory:
                mem.pop(0)
        x, f, g = xn, fn, gnew
        gn = norm(g)
        history.append(f)
        it += 1
    return MinimizeResult(x, f, g, gn, it, gn <= cfg.grad_tol, tuple(history), message)


# ----------------------------------------------------- Ritz discretization


class _Ritz:
    """Node-value parameterization of a (non-Herglotz) problem."""

    def __init__(self, p: Problem, L: Lagrangian, x0=None):
        self.p, self.L = p, L
        self.op = assemble_matrix(OperatorKind.LEFT_DERIV, p.params, p.grid)
        self.D = self.op.weights
        self.w = p.cost_weights()
        self.t = p.grid.nodes
        base = straight_line(p) if x0 is None else np.array(_raw(x0), dtype=float).reshape(p.m, -1)
        _apply_bcs(base, p)
        self.base = base
        self.free = ~p.fixed_mask()
        self.metric = np.tile(p.grid.weights[self.free], p.m)
        self.Lx = [L.partial(L.x_name(i)) for i in range(p.m)]
        self.Ld = [L.partial(L.d_name(i)) for i in range(p.m)]

    def unpack(self, u: np.ndarray) -> np.ndarray:
        X = self.base.copy()
        X[:, self.free] = u.reshape(self.p.m, -1)
        return X

    def pack(self, X: np.ndarray) -> np.ndarray:
        return X[:, self.free].ravel()

    def full_gradient(self, X: np.ndarray) -> tuple[float, np.ndarray]:
        L, w = self.L, self.w
        Dx = self.op(X)
        val = w @ L.eval(L.expr, self.t, X, Dx)
        G = np.empty_like(X)
        for i in range(self.p.m):
            G[i] = w * L.eval(self.Lx[i], self.t, X, Dx) + self.D.T @ (w * L.eval(self.Ld[i], self.t, X, Dx))
        return float(val), G

    def __call__(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        val, G = self.full_gradient(self.unpack(u))
        return val, self.pack(G)


def _raw(x):
    return x.values if isinstance(x, SampledFunction) else x


def _apply_bcs(X: np.ndarray, p: Problem) -> None:
    if isinstance(p.bc_left, Fixed):
        X[:, 0] = p.bc_left.values
    if isinstance(p.bc_right, Fixed):
        X[:, -1] = p.bc_right.values
    if isinstance(p.kind, SplitDomain) and p.kind.x_A is not None:
        X[:, p.split_index] = p.kind.x_A


def _finish(p: Problem, X: np.ndarray, res: MinimizeResult, cfg: SolverConfig, multiplier=None, **extra) -> SolveReport:
    x = SampledFunction(p.grid, X)
    diag = diagnostics(x, p, multiplier, seed=cfg.seed)
    info = {"message": res.message}
    info.update(extra)
    return SolveReport(
        x=x,
        J=diag.J_value,
        diagnostics=diag,
        iterations=res.iterations,
        converged=res.converged,
        grad_norm=res.grad_norm,
        multiplier=multiplier,
        history=res.history,
        info=info,
    )


def _raise_if_failed(report: SolveReport) -> SolveReport:
    if not report.converged:
        raise NonConvergence(report.iterations, report.grad_norm, report.info.get("message", ""), report)
    return report


def _minimize_plain(p: Problem, L: Lagrangian, cfg: SolverConfig, x0=None):
    ritz = _Ritz(p, L, x0)
    res = lbfgs(ritz, ritz.pack(ritz.base), ritz.metric, cfg)
    return ritz.unpack(res.x), res


def solve_plain(p: Problem, cfg: SolverConfig | None = None, x0=None) -> SolveReport:
    """Minimize the discrete functional of a plain or split-domain problem."""
    cfg = cfg or SolverConfig()
    if not isinstance(p.kind, (Plain, SplitDomain)):
        raise KindError(f"solve_plain does not handle {type(p.kind).__name__} problems")
    X, res = _minimize_plain(p, p.lagrangian, cfg, x0)
    report = _finish(p, X, res, cfg)
    info = report.info
    info["free_left"] = not isinstance(p.bc_left, Fixed)
    info["free_right"] = not isinstance(p.bc_right, Fixed)
    info["sufficient"] = bool(report.diagnostics.convex)
    return _raise_if_failed(report)


# ------------------------------------------------------------ isoperimetric


def _constraint_value(p: Problem, X: np.ndarray) -> float:
    g = p.kind.g
    tr = trajectory(X, p)
    return float(p.grid.weights @ g.eval(g.expr, tr.t, tr.x, tr.d))


def _constraint_gradient_norm(p: Problem, X: np.ndarray) -> float:
    # stationarity of I(x) = int g over the free nodes: extremal of the constraint
    plain = Problem(p.kind.g, p.params, p.grid, p.bc_left, p.bc_right, Plain())
    ritz = _Ritz(plain, p.kind.g, X)
    _, G = ritz(ritz.pack(X))
    return float(np.sqrt(np.sum(G * G / ritz.metric)))


def solve_isoperimetric(p: Problem, cfg: SolverConfig | None = None, x0=None, max_outer: int = 60) -> SolveReport:
    """Secant iteration on ``lambda`` with inner solves of ``K = L + lambda g``.

    When the inner solution is stationary for the constraint functional and
    the defect cannot be reduced, the problem is abnormal and
    :class:`AbnormalCase` is raised.
    """
    cfg = cfg or SolverConfig()
    kind = p.kind
    if not isinstance(kind, Isoperimetric):
        raise KindError("solve_isoperimetric needs an Isoperimetric problem")
    plain = Problem(p.lagrangian, p.params, p.grid, p.bc_left, p.bc_right, Plain())
    tol = cfg.constraint_tol

    def inner(lam, start):
        K = p.lagrangian + kind.g.scaled(lam) if lam != 0 else p.lagrangian
        X, res = _minimize_plain(plain, K, cfg, start)
        return X, res, _constraint_value(p, X) - kind.l

    lam0 = 0.0
    X0, res0, r0 = inner(lam0, x0)
    total_iters = res0.iterations
    lam, X, res, r = lam0, X0, res0, r0
    outer = 0
    if abs(r0) > tol:
        step = 1.0
        lam1 = lam0 + step
        X1, res1, r1 = inner(lam1, X0)
        total_iters += res1.iterations
        while True:
            outer += 1
            slope = (r1 - r0) / (lam1 - lam0)
            if abs(r1) <= tol:
                lam, X, res, r = lam1, X1, res1, r1
                break
            if outer > max_outer:
                lam, X, res, r = lam1, X1, res1, r1
                break
            if not math.isfinite(slope) or abs(slope) < 1e-14 * (1.0 + abs(r1)):
                if _constraint_gradient_norm(p, X1) <= 1e3 * cfg.grad_tol:
                    report = _finish(p, X1, res1, cfg, lam1)
                    raise AbnormalCase(
                        f"the inner solution is an extremal of the constraint and the defect {r1:.3e} does not respond to lambda",
                        report,
                    )
                # flat secant: widen the probe
                step *= cfg.penalty_growth
                lam0, X0, r0 = lam1, X1, r1
                lam1 = lam1 + step
                X1, res1, r1 = inner(lam1, X1)
                total_iters += res1.iterations
                continue
            lam2 = lam1 - r1 / slope
            X2, res2, r2 = inner(lam2, X1)
            total_iters += res2.iterations
            lam0, X0, r0 = lam1, X1, r1
            lam1, X1, res1, r1 = lam2, X2, res2, r2
    report = _finish(p, X, res, cfg, lam)
    defect = report.diagnostics.constraint_defect
    tr = trajectory(X, p)
    convex_L = is_convex(p.lagrangian, tr, seed=cfg.seed)
    convex_g = is_convex(kind.g, tr, seed=cfg.seed)
    concave_g = is_convex(kind.g.scaled(-1.0), tr, seed=cfg.seed)
    sufficient = bool(convex_L and ((lam >= 0 and convex_g) or (lam <= 0 and concave_g)))
    converged = res.converged and defect <= tol
    report = replace(
        report,
        iterations=total_iters,
        converged=converged,
        info=dict(report.info, outer_iterations=outer, sufficient=sufficient),
    )
    if res.converged and defect > tol:
        report.info["message"] = f"constraint defect {defect:.3e} above tolerance after {outer} secant steps"
    return _raise_if_failed(report)


# ---------------------------------------------------------------- holonomic


def solve_constraint_nodes(g, params: dict, t: np.ndarray, x1: np.ndarray, guess: np.ndarray, growth: float = 2.0) -> np.ndarray:
    """Solve ``g(t_k, x1_k, x2) = 0`` for ``x2`` at every node.

    A bracket around ``guess`` is grown geometrically until ``g`` changes
    sign, then a Newton step is taken whenever it stays inside the bracket
    and bisection otherwise. Raises :class:`RootFindFailure` with the first
    node that has no bracket.
    """
    dg = _dx2(g)

    def G(x2):
        return np.asarray(evaluate(g, dict(params, t=t, x1=x1, x2=x2)), dtype=float) * np.ones_like(t)

    def dG(x2):
        return np.asarray(evaluate(dg, dict(params, t=t, x1=x1, x2=x2)), dtype=float) * np.ones_like(t)

    x = np.array(guess, dtype=float)
    gx = G(x)
    done = gx == 0.0
    lo, hi = x.copy(), x.copy()
    glo, ghi = gx.copy(), gx.copy()
    width = np.maximum(1e-3, 1e-3 * np.abs(x))
    need = ~done
    for _ in range(200):
        if not np.any(need):
            break
        lo = np.where(need, x - width, lo)
        hi = np.where(need, x + width, hi)
        glo = np.where(need, G(lo), glo)
        ghi = np.where(need, G(hi), ghi)
        need = need & (np.sign(glo) * np.sign(ghi) > 0)
        width = width * growth
    if np.any(need):
        k = int(np.flatnonzero(need)[0])
        raise RootFindFailure(k, "no sign change found while expanding the bracket")
    hit_lo, hit_hi = glo == 0.0, ghi == 0.0
    x = np.where(done, x, np.where(hit_lo, lo, np.where(hit_hi, hi, 0.5 * (lo + hi))))
    done = done | hit_lo | hit_hi
    # orient so that G(lo) < 0 < G(hi)
    swap = glo > 0
    lo, hi = np.where(swap, hi, lo), np.where(swap, lo, hi)
    for _ in range(200):
        if np.all(done):
            break
        gx = G(x)
        d = dG(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x - gx / d
        neg = gx < 0
        lo = np.where(~done & neg, x, lo)
        hi = np.where(~done & ~neg, x, hi)
        inside = np.isfinite(newton) & ((newton - lo) * (newton - hi) < 0)
        root = gx == 0.0
        xn = np.where(root, x, np.where(inside, newton, 0.5 * (lo + hi)))
        conv = root | (np.abs(xn - x) <= 4e-16 * (1.0 + np.abs(xn))) | (np.abs(hi - lo) <= 4e-16 * (1.0 + np.abs(xn)))
        x = np.where(done, x, xn)
        done = done | conv
    if not np.all(done):
        k = int(np.flatnonzero(~done)[0])
        raise RootFindFailure(k, "safeguarded Newton did not converge")
    return x


_DX_CACHE: dict = {}


def _dx2(g):
    key = ("x2", g)
    out = _DX_CACHE.get(key)
    if out is None:
        out = _DX_CACHE[key] = diff(g, "x2")
    return out


def _dx1(g):
    key = ("x1", g)
    out = _DX_CACHE.get(key)
    if out is None:
        out = _DX_CACHE[key] = diff(g, "x1")
    return out


class _Eliminated:
    """Ritz objective over ``x1`` alone, with ``x2`` solved from the constraint."""

    def __init__(self, p: Problem, cfg: SolverConfig, x0=None):
        self.p, self.cfg = p, cfg
        self.ritz = _Ritz(p, p.lagrangian, x0)
        self.g = p.kind.g
        self.params = p.lagrangian.params
        self.t = p.grid.nodes
        self.guess = self.ritz.base[1].copy()
        self.free = self.ritz.free
        self.metric = p.grid.weights[self.free]

    def complete(self, x1: np.ndarray):
        x2 = solve_constraint_nodes(self.g, self.params, self.t, x1, self.guess, self.cfg.penalty_growth)
        env = dict(self.params, t=self.t, x1=x1, x2=x2)
        g1 = np.asarray(evaluate(_dx1(self.g), env), dtype=float) * np.ones_like(self.t)
        g2 = np.asarray(evaluate(_dx2(self.g), env), dtype=float) * np.ones_like(self.t)
        small = np.abs(g2) < 1e-10
        if np.any(small):
            k = int(np.flatnonzero(small)[0])
            raise SingularConstraint(k, float(g2[k]))
        return np.vstack([x1, x2]), -g1 / g2

    def unpack(self, u: np.ndarray) -> np.ndarray:
        x1 = self.ritz.base[0].copy()
        x1[self.free] = u
        return self.complete(x1)[0]

    def __call__(self, u: np.ndarray):
        x1 = self.ritz.base[0].copy()
        x1[self.free] = u
        X, dphi = self.complete(x1)
        val, G = self.ritz.full_gradient(X)
        grad = G[0] + G[1] * dphi
        return val, grad[self.free]


def solve_holonomic(p: Problem, cfg: SolverConfig | None = None, x0=None) -> SolveReport:
    """Eliminate ``x2`` through ``g(t, x1, x2) = 0`` and minimize over ``x1``."""
    cfg = cfg or SolverConfig()
    if not isinstance(p.kind, Holonomic):
        raise KindError("solve_holonomic needs a Holonomic problem")
    obj = _Eliminated(p, cfg, x0)
    u0 = obj.ritz.base[0][obj.free]
    # the initial guess must satisfy the constraint before descending
    obj.complete(obj.ritz.base[0])
    res = lbfgs(obj, u0, obj.metric, cfg)
    X = obj.unpack(res.x)
    lam = holonomic_multiplier(SampledFunction(p.grid, X), p)
    report = _finish(p, X, res, cfg, lam)
    report.info["sufficient"] = bool(report.diagnostics.convex)
    if report.diagnostics.constraint_defect > cfg.constraint_tol:
        report = replace(report, converged=False)
        report.info["message"] = "constraint defect above tolerance"
    return _raise_if_failed(report)


# ----------------------------------------------------------------- Herglotz


class _HerglotzObjective:
    def __init__(self, p: Problem, cfg: SolverConfig, x0=None):
        self.p, self.cfg = p, cfg
        self.op = assemble_matrix(OperatorKind.LEFT_DERIV, p.params, p.grid)
        base = straight_line(p) if x0 is None else np.array(_raw(x0), dtype=float).reshape(p.m, -1)
        _apply_bcs(base, p)
        self.base = base
        self.free = ~p.fixed_mask()
        self.metric = np.tile(p.grid.weights[self.free], p.m)

    def unpack(self, u: np.ndarray) -> np.ndarray:
        X = self.base.copy()
        X[:, self.free] = u.reshape(self.p.m, -1)
        return X

    def _zb(self, U: np.ndarray) -> np.ndarray:
        # U: (B, k) batch of unknown vectors
        B = U.shape[0]
        X = np.broadcast_to(self.base, (B,) + self.base.shape).copy()
        X[:, :, self.free] = U.reshape(B, self.p.m, -1)
        Dx = self.op(X)
        return herglotz_integrate(self.p, X, Dx)[:, -1]

    def __call__(self, u: np.ndarray):
        k = u.size
        hstep = self.cfg.fd_step * np.maximum(1.0, np.abs(u))
        E = np.diag(hstep)
        U = np.vstack([u[None, :], u[None, :] + E, u[None, :] - E])
        z = self._zb(U)
        grad = (z[1 : k + 1] - z[k + 1 :]) / (2.0 * hstep)
        return float(z[0]), grad


def solve_herglotz(p: Problem, cfg: SolverConfig | None = None, x0=None) -> SolveReport:
    """Minimize ``z(b)`` over interior node values; gradients by central differences."""
    cfg = cfg or SolverConfig()
    if not isinstance(p.kind, Herglotz):
        raise KindError("solve_herglotz needs a Herglotz problem")
    obj = _HerglotzObjective(p, cfg, x0)
    u0 = obj.base[:, obj.free].ravel()
    res = lbfgs(obj, u0, obj.metric, cfg)
    X = obj.unpack(res.x)
    report = _finish(p, X, res, cfg)
    tr = trajectory(X, p)
    report.info["lambda"] = herglotz_lambda(p, tr)
    return _raise_if_failed(report)


# ---------------------------------------------------------------- dispatch


def solve(p: Problem, cfg: SolverConfig | None = None, x0=None) -> SolveReport:
    """Dispatch on the problem kind."""
    kind = p.kind
    if isinstance(kind, (Plain, SplitDomain)):
        return solve_plain(p, cfg, x0)
    if isinstance(kind, Isoperimetric):
        return solve_isoperimetric(p, cfg, x0)
    if isinstance(kind, Holonomic):
        return solve_holonomic(p, cfg, x0)
    if isinstance(kind, Herglotz):
        return solve_herglotz(p, cfg, x0)
    raise KindError(f"unknown problem kind {kind!r}")


# --------------------------------------------------------------- rho search

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _psi_prime(p: Problem, X: np.ndarray, rho: float, rel_step: float = 1e-4) -> np.ndarray:
    """Central difference in rho of ``ckD^{alpha,rho} x`` at fixed ``t`` and ``x``."""
    t = p.grid.nodes
    dr = rel_step * rho
    al = p.params.alpha
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        hi = ck_deriv_nonuniform(t, X[i], FracParams(al, rho + dr))
        lo = ck_deriv_nonuniform(t, X[i], FracParams(al, rho - dr))
        out[i] = (hi - lo) / (2.0 * dr)
    return out


def optimize_rho(
    p: Problem,
    rho_range: tuple[float, float],
    cfg: SolverConfig | None = None,
    prescan: int = 8,
    xtol: float = 1e-6,
) -> SolveReport:
    """Jointly minimize over ``x`` and ``rho``.

    An 8-point prescan over ``rho_range`` picks the best bracket, then golden
    section search refines it, with an inner solve at every ``rho`` (grid
    rebuilt uniform in ``s``). The report carries ``rho_opt`` and, in
    ``info``, the stationarity integral ``int dL/dd * dpsi/drho dt`` together
    with ``flat`` and ``boundary`` flags.
    """
    cfg = cfg or SolverConfig()
    lo, hi = float(rho_range[0]), float(rho_range[1])
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ValueError(f"rho range must satisfy 0 < lo < hi < inf, got {rho_range}")
    cache: dict[float, SolveReport | None] = {}
    failures: list[str] = []

    def J(rho: float) -> float:
        if rho not in cache:
            try:
                cache[rho] = solve(p.with_params(rho=rho), cfg)
            except NonConvergence as exc:
                cache[rho] = exc.report
                failures.append(f"rho={rho!r}: {exc}")
        rep = cache[rho]
        return math.inf if rep is None else rep.J

    grid_r = np.linspace(lo, hi, prescan)
    vals = np.array([J(float(r)) for r in grid_r])
    finite = vals[np.isfinite(vals)]
    if finite.size == 0:
        raise NonConvergence(0, math.inf, "no inner solve succeeded in the rho prescan")
    flat = bool(np.ptp(finite) <= 1e-12 * (1.0 + np.max(np.abs(finite))))
    i = int(np.argmin(vals))
    if flat:
        rho_star = float(grid_r[prescan // 2]) if np.isfinite(vals[prescan // 2]) else float(grid_r[i])
    else:
        a = float(grid_r[max(i - 1, 0)])
        b = float(grid_r[min(i + 1, prescan - 1)])
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = J(c), J(d)
        while b - a > xtol * (1.0 + abs(a)):
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - _GOLDEN * (b - a)
                fc = J(c)
            else:
                a, c, fc = c, d, fd
                d = a + _GOLDEN * (b - a)
                fd = J(d)
        candidates = [r for r in (a, b, c, d, float(grid_r[i])) if r in cache]
        rho_star = min(candidates, key=J)
    best = cache[rho_star]
    if best is None:
        raise NonConvergence(0, math.inf, "inner solve failed at the selected rho")
    prob = p.with_params(rho=rho_star)
    X = best.x.values
    tr = trajectory(X, prob)
    L = prob.lagrangian
    Ld = np.array([L.eval(L.partial(L.d_name(k)), tr.t, tr.x, tr.d, tr.z) for k in range(prob.m)])
    psi = _psi_prime(prob, X, rho_star)
    stationarity = float(np.sum(prob.cost_weights() @ (Ld * psi).T))
    span = (hi - lo) / (prescan - 1)
    boundary = bool(not flat and (rho_star - lo < 1e-3 * span or hi - rho_star < 1e-3 * span))
    info = dict(best.info)
    info.update(
        stationarity=stationarity,
        flat=flat,
        boundary=boundary,
        prescan=[(float(r), float(v)) for r, v in zip(grid_r, vals)],
        evaluations=len(cache),
        failures=failures,
    )
    return _raise_if_failed(replace(best, rho_opt=rho_star, info=info))
