"""Caputo-Katugampola operators as dense triangular matrices.

All four operators are evaluated in the variable ``s = t**rho``, where the
Katugampola kernels ``(t**rho - tau**rho)**(-alpha)`` turn into classical
Riemann-Liouville / Caputo kernels ``(s - sigma)**(-alpha)``:

* left derivative   ``rho**alpha`` times the Caputo derivative of
  ``y(s) = x(s**(1/rho))``, discretized by the L1 scheme;
* left integral     ``rho**(-alpha)`` times the Riemann-Liouville integral of
  ``y``, discretized by product trapezoid weights;
* right integral    ``rho**(-alpha)`` times the right Riemann-Liouville
  integral of ``w = x * t**(1 - rho)`` (the right kernels carry no
  ``tau**(rho-1)`` weight, so the Jacobian stays in the integrand);
* right derivative  ``rho**alpha * t**(rho-1) * dG/ds`` with
  ``G(s) = int_s^B (sigma - s)**(-alpha) w(sigma) dsigma / Gamma(1-alpha)``,
  differentiated exactly for piecewise-linear ``w``.

The grids must be uniform in ``s``; the weights then depend on ``h`` and
index offsets only.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .errors import DomainError
from .grid import Grid, SampledFunction
from .special import gamma, riemann_zeta

__all__ = [
    "FracParams",
    "OperatorKind",
    "OperatorMatrix",
    "assemble_matrix",
    "ck_deriv",
    "ck_integral",
    "right_integral",
    "right_deriv",
    "ck_deriv_nonuniform",
]


@dataclass(frozen=True)
class FracParams:
    alpha: float
    rho: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not (self.rho > 0.0 and math.isfinite(self.rho)):
            raise DomainError(f"rho must be positive, got {self.rho}")

    def with_order(self, alpha: float) -> "FracParams":
        return FracParams(alpha, self.rho)


class OperatorKind(str, enum.Enum):
    LEFT_INT = "left_int"
    LEFT_DERIV = "left_deriv"
    RIGHT_INT = "right_int"
    RIGHT_DERIV = "right_deriv"


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """A discretized operator; ``weights @ values`` applies it.

    Difference schemes also carry ``increments``, with
    ``weights = increments @ diff``. Calling the operator then goes through
    the node increments, so constant samples map to exact zeros. Calls
    accept a leading batch axis.
    """

    kind: OperatorKind
    params: FracParams
    grid: Grid
    weights: np.ndarray
    increments: np.ndarray | None = None

    def __call__(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if self.increments is not None:
            return np.diff(v, axis=-1) @ self.increments.T
        return v @ self.weights.T


def _check_grid(grid: Grid, p: FracParams) -> float:
    if grid.rho != p.rho:
        raise DomainError(f"grid was built for rho={grid.rho}, operator needs rho={p.rho}")
    if not grid.uniform_in_s:
        raise DomainError("fractional operators need a grid that is uniform in s = t**rho")
    return grid.s_step


def _t_power(grid: Grid, e: float) -> np.ndarray:
    if e == 0.0:
        return np.ones(grid.size)
    return np.exp(e * np.log(grid.nodes))


def _l1_increments(n: int, beta: float) -> np.ndarray:
    # b_m = (m + 1)**beta - m**beta, m = 0..n-1
    m = np.arange(n + 1, dtype=float) ** beta
    return np.diff(m)


def _product_trapezoid(n: int, beta: float) -> np.ndarray:
    """Lower-triangular weights of int_{s_0}^{s_k} (s_k - sigma)**(beta-1) y dsigma / Gamma(beta).

    Exact for piecewise-linear ``y``; the common factor ``h**beta`` is left out.
    """
    m = np.arange(n + 2, dtype=float)
    p = m ** (beta + 1.0)
    # interior offsets m = k - j >= 1: (m+1)^(b+1) - 2 m^(b+1) + (m-1)^(b+1)
    inner = np.empty(n + 1)
    inner[0] = 1.0
    inner[1:] = p[2 : n + 2] - 2.0 * p[1 : n + 1] + p[0:n]
    M = np.tril(toeplitz(inner, np.zeros(n + 1)))
    k = np.arange(1, n + 1, dtype=float)
    M[1:, 0] = (k - 1.0) ** (beta + 1.0) - (k - 1.0 - beta) * k**beta
    M[0, 0] = 0.0
    M *= 1.0 / gamma(beta + 2.0)
    return M


def _left_deriv(grid: Grid, p: FracParams) -> np.ndarray:
    """Increment weights: ``d_k = sum_j G[k, j] (x_{j+1} - x_j)``."""
    h = _check_grid(grid, p)
    n, al = grid.n, p.alpha
    b = _l1_increments(n, 1.0 - al) * (p.rho**al * h ** (-al) / gamma(2.0 - al))
    G = np.zeros((n + 1, n))
    G[1:] = np.tril(toeplitz(b, np.zeros(n)))
    return G


def _left_int(grid: Grid, p: FracParams) -> np.ndarray:
    h = _check_grid(grid, p)
    M = _product_trapezoid(grid.n, p.alpha)
    M *= p.rho ** (-p.alpha) * h**p.alpha
    return M


def _right_int(grid: Grid, p: FracParams) -> np.ndarray:
    h = _check_grid(grid, p)
    # mirror of the left weights: reverse node order on both axes
    M = _product_trapezoid(grid.n, p.alpha)[::-1, ::-1].copy()
    M *= p.rho ** (-p.alpha) * h**p.alpha
    M *= _t_power(grid, 1.0 - p.rho)[None, :]
    return M


def _right_deriv(grid: Grid, p: FracParams) -> np.ndarray:
    h = _check_grid(grid, p)
    n, al = grid.n, p.alpha
    b = _l1_increments(n, 1.0 - al)
    # dG/ds(s_k) = -(B - s_k)**(-al) w_n + h**(-al)/(1-al) sum_{j>=k} (w_{j+1} - w_j) b_{j-k}
    row = np.empty(n + 1)
    row[0] = -b[0]
    row[1:n] = b[0 : n - 1] - b[1:n]
    row[n] = 0.0
    first_col = np.zeros(n + 1)
    first_col[0] = row[0]
    M = np.triu(toeplitz(first_col, row))
    M[:n, n] = b[::-1]
    M *= 1.0 / (1.0 - al)
    N = np.arange(n, 0, -1, dtype=float)
    M[:n, n] -= N ** (-al)
    # dG/ds is infinite at s = B unless w_n = 0; the last row holds the finite
    # value that makes the trapezoid rule integrate the (B - s)**(-al) term to
    # leading order (generalized Euler-Maclaurin correction).
    M[n, :] = 0.0
    M[n, n] = 2.0 * riemann_zeta(al)
    M *= h ** (-al)
    M *= p.rho**al / gamma(1.0 - al)
    M *= _t_power(grid, p.rho - 1.0)[:, None]
    M *= _t_power(grid, 1.0 - p.rho)[None, :]
    return M


_BUILDERS = {
    OperatorKind.LEFT_INT: _left_int,
    OperatorKind.RIGHT_INT: _right_int,
    OperatorKind.RIGHT_DERIV: _right_deriv,
}


def assemble_matrix(kind: OperatorKind | str, p: FracParams, grid: Grid) -> OperatorMatrix:
    """Dense matrix of one operator on ``grid``; memoized per grid."""
    kind = OperatorKind(kind)
    key = ("op", kind, p.alpha, p.rho)
    op = grid._cache.get(key)
    if op is None:
        G = None
        if kind is OperatorKind.LEFT_DERIV:
            G = _left_deriv(grid, p)
            W = np.zeros((grid.size, grid.size))
            W[:, 1:] += G
            W[:, :-1] -= G
            G.setflags(write=False)
        else:
            W = _BUILDERS[kind](grid, p)
        W.setflags(write=False)
        op = OperatorMatrix(kind, p, grid, W, G)
        grid._cache[key] = op
    return op


def _apply(kind: OperatorKind, x: SampledFunction, p: FracParams) -> SampledFunction:
    values = x.scalar
    op = assemble_matrix(kind, p, x.grid)
    return SampledFunction(x.grid, op(values))


def ck_deriv(x: SampledFunction, p: FracParams) -> SampledFunction:
    """Left Caputo-Katugampola derivative of order ``p.alpha``; zero at ``t = a``."""
    return _apply(OperatorKind.LEFT_DERIV, x, p)


def ck_integral(x: SampledFunction, p: FracParams) -> SampledFunction:
    """Left Katugampola integral of order ``p.alpha``; zero at ``t = a``."""
    return _apply(OperatorKind.LEFT_INT, x, p)


def right_integral(x: SampledFunction, p: FracParams) -> SampledFunction:
    """Right integral ``I_{b-}^{alpha,rho}``; zero at ``t = b``."""
    return _apply(OperatorKind.RIGHT_INT, x, p)


def right_deriv(x: SampledFunction, p: FracParams) -> SampledFunction:
    """Right derivative ``D_{b-}^{alpha,rho} x = rho**alpha/Gamma(1-alpha) d/dt int_t^b (tau**rho - t**rho)**(-alpha) x dtau``.

    When ``x(b) != 0`` the true value diverges like ``(b - t)**(-alpha)``
    at ``t = b``. The returned node value there is the finite surrogate
    ``2 zeta(alpha) h**(-alpha)`` times the singular coefficient, which is
    what the trapezoid rule needs to integrate the singularity consistently.
    """
    return _apply(OperatorKind.RIGHT_DERIV, x, p)


def ck_deriv_nonuniform(t: np.ndarray, values: np.ndarray, p: FracParams) -> np.ndarray:
    """L1 left derivative on arbitrary nodes ``t`` (any spacing in ``s``).

    Used where ``rho`` varies at fixed ``t`` nodes, e.g. for derivatives of
    the operator with respect to ``rho``.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(values, dtype=float)
    lt = np.log(t)
    rho, al = p.rho, p.alpha
    s = np.exp(rho * lt)
    # ds[k, j] = s_k - s_j, computed without cancellation
    ds = s[None, :] * np.expm1(rho * (lt[:, None] - lt[None, :]))
    ds = np.where(ds > 0, ds, 0.0)
    ds_step = np.diff(s) if rho == 1.0 else s[:-1] * np.expm1(rho * np.diff(lt))
    slope = np.diff(y) / ds_step
    P = ds ** (1.0 - al)
    # (s_k - s_j)^(1-al) - (s_k - s_{j+1})^(1-al) for j < k
    K = P[:, :-1] - P[:, 1:]
    K = np.tril(K, -1)
    return rho**al / gamma(2.0 - al) * (K @ slope)
