"""Grids on ``[a, b]``, their ``s = t**rho`` images and trapezoid quadrature.

Every fractional operator in :mod:`fracvar.fracops` works on the transformed
variable ``s = t**rho``. A :class:`Grid` therefore carries both node sets, and
the default spacing is uniform in ``s``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

__all__ = [
    "Spacing",
    "Grid",
    "SampledFunction",
    "make_grid",
    "quad_trapezoid",
    "trapezoid_weights",
    "power_span",
]


class Spacing(str, enum.Enum):
    UNIFORM_T = "uniform_t"
    UNIFORM_S = "uniform_s"


def power_span(lo: float, hi: float, rho: float) -> float:
    """``hi**rho - lo**rho`` without cancellation for small ``rho``."""
    if rho == 1.0:
        return hi - lo
    return math.exp(rho * math.log(lo)) * math.expm1(rho * math.log(hi / lo))


def _power(t: np.ndarray, rho: float) -> np.ndarray:
    # log space keeps t**rho accurate for a < 1 and tiny rho
    if rho == 1.0:
        return np.array(t, dtype=float)
    return np.exp(rho * np.log(t))


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing nodes ``t_0 = a < ... < t_n = b`` and ``s_k = t_k**rho``.

    ``s_step`` is the uniform ``s`` spacing when the grid is uniform in ``s``
    and ``None`` otherwise. Grids are immutable; ``_cache`` only memoizes
    operator matrices built on this grid.
    """

    a: float
    b: float
    n: int
    rho: float
    nodes: np.ndarray
    s_nodes: np.ndarray
    spacing: Spacing
    s_step: float | None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.s_nodes.setflags(write=False)

    @property
    def size(self) -> int:
        return self.n + 1

    @property
    def weights(self) -> np.ndarray:
        w = self._cache.get("trapezoid")
        if w is None:
            w = trapezoid_weights(self.nodes)
            w.setflags(write=False)
            self._cache["trapezoid"] = w
        return w

    @property
    def uniform_in_s(self) -> bool:
        return self.s_step is not None

    def index_of(self, t: float, tol: float = 1e-10) -> int:
        """Index of the node equal to ``t`` (within ``tol*(b-a)``)."""
        k = int(np.argmin(np.abs(self.nodes - t)))
        if abs(self.nodes[k] - t) > tol * (self.b - self.a):
            raise DomainError(f"t={t!r} is not a grid node")
        return k

    def restrict(self, k: int) -> "Grid":
        """The sub-grid on ``[a, t_k]`` made of the first ``k+1`` nodes."""
        if not 2 <= k <= self.n:
            raise DomainError(f"cannot restrict a grid with n={self.n} to {k} intervals")
        if k == self.n:
            return self
        return Grid(
            a=self.a,
            b=float(self.nodes[k]),
            n=k,
            rho=self.rho,
            nodes=np.array(self.nodes[: k + 1]),
            s_nodes=np.array(self.s_nodes[: k + 1]),
            spacing=self.spacing,
            s_step=self.s_step,
        )

    def sample(self, fn) -> "SampledFunction":
        return SampledFunction(self, np.asarray(fn(np.asarray(self.nodes)), dtype=float) * np.ones(self.size))


def make_grid(a: float, b: float, n: int, rho: float, spacing: Spacing | str = Spacing.UNIFORM_S) -> Grid:
    """Build a grid on ``[a, b]`` with ``n`` intervals.

    ``UNIFORM_T`` spaces ``t`` evenly; ``UNIFORM_S`` spaces ``s = t**rho``
    evenly and maps back with ``t = s**(1/rho)``.
    """
    spacing = Spacing(spacing)
    a, b, rho = float(a), float(b), float(rho)
    if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(rho)):
        raise DomainError("grid parameters must be finite")
    if a <= 0:
        raise DomainError(f"left endpoint must be positive, got a={a}")
    if a >= b:
        raise DomainError(f"need a < b, got a={a}, b={b}")
    if int(n) != n or n < 2:
        raise DomainError(f"need at least 2 intervals, got n={n}")
    if rho <= 0:
        raise DomainError(f"rho must be positive, got {rho}")
    n = int(n)
    k = np.arange(n + 1, dtype=float)

    if spacing is Spacing.UNIFORM_T or rho == 1.0:
        nodes = a + k * ((b - a) / n)
        nodes[-1] = b
        s_nodes = _power(nodes, rho)
        s_step = (b - a) / n if rho == 1.0 else None
    else:
        s_a = math.exp(rho * math.log(a))
        s_step = power_span(a, b, rho) / n
        s_nodes = s_a + k * s_step
        nodes = np.exp(np.log(s_nodes) / rho)
        nodes[0], nodes[-1] = a, b
    if np.any(np.diff(nodes) <= 0) or np.any(np.diff(s_nodes) <= 0):
        raise DomainError("grid nodes are not strictly increasing at working precision")
    return Grid(a=a, b=b, n=n, rho=rho, nodes=nodes, s_nodes=s_nodes, spacing=spacing, s_step=s_step)


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    h = np.diff(nodes)
    w = np.zeros(len(nodes))
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def quad_trapezoid(f_values, grid: Grid) -> float:
    """Composite trapezoid rule on the ``t`` nodes of ``grid``."""
    f = np.asarray(f_values, dtype=float)
    if f.shape != (grid.size,):
        raise DomainError(f"expected {grid.size} values, got shape {f.shape}")
    return float(grid.weights @ f)


@dataclass(frozen=True, eq=False)
class SampledFunction:
    """Node values of a scalar or vector function on a grid.

    ``values`` always has shape ``(components, n + 1)``; a 1-D array is
    treated as a single component.
    """

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] != self.grid.size or v.shape[0] < 1:
            raise DomainError(f"values must have length {self.grid.size} per component, got shape {np.shape(self.values)}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def component(self, i: int = 0) -> np.ndarray:
        return self.values[i]

    @property
    def scalar(self) -> np.ndarray:
        if self.components != 1:
            raise DomainError(f"expected a single-component function, got {self.components}")
        return self.values[0]
