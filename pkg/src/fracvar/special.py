"""Special functions used by the fractional operators."""

from __future__ import annotations

import math

from scipy.special import zeta as _scipy_zeta

from .errors import DomainError

__all__ = ["gamma", "riemann_zeta"]

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


def gamma(z: float) -> float:
    """Gamma function for real ``z > 0``.

    Lanczos approximation (g = 7, nine coefficients) for ``z >= 1``; smaller
    arguments are shifted up with ``Gamma(z) = Gamma(z + 1) / z``. Relative
    accuracy is better than 1e-13 on (0, 30].
    """
    z = float(z)
    if not z > 0 or not math.isfinite(z):
        raise DomainError(f"gamma is only defined here for finite z > 0, got {z}")
    if z < 1.0:
        return gamma(z + 1.0) / z
    x = z - 1.0
    acc = _LANCZOS_COEF[0]
    for i in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[i] / (x + i)
    t = x + _LANCZOS_G + 0.5
    # split the power to delay overflow for large z
    half = t ** ((x + 0.5) / 2.0)
    return _SQRT_2PI * half * half * math.exp(-t) * acc


def riemann_zeta(s: float) -> float:
    """Riemann zeta for real ``s != 1`` (analytic continuation below 1)."""
    if s == 1.0:
        raise DomainError("zeta has a pole at s = 1")
    return float(_scipy_zeta(s))
