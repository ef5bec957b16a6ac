"""Smooth transition profiles with closed-form derivatives.

All plateau cutoffs in this package (spatial cutoff in the corrector
construction, low-pass symbol of the smoothing operators) are built from the
same C-infinity step

    step(t) = f(t) / (f(t) + f(1-t)),    f(t) = exp(-1/t) for t > 0, else 0,

which is 0 for t <= 0, 1 for t >= 1, and has all derivatives vanishing at
both junctions.  Derivatives up to order 4 are evaluated in closed form
(Faa di Bruno applied to exp and the reciprocal); no symbolic machinery at
runtime.
"""

from __future__ import annotations

import numpy as np

# Outside [_CORE, 1-_CORE] the step is 0/1 to beyond double precision
# (step(0.02) ~ 2e-22), so the branches below are numerically exact.
_CORE = 0.02

MAX_DERIV = 4


def _h_derivs(t):
    """h(t) = 1/t - 1/(1-t) and derivatives 1..4 (step = 1/(1+e^h))."""
    s = 1.0 - t
    h0 = 1.0 / t - 1.0 / s
    h1 = -1.0 / t**2 - 1.0 / s**2
    h2 = 2.0 / t**3 - 2.0 / s**3
    h3 = -6.0 / t**4 - 6.0 / s**4
    h4 = 24.0 / t**5 - 24.0 / s**5
    return h0, h1, h2, h3, h4


def smoothstep(t: np.ndarray | float, order: int = 0) -> np.ndarray:
    """C-infinity step from 0 (t<=0) to 1 (t>=1), or its derivative.

    order 0 returns the value, orders 1..4 return d^m/dt^m in closed form.
    """
    if not 0 <= order <= MAX_DERIV:
        raise ValueError(f"profile derivative order must be 0..{MAX_DERIV}, got {order}")
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    if order == 0:
        out[t >= 1.0 - _CORE] = 1.0
    core = (t > _CORE) & (t < 1.0 - _CORE)
    if not np.any(core):
        return out

    tc = t[core]
    h0, h1, h2, h3, h4 = _h_derivs(tc)
    g = np.exp(h0)
    v = 1.0 + g
    if order == 0:
        out[core] = 1.0 / v
        return out
    # g = e^h: chain derivatives via Bell polynomials in h', h'', ...
    g1 = h1 * g
    g2 = (h2 + h1**2) * g
    g3 = (h3 + 3.0 * h1 * h2 + h1**3) * g
    g4 = (h4 + 4.0 * h1 * h3 + 3.0 * h2**2 + 6.0 * h1**2 * h2 + h1**4) * g
    if order == 1:
        out[core] = -g1 / v**2
    elif order == 2:
        out[core] = 2.0 * g1**2 / v**3 - g2 / v**2
    elif order == 3:
        out[core] = -6.0 * g1**3 / v**4 + 6.0 * g1 * g2 / v**3 - g3 / v**2
    else:
        out[core] = (24.0 * g1**4 / v**5 - 36.0 * g1**2 * g2 / v**4
                     + (6.0 * g2**2 + 8.0 * g1 * g3) / v**3 - g4 / v**2)
    return out


def plateau(t, lo: float, hi: float, order: int = 0):
    """Profile equal to 1 for t <= lo, 0 for t >= hi, C-infinity in between.

    Returns the order-th derivative with respect to t (0..4).
    """
    if not hi > lo:
        raise ValueError("plateau needs hi > lo")
    width = hi - lo
    u = (hi - np.asarray(t, dtype=float)) / width
    val = smoothstep(u, order)
    if order:
        val = val * (-1.0 / width) ** order
    return val
