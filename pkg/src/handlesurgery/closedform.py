"""Closed-form pieces of the linear handle dynamics shared by several modules.

Everything is in rescaled units.  The re-speeded Reeb field on a level set of
``h = sum_i r_i (2 x_i^2 - y_i^2)`` is ``x_i' = r_i y_i, y_i' = 2 r_i x_i`` with
per-coordinate rates ``r = (1, e, ..., e)`` and ``e = epsilon^(2s)``.  Along it
the line integral of ``alpha = 2 x.dy + y.dx`` is ``1.5 * delta(x.y) + h * tau / 2``.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

SQRT2 = math.sqrt(2.0)


def coth_csch(z):
    """Stable (coth z, csch z) for z > 0, vectorized; avoids overflow for large z."""
    z = np.asarray(z, dtype=float)
    q = np.exp(-2.0 * z)
    den = -np.expm1(-2.0 * z)
    return (1.0 + q) / den, 2.0 * np.exp(-z) / den


def flow_xy(x, y, rates, t):
    """Re-speeded handle Reeb flow for parameter time ``t`` (closed form, any sign of t)."""
    lam_t = SQRT2 * np.asarray(rates) * t
    with np.errstate(over="ignore", invalid="ignore"):
        c, s = np.cosh(lam_t), np.sinh(lam_t)
        # a coordinate pair at rest stays at rest even when cosh overflows
        x = np.asarray(x)
        y = np.asarray(y)
        return (np.where(x == 0, 0.0, c * x) + np.where(y == 0, 0.0, s * y / SQRT2),
                np.where(x == 0, 0.0, SQRT2 * s * x) + np.where(y == 0, 0.0, c * y))


def level_value(x, y, rates) -> float:
    return float(np.sum(rates * (2.0 * x * x - y * y)))


def respeeded_action(x0, y0, x1, y1, level, tau) -> float:
    """Integral of alpha along a re-speeded flow segment of parameter length tau."""
    return 1.5 * (float(x1 @ y1) - float(x0 @ y0)) + 0.5 * level * tau


def respeeded_time_for_action(x0, y0, rates, action: float, level: float | None = None) -> float:
    """Parameter time whose re-speeded segment from (x0, y0) carries the given alpha-integral.

    The alpha-integral is strictly increasing in the parameter time, so the root
    is unique; works for negative ``action`` (backwards flow) as well.
    """
    if action == 0.0:
        return 0.0
    if level is None:
        level = level_value(x0, y0, rates)

    def g(tau):
        x1, y1 = flow_xy(x0, y0, rates, tau)
        return respeeded_action(x0, y0, x1, y1, level, tau) - action

    step = math.copysign(min(1.0, abs(action)), action)
    hi = step
    for _ in range(200):
        if g(hi) * math.copysign(1.0, action) >= 0:
            break
        hi *= 2.0
    else:
        raise ArithmeticError("could not bracket the unit-speed time")
    lo, hi = (0.0, hi) if action > 0 else (hi, 0.0)
    return brentq(g, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
