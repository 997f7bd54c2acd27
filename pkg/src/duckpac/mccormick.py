"""McCormick envelope of a bilinear product ``w = x * y`` over a box."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def mccormick_planes(xL, xU, yL, yU):
    """Four inequality planes bounding ``w = x*y`` on ``[xL, xU] x [yL, yU]``.

    Returns ``(coef, rhs)`` where row ``k`` encodes
    ``coef[k, 0]*x + coef[k, 1]*y + coef[k, 2]*w <= rhs[k]``. Rows are the two
    under-estimators followed by the two over-estimators::

        w >= xL*y + yL*x - xL*yL
        w >= xU*y + yU*x - xU*yU
        w <= xU*y + yL*x - xU*yL
        w <= xL*y + yU*x - xL*yU

    Inputs broadcast; with array inputs the result has shape ``(..., 4, 3)`` and
    ``(..., 4)``.
    """
    xL, xU, yL, yU = (np.asarray(v, dtype=float) for v in (xL, xU, yL, yU))
    for v in (xL, xU, yL, yU):
        if not np.all(np.isfinite(v)):
            raise ValidationError("McCormick bounds must be finite")
    if np.any(xL > xU) or np.any(yL > yU):
        raise ValidationError("McCormick bounds need lower <= upper")
    xL, xU, yL, yU = np.broadcast_arrays(xL, xU, yL, yU)
    one = np.ones_like(xL)
    coef = np.stack([
        np.stack([yL, xL, -one], axis=-1),
        np.stack([yU, xU, -one], axis=-1),
        np.stack([-yL, -xU, one], axis=-1),
        np.stack([-yU, -xL, one], axis=-1),
    ], axis=-2)
    rhs = np.stack([xL * yL, xU * yU, -xU * yL, -xL * yU], axis=-1)
    return coef, rhs


def envelope_interval(x, y, xL, xU, yL, yU):
    """Range of ``w`` admitted by the envelope at the point ``(x, y)``."""
    lo = np.maximum(xL * y + yL * x - xL * yL, xU * y + yU * x - xU * yU)
    hi = np.minimum(xU * y + yL * x - xU * yL, xL * y + yU * x - xL * yU)
    return lo, hi


def product_bounds(xL, xU, yL, yU):
    """Interval hull of ``x*y`` over the box (corner enumeration)."""
    c = np.stack([xL * yL, xL * yU, xU * yL, xU * yU])
    return c.min(axis=0), c.max(axis=0)
