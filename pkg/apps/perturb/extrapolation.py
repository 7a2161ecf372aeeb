import logging
import math
from typing import Optional, Sequence

import numpy as np


logger = logging.getLogger(__name__)


def neville_extrapolate(xs: Sequence[float], ys: Sequence[float], x0: float = 0.0) -> float:
    """Value at x0 of the interpolating polynomial through (xs, ys)."""
    xs = [float(x) for x in xs]
    table = [float(y) for y in ys]
    if len(xs) != len(table) or not xs:
        raise ValueError(f"Neville extrapolation needs matching nonempty samples, got {len(xs)} and {len(table)}")
    for level in range(1, len(xs)):
        table = [
            ((x0 - xs[i + level]) * table[i] - (x0 - xs[i]) * table[i + 1]) / (xs[i] - xs[i + level])
            for i in range(len(table) - 1)
        ]
    return table[0]


def richardson_limit(xs: Sequence[float], ys: Sequence[float]) -> tuple[float, Optional[float]]:
    """Linear extrapolation to x = 0 from the two smallest x, plus an order estimate.

    With a third point the order p of ys - limit ~ c x^p is read from the
    ratio of successive differences; it is None when the differences vanish.

    Returns:
        (limit, order)
    """
    points = sorted(zip(xs, ys))
    if not points:
        raise ValueError("Richardson extrapolation needs at least one sample")
    if len(points) == 1:
        return float(points[0][1]), None
    (x1, y1), (x2, y2) = points[:2]
    limit = y1 - x1 * (y2 - y1) / (x2 - x1)
    order = None
    if len(points) >= 3:
        x3, y3 = points[2]
        low, high = abs(y2 - y1), abs(y3 - y2)
        if low > 0 and high > 0:
            order = math.log(high / low) / math.log(x2 / x1)
            if abs(order - 1.0) > 0.25:
                logger.warning(f"Richardson order estimate {order:.3f} is not close to 1")
    return float(limit), order


def fitted_order(xs: Sequence[float], residuals: Sequence[float]) -> Optional[float]:
    """Least-squares slope of log|residual| against log x; None if any residual is zero."""
    residuals = np.abs(np.asarray(residuals, dtype=float))
    if len(residuals) < 2 or np.any(residuals == 0) or not np.all(np.isfinite(residuals)):
        return None
    return float(np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(residuals), 1)[0])
