"""Exact sampling of finite orbit segments under the closed equivariant measures.

An orbit x_0, ..., x_N with x_0 ~ mu_{k,0} is drawn backwards: x_N comes from
mu_{k+N,0}, whose Lebesgue density phi0 * nu0 is piecewise constant, and each
step back picks a preimage y_b of x_{j+1} with probability
g(y_b) phi_{k+j,0}(y_b) / (lambda_{k+j,0} phi_{k+j+1,0}(x_{j+1})).
Inverse branches contract, so no precision is lost along the way.
"""
import logging
from typing import Iterator

import numpy as np

from apps.thermo.types import ThermoWindow
from apps.transfer_op.types import WindowError


logger = logging.getLogger(__name__)


def sample_cells(*, density: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Points drawn from a piecewise-constant Lebesgue density on n cells."""
    n = density.shape[0]
    cdf = np.cumsum(np.clip(density, 0.0, None))
    if not cdf[-1] > 0.0:
        raise ValueError("Cannot sample from a density with zero mass")
    cells = np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right")
    cells = np.minimum(cells, n - 1)
    return (cells + rng.random(size)) / n


def reverse_orbits(
    *,
    window: ThermoWindow,
    k: int,
    steps: int,
    size: int,
    rng: np.random.Generator,
) -> Iterator[tuple[int, np.ndarray]]:
    """Yield (j, x_j) for j = steps, steps - 1, ..., 0 along ``size`` orbits started at fiber k."""
    if not (window.contains(k) and k + steps <= window.hi + 1):
        raise WindowError(f"Fibers [{k}, {k + steps}] leave the thermo window [{window.lo}, {window.hi + 1}]")
    n = window.n
    exponent = window.cocycle.weight.exponent
    end = window.row(k + steps)
    x = sample_cells(density=window.phi0[end] * window.nu0[end], size=size, rng=rng)
    yield steps, x

    for j in range(steps - 1, -1, -1):
        tmap = window.cocycle.tmap(k + j)
        phi = window.phi0[window.row(k + j)]
        candidates = np.empty((len(tmap.branches), size))
        weights = np.zeros((len(tmap.branches), size))
        for b, branch in enumerate(tmap.branches):
            y = branch.inverse(x)
            inside = (y >= branch.left) & (y <= branch.right)
            cells = np.clip((y * n).astype(np.int64), 0, n - 1)
            candidates[b] = y
            weights[b] = np.where(inside, abs(branch.slope) ** (-exponent) * phi[cells], 0.0)
        cumulative = np.cumsum(weights, axis=0)
        total = cumulative[-1]
        if np.any(total <= 0.0):
            raise ValueError(f"Points at fiber {k + j + 1} have no preimage with positive density")
        pick = (cumulative < (rng.random(size) * total)[None, :]).sum(axis=0)
        pick = np.minimum(pick, len(tmap.branches) - 1)
        x = candidates[pick, np.arange(size)]
        yield j, x
