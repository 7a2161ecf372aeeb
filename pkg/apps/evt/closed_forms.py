"""Exact extremal indices for the piecewise-affine families with small holes.

Values are taken in the limit of vanishing holes around the observable
centres; densities are read off the grid of a closed thermo window.
"""
import logging

import numpy as np

from apps.evt.constants import CENTER_MATCH_TOL
from apps.evt.types import ObservableSpec
from apps.interval_maps.services import map_for_payload, preimages
from apps.interval_maps.types import PiecewiseAffineMap
from apps.thermo.types import ThermoWindow


logger = logging.getLogger(__name__)


def _cell_value(values: np.ndarray, x: float) -> float:
    """Right-hand value of a grid function at x."""
    n = values.shape[0]
    return float(values[min(int(np.floor(x * n)), n - 1)])


def _slope_at(tmap: PiecewiseAffineMap, x: float) -> float:
    return abs(float(tmap.slopes[int(tmap.branch_index(x))]))


def _circle_gap(x: float, y: float) -> float:
    d = abs(x - y) % 1.0
    return min(d, 1.0 - d)


def example1_theta(*, closed: ThermoWindow, k: int, center: float = 0.5) -> float:
    """1 - min(t_{k-1} / t_k, 1 / |T'_{k-1}(center)|) for maps fixing the centre."""
    path = closed.cocycle.path
    previous, current = path.payload(k - 1), path.payload(k)
    slope = _slope_at(map_for_payload(previous), center)
    return 1.0 - min(previous.t / current.t, 1.0 / slope)


def example2_theta(*, closed: ThermoWindow, k: int) -> float:
    """Left holes [0, r] at the fixed point 0 of a beta map.

    The local return probability is the share of the preimage branch at 0 in
    the weighted density mass over all preimages of 0, capped by t_{k-1} / t_k.
    """
    path = closed.cocycle.path
    previous, current = path.payload(k - 1), path.payload(k)
    tmap = map_for_payload(previous)
    phi = closed.phi0[closed.row(k - 1)]
    exponent = closed.cocycle.weight.exponent
    weights = [
        _cell_value(phi, y) * abs(float(tmap.slopes[branch])) ** (-exponent) for y, branch in preimages(tmap=tmap, x=0.0)
    ]
    local = next(w for (y, _), w in zip(preimages(tmap=tmap, x=0.0), weights) if y == 0.0)
    return 1.0 - min(previous.t / current.t, local / sum(weights))


def example3_theta(*, tmap: PiecewiseAffineMap, x0: float, period: int) -> float:
    """1 - 1 / |DT^p(x0)| for a p-periodic centre of a fixed map."""
    derivative, x = 1.0, x0
    for _ in range(period):
        derivative *= _slope_at(tmap, x)
        x = float(tmap(x))
    if _circle_gap(x, x0) > CENTER_MATCH_TOL:
        raise ValueError(f"{x0} is not {period}-periodic: T^{period}({x0}) = {x}")
    return 1.0 - 1.0 / derivative


def chain_qhat(*, closed: ThermoWindow, observable: ObservableSpec, k: int, k_max: int) -> np.ndarray:
    """Small-hole limits of q-hat^(m)_k, m < k_max, for balls around fiber centres.

    A term is positive only when T^(m+1) sends the centre of fiber k - m - 1
    onto the centre of fiber k without touching the centres in between; it
    is then the smaller of the scaling ratio and the local density ratio
    phi_s(c_s) g^(m+1)(c_s) / (prod lambda_0 phi_k(c_k)).
    """
    path = closed.cocycle.path
    exponent = closed.cocycle.weight.exponent
    current = path.payload(k)
    target = observable.center_at(current)
    phi_k = _cell_value(closed.phi0[closed.row(k)], target)
    values = np.zeros(k_max)
    for m in range(k_max):
        s = k - m - 1
        x = observable.center_at(path.payload(s))
        start = x
        weight, lam = 1.0, 1.0
        landed = True
        for i in range(s, k):
            tmap = closed.cocycle.tmap(i)
            weight *= _slope_at(tmap, x) ** (-exponent)
            lam *= closed.lam0_at(i)
            x = float(tmap(x)) % 1.0
            if i + 1 < k and _circle_gap(x, observable.center_at(path.payload(i + 1))) <= CENTER_MATCH_TOL:
                landed = False
                break
        if not landed or _circle_gap(x, target) > CENTER_MATCH_TOL:
            continue
        local = _cell_value(closed.phi0[closed.row(s)], start) * weight / (lam * phi_k)
        values[m] = min(path.payload(s).t / current.t, local)
    return values


def chain_theta(*, closed: ThermoWindow, observable: ObservableSpec, k: int, k_max: int) -> float:
    return 1.0 - float(chain_qhat(closed=closed, observable=observable, k=k, k_max=k_max).sum())
