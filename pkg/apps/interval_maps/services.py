import logging
import math
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np

from apps.driving.types import FiberPath, FiberPayload
from apps.interval_maps.constants import ENDPOINT_TOLERANCE, MAP_FAMILIES
from apps.interval_maps.types import Branch, HoleSpec, PiecewiseAffineMap


logger = logging.getLogger(__name__)


def make_example1_map(*, s: float) -> PiecewiseAffineMap:
    """Three full branches; the central one has slope s through the fixed point 1/2.

    Parameters
    - s: central slope, s > 1. The outer branches have slope -2/(1 - 1/s), so the
      map preserves Lebesgue measure.
    """
    if not s > 1.0:
        raise ValueError(f"Central slope must exceed 1, got s={s}")
    c = (1.0 - 1.0 / s) / 2.0
    branches = (
        Branch(left=0.0, right=c, slope=-1.0 / c, intercept=1.0),
        Branch(left=c, right=1.0 - c, slope=s, intercept=-(s - 1.0) / 2.0),
        Branch(left=1.0 - c, right=1.0, slope=-1.0 / c, intercept=1.0 / c),
    )
    return PiecewiseAffineMap(family="example1", params=(("s", float(s)),), branches=branches)


def make_beta_map(*, beta: float, r_shift: float = 0.0) -> PiecewiseAffineMap:
    """T(x) = beta * x + r_shift (mod 1), one branch per crossing of an integer.

    Parameters
    - beta: slope, beta >= 2
    - r_shift: additive shift in [0, 1); the mod-1 wrap is folded into branch intercepts
    """
    if beta < 2.0:
        raise ValueError(f"Beta-map slope must be at least 2, got beta={beta}")
    if not 0.0 <= r_shift < 1.0:
        raise ValueError(f"Shift must lie in [0, 1), got r={r_shift}")

    branches = []
    for m in range(int(math.ceil(beta + r_shift))):
        left = max((m - r_shift) / beta, 0.0)
        right = min((m + 1 - r_shift) / beta, 1.0)
        if right - left > ENDPOINT_TOLERANCE:
            branches.append(Branch(left=left, right=right, slope=beta, intercept=r_shift - m))
    return PiecewiseAffineMap(
        family="beta",
        params=(("beta", float(beta)), ("r", float(r_shift))),
        branches=tuple(branches),
    )


@lru_cache(maxsize=512)
def _cached_map(family: str, params: tuple[tuple[str, float], ...]) -> PiecewiseAffineMap:
    values = dict(params)
    if family == "example1":
        return make_example1_map(s=values["s"])
    if family == "beta":
        return make_beta_map(beta=values["beta"], r_shift=values.get("r", 0.0))
    raise ValueError(f"Unknown map family '{family}', expected one of {', '.join(MAP_FAMILIES)}")


def map_for_payload(payload: FiberPayload) -> PiecewiseAffineMap:
    """The map acting on one fiber. Equal payloads share one map object."""
    return _cached_map(payload.map_family, tuple(sorted(payload.map_params)))


def maps_for_path(path: FiberPath) -> list[PiecewiseAffineMap]:
    return [map_for_payload(payload) for payload in path.payloads]


def preimages(*, tmap: PiecewiseAffineMap, x: float) -> list[tuple[float, int]]:
    """All y with T(y) = x, one per branch whose closed image contains x."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"Point must lie in [0, 1], got {x}")
    found = []
    for index, branch in enumerate(tmap.branches):
        y = branch.inverse(x)
        if branch.left - ENDPOINT_TOLERANCE <= y <= branch.right + ENDPOINT_TOLERANCE:
            found.append((min(max(y, branch.left), branch.right), index))
    return found


def preimage_measure(*, tmap: PiecewiseAffineMap, a: float, b: float) -> float:
    """Leb(T^{-1}[a, b]) summed branch by branch."""
    total = 0.0
    for branch in tmap.branches:
        lo, hi = branch.image
        overlap = min(hi, b) - max(lo, a)
        if overlap > 0:
            total += overlap / abs(branch.slope)
    return total


def image_of_intervals(
    *, tmap: PiecewiseAffineMap, intervals: Iterable[tuple[float, float]]
) -> list[tuple[float, float]]:
    """T(union of closed intervals) as a merged list of closed intervals."""
    images = []
    for a, b in intervals:
        for branch in tmap.branches:
            lo, hi = max(a, branch.left), min(b, branch.right)
            if hi - lo > ENDPOINT_TOLERANCE:
                u, v = branch(lo), branch(hi)
                images.append((min(u, v), max(u, v)))
    return merge_intervals(images)


def merge_intervals(intervals: Iterable[tuple[float, float]]) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1] + ENDPOINT_TOLERANCE:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def survivor_pieces(
    *,
    maps: Sequence[PiecewiseAffineMap],
    holes: Optional[Sequence[HoleSpec]] = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Monotonicity pieces of T^n restricted to the n-step survivor set.

    Returns arrays (left, right, slope, intercept): on [left_i, right_i] the
    composite T^n is the affine map slope_i * x + intercept_i and the orbit
    avoided holes[0..n-1]. With ``holes`` omitted the closed partition is returned.
    """
    left, right = np.array([0.0]), np.array([1.0])
    slope, intercept = np.array([1.0]), np.array([0.0])

    for j, tmap in enumerate(maps):
        keep = holes[j].complement() if holes is not None else [(0.0, 1.0)]
        ylo = np.where(slope > 0, slope * left + intercept, slope * right + intercept)
        yhi = np.where(slope > 0, slope * right + intercept, slope * left + intercept)

        parts = ([], [], [], [])
        for branch in tmap.branches:
            for c, d in keep:
                u = np.maximum(ylo, max(branch.left, c))
                v = np.minimum(yhi, min(branch.right, d))
                ok = v - u > ENDPOINT_TOLERANCE
                if not np.any(ok):
                    continue
                a, b = slope[ok], intercept[ok]
                x1, x2 = (u[ok] - b) / a, (v[ok] - b) / a
                parts[0].append(np.minimum(x1, x2))
                parts[1].append(np.maximum(x1, x2))
                parts[2].append(branch.slope * a)
                parts[3].append(branch.slope * b + branch.intercept)

        if not parts[0]:
            empty = np.empty(0)
            return empty, empty, empty, empty
        left, right, slope, intercept = (np.concatenate(p) for p in parts)

    return left, right, slope, intercept


def iterate_transfer_of_one_inf(
    *,
    maps: Sequence[PiecewiseAffineMap],
    holes: Optional[Sequence[HoleSpec]],
    exponent: float,
) -> float:
    """Exact essential infimum of L^n_eps 1 for geometric weights.

    L^n_eps 1(x) sums |slope_i|^(-r) over the survivor pieces whose image holds x,
    a step function whose jumps sit at piece-image endpoints.
    """
    left, right, slope, intercept = survivor_pieces(maps=maps, holes=holes)
    if len(left) == 0:
        return 0.0
    u, v = slope * left + intercept, slope * right + intercept
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    weight = np.abs(slope) ** (-exponent)

    points = np.unique(np.concatenate([lo, hi, [0.0, 1.0]]).clip(0.0, 1.0))
    mids = (points[:-1] + points[1:]) / 2
    mids = mids[np.diff(points) > ENDPOINT_TOLERANCE]

    by_lo, by_hi = np.argsort(lo), np.argsort(hi)
    started = np.concatenate([[0.0], np.cumsum(weight[by_lo])])[np.searchsorted(lo[by_lo], mids, side="left")]
    finished = np.concatenate([[0.0], np.cumsum(weight[by_hi])])[np.searchsorted(hi[by_hi], mids, side="left")]
    return float(np.min(started - finished))


def covering_time(
    *,
    maps: Sequence[PiecewiseAffineMap],
    interval: tuple[float, float],
) -> Optional[int]:
    """Smallest k with T^k(interval) = [0, 1] along ``maps``, or None if the maps run out."""
    current = [interval]
    for k, tmap in enumerate(maps, start=1):
        current = image_of_intervals(tmap=tmap, intervals=current)
        if len(current) == 1 and current[0][0] <= ENDPOINT_TOLERANCE and current[0][1] >= 1.0 - ENDPOINT_TOLERANCE:
            return k
    return None


def make_centered_hole(*, center: float, length: float, label=None) -> HoleSpec:
    """[center - length/2, center + length/2]; must sit inside [0, 1]."""
    if length <= 0:
        return HoleSpec(label=label)
    a, b = center - length / 2.0, center + length / 2.0
    if a < -ENDPOINT_TOLERANCE or b > 1.0 + ENDPOINT_TOLERANCE:
        raise ValueError(f"Centered hole [{a}, {b}] leaves [0, 1]")
    return HoleSpec(intervals=((max(a, 0.0), min(b, 1.0)),), label=label)


def make_ball_hole(*, center: float, radius: float, label=None) -> HoleSpec:
    """Closed ball of the circle metric; wraps into two components across 0."""
    if radius <= 0:
        return HoleSpec(label=label)
    if radius >= 0.5:
        return HoleSpec(intervals=((0.0, 1.0),), label=label)
    a, b = center - radius, center + radius
    if a < 0:
        intervals = ((0.0, b), (1.0 + a, 1.0))
    elif b > 1:
        intervals = ((0.0, b - 1.0), (a, 1.0))
    else:
        intervals = ((a, b),)
    intervals = tuple((lo, hi) for lo, hi in intervals if hi - lo > 0)
    return HoleSpec(intervals=intervals, label=label)


def make_left_hole(*, length: float, label=None) -> HoleSpec:
    """[0, length], a hole at the fixed point 0 of a beta map."""
    if length <= 0:
        return HoleSpec(label=label)
    return HoleSpec(intervals=((0.0, min(length, 1.0)),), label=label)


def make_union_hole(*, intervals: Sequence[tuple[float, float]], label=None) -> HoleSpec:
    return HoleSpec(intervals=tuple(merge_intervals(intervals)), label=label)


def nesting_violation(ladder: Sequence[Sequence[HoleSpec]]) -> Optional[tuple[int, int]]:
    """First (rung, position) where rung j+1 is not inside rung j, or None."""
    for j, (outer, inner) in enumerate(zip(ladder, ladder[1:])):
        for position, (big, small) in enumerate(zip(outer, inner)):
            if not small.is_subset_of(big):
                return j + 1, position
    return None


def make_hole_ladder(rungs: Sequence[Sequence[HoleSpec]]) -> list[list[HoleSpec]]:
    """Validate an eps-ladder ordered from the largest holes to the smallest."""
    ladder = [list(rung) for rung in rungs]
    if len({len(rung) for rung in ladder}) > 1:
        raise ValueError("Every ladder rung must carry one hole per fiber")
    violation = nesting_violation(ladder)
    if violation is not None:
        rung, position = violation
        raise ValueError(f"Hole ladder is not nested: rung {rung} leaves rung {rung - 1} at window position {position}")
    logger.debug(f"Built hole ladder with {len(ladder)} rungs over {len(ladder[0]) if ladder else 0} fibers")
    return ladder
