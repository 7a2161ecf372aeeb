from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Optional, Sequence

import numpy as np

from apps.interval_maps.constants import ENDPOINT_TOLERANCE


@dataclass(frozen=True)
class Branch:
    """Affine branch x -> slope * x + intercept on [left, right)."""

    left: float
    right: float
    slope: float
    intercept: float

    def __post_init__(self):
        if not self.right > self.left:
            raise ValueError(f"Branch domain [{self.left}, {self.right}) is empty")
        if self.slope == 0:
            raise ValueError("Branch slope must be nonzero")

    def __call__(self, x):
        return self.slope * x + self.intercept

    def inverse(self, y):
        return (y - self.intercept) / self.slope

    @property
    def image(self) -> tuple[float, float]:
        a, b = self(self.left), self(self.right)
        return (min(a, b), max(a, b))

    @property
    def is_full(self) -> bool:
        lo, hi = self.image
        return lo <= ENDPOINT_TOLERANCE and hi >= 1.0 - ENDPOINT_TOLERANCE


@dataclass(frozen=True)
class PiecewiseAffineMap:
    """Piecewise-affine interval map. Domains partition [0, 1); the last branch is closed at 1."""

    family: str
    params: tuple[tuple[str, float], ...]
    branches: tuple[Branch, ...]

    def __post_init__(self):
        if not self.branches:
            raise ValueError("A map needs at least one branch")
        if abs(self.branches[0].left) > ENDPOINT_TOLERANCE or abs(self.branches[-1].right - 1.0) > ENDPOINT_TOLERANCE:
            raise ValueError("Branch domains must start at 0 and end at 1")
        for prev, nxt in zip(self.branches, self.branches[1:]):
            if abs(prev.right - nxt.left) > ENDPOINT_TOLERANCE:
                raise ValueError(f"Branch domains leave a gap or overlap at {prev.right} / {nxt.left}")
        for branch in self.branches:
            lo, hi = branch.image
            if lo < -ENDPOINT_TOLERANCE or hi > 1.0 + ENDPOINT_TOLERANCE:
                raise ValueError(f"Branch image [{lo}, {hi}] leaves [0, 1]")

    def __len__(self) -> int:
        return len(self.branches)

    @cached_property
    def lefts(self) -> np.ndarray:
        return np.array([b.left for b in self.branches])

    @cached_property
    def slopes(self) -> np.ndarray:
        return np.array([b.slope for b in self.branches])

    @cached_property
    def intercepts(self) -> np.ndarray:
        return np.array([b.intercept for b in self.branches])

    def branch_index(self, x):
        index = np.searchsorted(self.lefts, x, side="right") - 1
        return np.clip(index, 0, len(self.branches) - 1)

    def __call__(self, x):
        index = self.branch_index(x)
        y = self.slopes[index] * x + self.intercepts[index]
        return np.clip(y, 0.0, 1.0)

    def one_sided_values(self, x: float) -> tuple[float, float]:
        """(left limit, value) at x. They differ only at a discontinuous branch boundary."""
        index = int(self.branch_index(x))
        value = float(self.branches[index](x))
        if index > 0 and abs(x - self.branches[index].left) <= ENDPOINT_TOLERANCE:
            return float(self.branches[index - 1](x)), value
        return value, value

    @property
    def max_slope(self) -> float:
        return float(np.max(np.abs(self.slopes)))

    @property
    def is_surjective(self) -> bool:
        return covers_unit_interval([b.image for b in self.branches])

    @property
    def max_preimage_count(self) -> int:
        """D(T): the largest number of closed branch images over a common point."""
        images = [b.image for b in self.branches]
        points = sorted({p for image in images for p in image} | {0.0, 1.0})
        samples = points + [(a + b) / 2 for a, b in zip(points, points[1:])]
        return max(
            sum(1 for lo, hi in images if lo - ENDPOINT_TOLERANCE <= y <= hi + ENDPOINT_TOLERANCE)
            for y in samples
        )


@dataclass(frozen=True)
class WeightFunction:
    """Geometric weight g = |T'|^(-r), constant on every branch."""

    exponent: float = 1.0

    def __post_init__(self):
        if self.exponent < 0:
            raise ValueError(f"Weight exponent must be nonnegative, got {self.exponent}")

    def values(self, tmap: PiecewiseAffineMap) -> np.ndarray:
        return np.abs(tmap.slopes) ** (-self.exponent)

    def sup(self, tmap: PiecewiseAffineMap) -> float:
        return float(np.max(self.values(tmap)))

    def inf(self, tmap: PiecewiseAffineMap) -> float:
        return float(np.min(self.values(tmap)))


@dataclass(frozen=True)
class HoleSpec:
    """Finite union of disjoint closed intervals in [0, 1], tagged with its ladder label."""

    intervals: tuple[tuple[float, float], ...] = ()
    label: Any = None

    def __post_init__(self):
        ordered = tuple(sorted((float(a), float(b)) for a, b in self.intervals))
        for a, b in ordered:
            if not 0.0 <= a < b <= 1.0:
                raise ValueError(f"Hole component [{a}, {b}] must have positive length inside [0, 1]")
        for (_, b), (c, _) in zip(ordered, ordered[1:]):
            if c <= b:
                raise ValueError(f"Hole components overlap at {c} <= {b}")
        object.__setattr__(self, "intervals", ordered)

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    @property
    def components(self) -> int:
        return len(self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.zeros(x.shape, dtype=bool)
        for a, b in self.intervals:
            inside |= (x >= a) & (x <= b)
        return inside

    def is_subset_of(self, other: "HoleSpec") -> bool:
        return all(
            any(c - ENDPOINT_TOLERANCE <= a and b <= d + ENDPOINT_TOLERANCE for c, d in other.intervals)
            for a, b in self.intervals
        )

    def complement(self) -> list[tuple[float, float]]:
        """Closures of the surviving pieces [0, 1] \\ H."""
        pieces, start = [], 0.0
        for a, b in self.intervals:
            if a > start:
                pieces.append((start, a))
            start = b
        if start < 1.0:
            pieces.append((start, 1.0))
        return pieces


@dataclass(frozen=True)
class ConditionResult:
    name: str
    passed: bool
    witness: dict = field(default_factory=dict)
    fiber: Optional[int] = None
    detail: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    conditions: tuple[ConditionResult, ...]
    n_prime: Optional[int] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> ConditionResult:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[ConditionResult]:
        return [c for c in self.conditions if not c.passed]


def covers_unit_interval(intervals: Sequence[tuple[float, float]]) -> bool:
    """True when the union of closed intervals is [0, 1] up to endpoint tolerance."""
    reach = 0.0
    for lo, hi in sorted(intervals):
        if lo > reach + ENDPOINT_TOLERANCE:
            return False
        reach = max(reach, hi)
    return reach >= 1.0 - ENDPOINT_TOLERANCE
