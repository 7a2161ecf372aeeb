import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from apps.interval_maps.types import PiecewiseAffineMap
from apps.limits.constants import OBSERVABLE_KINDS, RADIUS_KINDS


class DegenerateVarianceError(Exception):
    """The asymptotic variance vanishes, so the observable is a coboundary."""


class SummableScheduleError(Exception):
    """The target measures are summable, so the expected entry count stays bounded."""


@dataclass(frozen=True)
class BirkhoffObservable:
    """A real observable on [0, 1], the same on every fiber except for coboundaries.

    - indicator: 1 on ``interval``
    - cosine: cos(2 pi frequency x)
    - step: ``values`` on equal blocks of [0, 1]
    - coboundary: psi - psi o T_omega with psi the step function ``values``
    """

    kind: str
    interval: tuple[float, float] = (0.0, 0.5)
    frequency: float = 1.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in OBSERVABLE_KINDS:
            raise ValueError(f"Unknown observable kind {self.kind!r}, expected one of {OBSERVABLE_KINDS}")
        if self.kind in ("step", "coboundary") and not self.values:
            raise ValueError(f"A {self.kind} observable needs block values")
        a, b = self.interval
        if not 0.0 <= a < b <= 1.0:
            raise ValueError(f"Indicator interval [{a}, {b}] must lie inside [0, 1]")

    def _blocks(self, x) -> np.ndarray:
        values = np.asarray(self.values, dtype=float)
        m = values.shape[0]
        return values[np.clip(np.floor(np.asarray(x, dtype=float) * m).astype(np.int64), 0, m - 1)]

    def _integral(self, x: np.ndarray) -> np.ndarray:
        """Antiderivative from 0 of the fiber-independent part."""
        if self.kind == "indicator":
            a, b = self.interval
            return np.clip(x, a, b) - a
        if self.kind == "cosine":
            if self.frequency == 0.0:
                return x
            w = 2.0 * math.pi * self.frequency
            return np.sin(w * x) / w
        values = np.asarray(self.values, dtype=float)
        edges = np.linspace(0.0, 1.0, values.shape[0] + 1)
        return np.interp(x, edges, np.concatenate(([0.0], np.cumsum(values) / values.shape[0])))

    def at(self, x, tmap: PiecewiseAffineMap) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "indicator":
            a, b = self.interval
            return ((x >= a) & (x <= b)).astype(float)
        if self.kind == "cosine":
            return np.cos(2.0 * math.pi * self.frequency * x)
        if self.kind == "step":
            return self._blocks(x)
        return self._blocks(x) - self._blocks(tmap(x))

    def cells(self, n: int, tmap: PiecewiseAffineMap) -> np.ndarray:
        """Cell averages on n cells.

        Exact except for the psi o T part of a coboundary, which is read at
        cell midpoints and is exact when psi is constant on every T-image of a cell.
        """
        edges = np.arange(n + 1) / n
        averages = n * np.diff(self._integral(edges))
        if self.kind == "coboundary":
            averages = averages - self._blocks(tmap((np.arange(n) + 0.5) / n))
        return averages

    @property
    def sup(self) -> float:
        if self.kind in ("indicator", "cosine"):
            return 1.0
        bound = float(np.max(np.abs(self.values)))
        return 2.0 * bound if self.kind == "coboundary" else bound


@dataclass(frozen=True, eq=False)
class BirkhoffExperiment:
    """Birkhoff sums S_n v of the fiberwise centred observable along mu_{k,0}-distributed orbits."""

    observable: BirkhoffObservable
    fiber: int
    n: int
    samples: int
    sums: np.ndarray
    means: np.ndarray
    centering_residual: float
    sigma2: Optional[float] = None

    @property
    def scaled(self) -> np.ndarray:
        return self.sums / math.sqrt(self.n)

    @property
    def direct_variance(self) -> float:
        """Sigma^2_n / n from the sample."""
        return float(np.var(self.sums) / self.n)


@dataclass(frozen=True, eq=False)
class VarianceReport:
    fibers: tuple[int, int]
    lags: int
    sigma2: float
    second_moment: float
    correlations: np.ndarray
    per_fiber: np.ndarray
    kappa: float
    constant: float
    tail_bound: float


@dataclass(frozen=True)
class CltReport:
    fiber: int
    n: int
    samples: int
    sigma2: float
    ks_distance: float
    p_value: float
    passed: bool
    direct_variance: float


@dataclass(frozen=True)
class AzumaConstants:
    """U bounds phi_0 and 1/phi_0, (D, kappa) the decay of the closed cocycle, C2 = sup |v|."""

    U: float
    D: float
    kappa: float
    C1: float
    C2: float

    def n0(self, deviation: float) -> int:
        return int(math.ceil(2.0 * self.C1 / deviation))

    def bound(self, deviation: float, n: int) -> float:
        return min(1.0, 2.0 * math.exp(-deviation ** 2 * n / (8.0 * (self.C2 + 2.0 * self.C1) ** 2)))


@dataclass(frozen=True)
class AzumaRow:
    deviation: float
    n: int
    n0: int
    empirical: float
    bound: float

    @property
    def applies(self) -> bool:
        return self.n > self.n0

    @property
    def violated(self) -> bool:
        return self.applies and self.empirical > self.bound


@dataclass(frozen=True)
class AzumaReport:
    fiber: int
    constants: AzumaConstants
    rows: tuple[AzumaRow, ...]
    martingale_residual: float
    g_norm_ratio: float

    @property
    def violations(self) -> list[AzumaRow]:
        return [row for row in self.rows if row.violated]


@dataclass(frozen=True)
class RadiusSchedule:
    """Radii xi_j of the shrinking balls: scale, scale / j or scale / j^exponent."""

    kind: str
    scale: float
    exponent: float = 1.0

    def __post_init__(self):
        if self.kind not in RADIUS_KINDS:
            raise ValueError(f"Unknown radius schedule {self.kind!r}, expected one of {RADIUS_KINDS}")
        if self.scale <= 0.0:
            raise ValueError(f"Radius scale must be positive, got {self.scale}")

    @property
    def is_summable(self) -> bool:
        return self.kind == "power" and self.exponent > 1.0

    def radius(self, j: int) -> float:
        if self.kind == "constant":
            r = self.scale
        elif self.kind == "harmonic":
            r = self.scale / j
        else:
            r = self.scale / j ** self.exponent
        return min(r, 0.5)


@dataclass(frozen=True, eq=False)
class BorelCantelliReport:
    fiber: int
    center: float
    schedule: RadiusSchedule
    n: int
    samples: int
    expected: float
    counts: np.ndarray
    checkpoints: tuple[tuple[int, float, float], ...] = field(default_factory=tuple)
    error_bound: float = float("nan")

    @property
    def ratio(self) -> float:
        return float(np.mean(self.counts) / self.expected)

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.counts) / self.expected)

    @property
    def deviation(self) -> float:
        return abs(self.ratio - 1.0)
