import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from apps.driving.types import FiberPayload
from apps.evt.constants import OBSERVABLE_FAMILIES
from apps.interval_maps.services import make_ball_hole
from apps.interval_maps.types import HoleSpec


class ThresholdError(Exception):
    """A threshold target exceeds the mass the observable can cut out."""

    def __init__(self, message: str, fiber: Optional[int] = None):
        super().__init__(message)
        self.fiber = fiber


def _drift_offset(radius: float, jitter: float) -> float:
    """Solution u of u - jitter * u^2 = radius on the branch through 0.

    Past the turning point of the parabola the offset keeps growing
    linearly, so holes stay monotone in the radius.
    """
    disc = 1.0 - 4.0 * jitter * radius
    return 2.0 * radius / (1.0 + math.sqrt(max(disc, 0.0)))


@dataclass(frozen=True)
class ObservableSpec:
    """Per-fiber observable h_omega peaking at a fiber-dependent centre.

    ``center`` and ``jitter`` are defaults; a fiber payload that carries
    observable parameters of the same names overrides them. Holes are the
    superlevel sets {h > z}, parametrized by a radius around the centre.
    """

    family: str = "distance"
    center: float = 0.5
    circle: bool = False
    jitter: float = 0.0

    def __post_init__(self):
        if self.family not in OBSERVABLE_FAMILIES:
            raise ValueError(f"Unknown observable family {self.family!r}, expected one of {OBSERVABLE_FAMILIES}")
        if not 0.0 <= self.center <= 1.0:
            raise ValueError(f"Observable centre {self.center} must lie in [0, 1]")

    def center_at(self, payload: FiberPayload) -> float:
        return payload.observable_param("center", self.center)

    def jitter_at(self, payload: FiberPayload) -> float:
        return payload.observable_param("jitter", self.jitter)

    def distance(self, payload: FiberPayload, x) -> np.ndarray:
        d = np.abs(np.asarray(x, dtype=float) - self.center_at(payload))
        if self.circle or self.family == "log-distance":
            d = np.minimum(d, 1.0 - d)
        return d

    def value(self, payload: FiberPayload, x) -> np.ndarray:
        """h_omega(x)."""
        if self.family == "drift-distance":
            u = np.asarray(x, dtype=float) - self.center_at(payload)
            return -np.abs(u - self.jitter_at(payload) * u * u)
        d = self.distance(payload, x)
        if self.family == "log-distance":
            with np.errstate(divide="ignore"):
                return -np.log(d)
        return -d

    def threshold(self, radius: float) -> float:
        """Level z whose superlevel set is the hole of the given radius."""
        if self.family == "log-distance":
            return -math.log(radius) if radius > 0 else math.inf
        return -radius

    def hole(self, payload: FiberPayload, radius: float, label=None) -> HoleSpec:
        if radius <= 0.0:
            return HoleSpec(label=label)
        c = self.center_at(payload)
        if self.family == "log-distance" or self.circle:
            return make_ball_hole(center=c, radius=radius, label=label)
        if self.family == "drift-distance":
            j = self.jitter_at(payload)
            a, b = c - _drift_offset(radius, -j), c + _drift_offset(radius, j)
        else:
            a, b = c - radius, c + radius
        a, b = max(a, 0.0), min(b, 1.0)
        if b <= a:
            return HoleSpec(label=label)
        return HoleSpec(intervals=((a, b),), label=label)


@dataclass(frozen=True, eq=False)
class ThresholdSchedule:
    """Thresholds z_{omega,N} for every fiber lo..hi and every N of the ladder.

    Arrays are indexed [ladder position, fiber - lo]. ``holes`` maps each N
    to one HoleSpec per path fiber (empty outside lo..hi), ready for
    ``with_holes``. ``measures`` are the realized mu_0(H) and
    ``xi = N * measures - t``.
    """

    observable: ObservableSpec
    ladder: tuple[int, ...]
    lo: int
    hi: int
    t: np.ndarray
    radii: np.ndarray
    thresholds: np.ndarray
    measures: np.ndarray
    xi: np.ndarray
    holes: dict
    bias: float = 0.0
    degenerate: tuple[tuple[int, int], ...] = ()

    @property
    def fibers(self) -> range:
        return range(self.lo, self.hi + 1)

    @property
    def W(self) -> float:
        return float(np.max(np.abs(self.xi))) if self.xi.size else 0.0

    def contains(self, k: int) -> bool:
        return self.lo <= k <= self.hi

    def column(self, k: int) -> int:
        if not self.contains(k):
            raise IndexError(f"Fiber {k} outside threshold schedule [{self.lo}, {self.hi}]")
        return k - self.lo

    def rung(self, N: int) -> int:
        return self.ladder.index(N)

    def t_at(self, k: int) -> float:
        return float(self.t[self.column(k)])

    def hole_measure(self, N: int, k: int) -> float:
        return float(self.measures[self.rung(N), self.column(k)])


@dataclass(frozen=True)
class QhatSeries:
    """q-hat^(m) for m = 0..k_max-1 at one fiber and one hole label."""

    fiber: int
    label: object
    hole_measure: float
    values: np.ndarray
    forward: Optional[np.ndarray] = None
    excluded: bool = False

    @property
    def cross_residual(self) -> float:
        if self.forward is None or self.excluded:
            return 0.0
        return float(np.max(np.abs(self.forward - self.values))) if self.values.size else 0.0

    @property
    def partial_sums(self) -> np.ndarray:
        return np.cumsum(self.values)

    @property
    def truncations(self) -> np.ndarray:
        """theta_n = 1 - sum_{m < n} q-hat^(m) for n = 1..k_max."""
        return 1.0 - self.partial_sums

    @property
    def unassigned(self) -> float:
        return float(1.0 - self.values.sum()) if self.values.size else 1.0


@dataclass(frozen=True, eq=False)
class ThetaReport:
    """q-hat table over the N ladder with truncations, extrapolated theta and closed forms.

    ``qhat`` and ``truncations`` have shape (ladder, fibers, k_max); per-fiber
    arrays are NaN where a fiber has no hole mass.
    """

    k_max: int
    ladder: tuple[int, ...]
    fibers: tuple[int, ...]
    t: np.ndarray
    qhat: np.ndarray
    truncations: np.ndarray
    hole_measures: np.ndarray
    theta: np.ndarray
    order: Optional[float]
    weighted_mass: np.ndarray
    cross_residual: float
    closed_form: Optional[np.ndarray] = None
    notes: tuple[str, ...] = ()

    @property
    def mean_theta(self) -> float:
        return float(np.nanmean(self.theta))

    @property
    def integral(self) -> float:
        """Fiber average of t * theta."""
        return float(np.nanmean(self.t * self.theta))

    @property
    def closed_form_mean(self) -> Optional[float]:
        if self.closed_form is None:
            return None
        return float(np.nanmean(self.closed_form))

    @property
    def deviation(self) -> Optional[float]:
        """Largest per-fiber gap to the closed form."""
        if self.closed_form is None:
            return None
        return float(np.nanmax(np.abs(self.theta - self.closed_form)))

    @property
    def in_range(self) -> bool:
        theta = self.theta[np.isfinite(self.theta)]
        return bool(np.all(theta >= -1e-6) and np.all(theta <= 1.0 + 1e-6))


@dataclass(frozen=True)
class GumbelRow:
    N: int
    nu_value: float
    mu_value: float
    lambda_ratio: float
    target: float

    @property
    def spread(self) -> float:
        """Largest disagreement among the three forms."""
        values = (self.nu_value, self.mu_value, self.lambda_ratio)
        return max(values) - min(values)


@dataclass(frozen=True)
class GumbelReport:
    fiber: int
    theta_integral: float
    rows: tuple[GumbelRow, ...]
    notes: tuple[str, ...] = ()

    @property
    def target(self) -> float:
        return math.exp(-self.theta_integral)

    def row(self, N: int) -> GumbelRow:
        for row in self.rows:
            if row.N == N:
                return row
        raise KeyError(f"No Gumbel row for N={N}")


@dataclass(frozen=True)
class SurvivalPoint:
    steps: int
    empirical: float
    operator: float
    sigma: float

    @property
    def z_score(self) -> float:
        if self.sigma == 0.0:
            return 0.0 if self.empirical == self.operator else math.inf
        return abs(self.empirical - self.operator) / self.sigma


@dataclass(frozen=True, eq=False)
class HittingReport:
    """Monte Carlo first hitting times scaled by 1/N, against the exponential law."""

    fiber: int
    N: int
    samples: int
    horizon: int
    rate: float
    times: np.ndarray
    censored: int
    ks_distance: float
    survival: tuple[SurvivalPoint, ...] = field(default_factory=tuple)

    @property
    def max_z_score(self) -> float:
        return max((point.z_score for point in self.survival), default=0.0)


@dataclass(frozen=True)
class HuslerReport:
    N: int
    fibers: tuple[int, int]
    average: float
    t_mean: float
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.deviation) <= self.tolerance
