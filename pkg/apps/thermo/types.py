from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from apps.transfer_op.types import GridDensity, OperatorCocycle


class ConvergenceError(Exception):
    """Raised when two sweeps of different depth disagree beyond the tolerance."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class DegenerateHoleError(Exception):
    """Raised when the hole swallows all of the mass on a fiber."""


@dataclass(frozen=True, eq=False)
class ThermoWindow:
    """Leading triple of a (closed or open) cocycle on fibers lo..hi.

    Row ``k - lo`` of every array belongs to fiber k. The function rows
    (phi, nu, phi0, nu0) run one fiber past ``hi`` so that multipliers and
    pairings at k + 1 are always available. ``nu`` is normalized by nu(1) = 1
    for the closed cocycle and by nu(phi) = 1 for an open one; ``phi`` always
    satisfies nu0(phi) = 1.
    """

    cocycle: OperatorCocycle
    label: Any
    depth: int
    lo: int
    hi: int
    lam: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    lam0: np.ndarray
    phi0: np.ndarray
    nu0: np.ndarray
    residual: np.ndarray
    certification: float
    hole_measure: np.ndarray

    @property
    def fibers(self) -> range:
        return range(self.lo, self.hi + 1)

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def is_open(self) -> bool:
        return self.label is not None

    def contains(self, k: int) -> bool:
        return self.lo <= k <= self.hi

    def row(self, k: int) -> int:
        """Row of fiber k in the function arrays (lo..hi+1)."""
        if not self.lo <= k <= self.hi + 1:
            raise IndexError(f"Fiber {k} outside thermo window [{self.lo}, {self.hi + 1}]")
        return k - self.lo

    def lam_at(self, k: int) -> float:
        if not self.contains(k):
            raise IndexError(f"No multiplier for fiber {k} in thermo window [{self.lo}, {self.hi}]")
        return float(self.lam[k - self.lo])

    def lam0_at(self, k: int) -> float:
        if not self.contains(k):
            raise IndexError(f"No multiplier for fiber {k} in thermo window [{self.lo}, {self.hi}]")
        return float(self.lam0[k - self.lo])

    def mask(self, k: int) -> np.ndarray:
        return self.cocycle.mask(k, self.label)

    def nu_of_one(self, k: int) -> float:
        return float(np.mean(self.nu[self.row(k)]))

    def zeta(self, k: int) -> np.ndarray:
        """Conformal probability nu_eps / nu_eps(1)."""
        return self.nu[self.row(k)] / self.nu_of_one(k)

    def h(self, k: int) -> np.ndarray:
        """Density normalized against zeta: phi_eps * nu_eps(1)."""
        return self.phi[self.row(k)] * self.nu_of_one(k)

    def rho(self, k: int) -> float:
        """Multiplier of zeta: lambda_eps * nu_eps,k(1) / nu_eps,k+1(1)."""
        return self.lam_at(k) * self.nu_of_one(k) / self.nu_of_one(k + 1)


@dataclass(frozen=True, eq=False)
class ThermoFiberData:
    fiber: int
    label: Any
    lam: float
    phi: GridDensity
    nu: np.ndarray
    h: GridDensity
    depth: int
    equivariance_residual: float
    phi_bounds: tuple[float, float]


@dataclass(frozen=True)
class SurvivorResult:
    fiber: int
    steps: int
    which: str
    value: float
    prediction: float
    multiplier_ratio: float


@dataclass(frozen=True)
class EscapeRateRow:
    label: Any
    hole_measure: float
    rate_fit: float
    rate_birkhoff: float
    ratio: float
    agreement: float


@dataclass(frozen=True)
class EscapeRateReport:
    rows: tuple[EscapeRateRow, ...]
    extrapolated_ratio: float
    order_estimate: Optional[float]
    target: Optional[float]
    fibers: tuple[int, int]
    notes: tuple[str, ...] = ()

    @property
    def deviation(self) -> Optional[float]:
        if self.target is None:
            return None
        return abs(self.extrapolated_ratio - self.target)


@dataclass(frozen=True)
class ConditionalInvariance:
    fiber: int
    density: GridDensity
    rho: float
    residual: float
    bounds: tuple[float, float]


@dataclass(frozen=True)
class DecayReport:
    fiber: int
    label: Any
    kappa: float
    constant: float
    norms: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class CorrelationReport:
    fiber: int
    correlations: np.ndarray = field(repr=False)
    kappa: float = 0.0
    constant: float = 0.0
    passed: bool = True


@dataclass(frozen=True)
class PerturbationIdentity:
    """Delta = lambda_0 mu_0(H) and eta <= lambda_0 nu_0(H) at one fiber of an open window."""

    fiber: int
    label: Any
    delta: float
    predicted_delta: float
    eta: float
    eta_bound: float
    conformality_residual: float

    @property
    def delta_residual(self) -> float:
        return abs(self.delta - self.predicted_delta)


@dataclass(frozen=True)
class MonotonicityReport:
    fiber_range: tuple[int, int]
    labels: tuple[Any, ...]
    worst_violation: float
    passed: bool
