from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True, eq=False)
class MatrixCocycle:
    """Positive d x d matrices on fibers -K..N with a perturbed copy per ladder value.

    ``closed[k + K]`` is L_{k,0}; ``perturbed[eps][k + K]`` is L_{k,eps}. For
    mask rules ``masks[eps][k + K]`` holds the diagonal with
    L_{k,eps} = L_{k,0} diag(mask).
    """

    d: int
    K: int
    N: int
    seed: int
    rule: str
    closed: np.ndarray
    perturbed: dict = field(default_factory=dict)
    masks: dict = field(default_factory=dict)

    @property
    def first(self) -> int:
        return -self.K

    @property
    def last(self) -> int:
        return self.N

    @property
    def ladder(self) -> list[float]:
        return sorted(self.perturbed, reverse=True)

    def contains(self, k: int) -> bool:
        return -self.K <= k <= self.N

    def matrix(self, k: int, eps: Optional[float] = None) -> np.ndarray:
        if not self.contains(k):
            raise IndexError(f"Fiber {k} outside matrix window [{self.first}, {self.last}]")
        if eps is None:
            return self.closed[k + self.K]
        return self.perturbed[eps][k + self.K]

    def norm_bound(self) -> float:
        """C1: the largest max-norm of any closed or perturbed matrix."""
        stacks = [self.closed] + list(self.perturbed.values())
        return float(max(np.abs(stack).sum(axis=2).max() for stack in stacks))


@dataclass(frozen=True, eq=False)
class MatrixWindow:
    """Leading triple on fibers lo..hi; vector rows run to hi + 1."""

    eps: Optional[float]
    lo: int
    hi: int
    lam: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    certification: float

    def row(self, k: int) -> int:
        if not self.lo <= k <= self.hi + 1:
            raise IndexError(f"Fiber {k} outside matrix window [{self.lo}, {self.hi + 1}]")
        return k - self.lo

    def lam_at(self, k: int) -> float:
        if not self.lo <= k <= self.hi:
            raise IndexError(f"No multiplier for fiber {k} in matrix window [{self.lo}, {self.hi}]")
        return float(self.lam[k - self.lo])

    def phi_at(self, k: int) -> np.ndarray:
        return self.phi[self.row(k)]

    def nu_at(self, k: int) -> np.ndarray:
        return self.nu[self.row(k)]


@dataclass(frozen=True, eq=False)
class LeadingTriple:
    fiber: int
    eps: Optional[float]
    lam: float
    phi: np.ndarray
    nu: np.ndarray
    q_kappa: float
    q_constant: float
    equivariance_residual: float
    q_phi_residual: float
    nu_q_residual: float
    conformality_residual: float


@dataclass(frozen=True)
class PropertyCheck:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass(frozen=True, eq=False)
class LedgerEntry:
    eps: float
    lam0: float
    lam_eps: float
    delta: float
    eta: float
    q: np.ndarray
    theta_truncations: np.ndarray
    ratio: float
    identity_residual: float
    expansion_residual: float
    q_tail: float
    nu_eps_phi0: float
    phi_sup: float


@dataclass(frozen=True, eq=False)
class PerturbationLedger:
    fiber: int
    k_max: int
    entries: tuple[LedgerEntry, ...]
    q0: np.ndarray
    q_slope: np.ndarray
    theta0: float
    checks: tuple[PropertyCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def check(self, name: str) -> PropertyCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def entry(self, eps: float) -> LedgerEntry:
        for entry in self.entries:
            if entry.eps == eps:
                return entry
        raise KeyError(eps)


@dataclass(frozen=True)
class FirstOrderRow:
    eps: float
    ratio: float
    residual: float


@dataclass(frozen=True)
class FirstOrderTable:
    fiber: int
    rows: tuple[FirstOrderRow, ...]
    theta: float
    extrapolated: float
    order: Optional[float]
    passed: bool
    failures: tuple[str, ...] = ()
