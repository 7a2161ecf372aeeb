from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy import sparse

from apps.driving.types import FiberPath
from apps.interval_maps.types import PiecewiseAffineMap, WeightFunction


class DimensionMismatchError(Exception):
    """Raised when a mask, density or matrix disagree on the number of cells."""


class WindowError(Exception):
    """Raised when a cocycle computation needs fibers outside the sampled window."""


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant function on the uniform n-cell partition of [0, 1] (cell averages)."""

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def integral(self) -> float:
        return float(np.mean(self.values))

    @classmethod
    def constant(cls, n: int, value: float = 1.0) -> "GridDensity":
        return cls(values=np.full(n, float(value)))


@dataclass(frozen=True, eq=False)
class HoleMask:
    """Fraction of each cell lying outside the hole."""

    values: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def hole_measure(self) -> float:
        return float(np.sum(1.0 - self.values) / self.n)

    @classmethod
    def closed(cls, n: int) -> "HoleMask":
        return cls(values=np.ones(n))


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Ulam matrix of L_eps = L_0(mask * f) acting on cell averages.

    ``matrix`` is the closed operator; the open one is ``matrix @ diag(mask)``,
    applied without forming the product.
    """

    matrix: sparse.csr_matrix
    exact: bool
    mask: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_open(self) -> bool:
        return self.mask is not None

    def apply(self, f: np.ndarray) -> np.ndarray:
        """M (mask * f); ``f`` may be a vector or a column block."""
        if self.mask is not None:
            f = (self.mask * f.T).T
        return self.matrix @ f

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        """The dual action: (v, M f) = (adjoint(v), f) under the cell pairing."""
        out = self.matrix.T @ v
        if self.mask is not None:
            out = (self.mask * out.T).T
        return out

    def as_csr(self) -> sparse.csr_matrix:
        if self.mask is None:
            return self.matrix
        return (self.matrix @ sparse.diags(self.mask)).tocsr()

    def toarray(self) -> np.ndarray:
        return self.as_csr().toarray()


@dataclass(frozen=True, eq=False)
class OperatorCocycle:
    """Closed transfer matrices along a fiber path plus masks for each hole label.

    Window fiber k sits at array position k + path.K in ``maps``, ``closed`` and
    in every tuple of ``masks``.
    """

    path: FiberPath
    weight: WeightFunction
    n: int
    maps: tuple[PiecewiseAffineMap, ...]
    closed: tuple[TransferMatrix, ...]
    masks: dict = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return all(m.exact for m in self.closed)

    @property
    def labels(self) -> list[Any]:
        return list(self.masks)

    def _position(self, k: int) -> int:
        if not self.path.contains(k):
            raise WindowError(f"Fiber {k} outside window [{self.path.first}, {self.path.last}]")
        return self.path.position(k)

    def tmap(self, k: int) -> PiecewiseAffineMap:
        return self.maps[self._position(k)]

    def mask(self, k: int, label: Any = None) -> np.ndarray:
        position = self._position(k)
        if label is None:
            return np.ones(self.n)
        return self.masks[label][position].values

    def hole_measure(self, k: int, label: Any = None) -> float:
        if label is None:
            return 0.0
        return self.masks[label][self._position(k)].hole_measure

    def operator(self, k: int, label: Any = None) -> TransferMatrix:
        closed = self.closed[self._position(k)]
        if label is None:
            return closed
        return TransferMatrix(matrix=closed.matrix, exact=closed.exact, mask=self.mask(k, label))

    def apply(self, k: int, f: np.ndarray, label: Any = None) -> np.ndarray:
        return self.operator(k, label).apply(f)

    def adjoint(self, k: int, v: np.ndarray, label: Any = None) -> np.ndarray:
        return self.operator(k, label).adjoint(v)


@dataclass(frozen=True)
class LasotaYorkeDiagnostic:
    fiber: int
    n_prime: int
    bound: float
    empirical_ratio: float
    b_term: float
    passed: bool
