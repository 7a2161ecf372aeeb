from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from apps.driving.constants import PARAMETER_RULE_KINDS


@dataclass(frozen=True)
class ParameterRule:
    """A per-fiber parameter given as a pure function of the fiber state.

    - constant: ``values[0]`` on every fiber
    - table: ``values[symbol]`` for shift drivings
    - linear: ``values[0] + values[1] * state`` for rotations
    - bins: ``values[floor(state * len(values))]`` for rotations
    """

    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in PARAMETER_RULE_KINDS:
            raise ValueError(f"Unknown parameter rule kind: {self.kind}")
        if not self.values:
            raise ValueError(f"Parameter rule '{self.kind}' needs at least one value")
        if self.kind == "linear" and len(self.values) != 2:
            raise ValueError("A linear rule takes exactly two coefficients [a, b]")

    @classmethod
    def from_config(cls, raw: Any) -> "ParameterRule":
        """Build a rule from its config form (a number or a one-key mapping)."""
        if isinstance(raw, ParameterRule):
            return raw
        if isinstance(raw, (int, float)):
            return cls(kind="constant", values=(float(raw),))
        if isinstance(raw, Mapping) and len(raw) == 1:
            kind, values = next(iter(raw.items()))
            return cls(kind=kind, values=tuple(float(v) for v in values))
        raise ValueError(f"Cannot read a parameter rule from {raw!r}")

    def evaluate(self, state: float) -> float:
        if self.kind == "constant":
            return self.values[0]
        if self.kind == "table":
            return self.values[int(state)]
        if self.kind == "linear":
            return self.values[0] + self.values[1] * float(state)
        index = min(int(float(state) * len(self.values)), len(self.values) - 1)
        return self.values[index]


@dataclass(frozen=True)
class FiberPayload:
    """Everything attached to one fiber: which map acts there, its observable and scaling."""

    map_family: str
    map_params: tuple[tuple[str, float], ...]
    observable_params: tuple[tuple[str, float], ...] = ()
    t: float = 1.0

    def map_param(self, name: str, default: Optional[float] = None) -> float:
        for key, value in self.map_params:
            if key == name:
                return value
        if default is None:
            raise KeyError(f"Map parameter '{name}' missing for family {self.map_family}")
        return default

    def observable_param(self, name: str, default: Optional[float] = None) -> float:
        for key, value in self.observable_params:
            if key == name:
                return value
        if default is None:
            raise KeyError(f"Observable parameter '{name}' missing")
        return default


@dataclass(frozen=True)
class ParameterAssignment:
    """Maps a fiber state to its payload. Pure, so sampled paths stay equivariant."""

    map_family: str
    map_params: tuple[tuple[str, ParameterRule], ...] = ()
    observable_params: tuple[tuple[str, ParameterRule], ...] = ()
    scaling: ParameterRule = field(default_factory=lambda: ParameterRule("constant", (1.0,)))

    @classmethod
    def build(
        cls,
        *,
        map_family: str,
        map_params: Optional[Mapping[str, Any]] = None,
        observable_params: Optional[Mapping[str, Any]] = None,
        scaling: Any = 1.0,
    ) -> "ParameterAssignment":
        return cls(
            map_family=map_family,
            map_params=tuple(
                sorted((name, ParameterRule.from_config(raw)) for name, raw in (map_params or {}).items())
            ),
            observable_params=tuple(
                sorted((name, ParameterRule.from_config(raw)) for name, raw in (observable_params or {}).items())
            ),
            scaling=ParameterRule.from_config(scaling),
        )

    def __call__(self, state: float) -> FiberPayload:
        return FiberPayload(
            map_family=self.map_family,
            map_params=tuple((name, rule.evaluate(state)) for name, rule in self.map_params),
            observable_params=tuple((name, rule.evaluate(state)) for name, rule in self.observable_params),
            t=self.scaling.evaluate(state),
        )


@dataclass(frozen=True)
class DrivingSystem:
    kind: str
    assignment: ParameterAssignment
    alpha: Optional[float] = None
    base_point: Optional[float] = None
    alphabet_size: Optional[int] = None
    weights: Optional[tuple[float, ...]] = None
    transition: Optional[tuple[tuple[float, ...], ...]] = None
    warnings: tuple[str, ...] = ()

    @property
    def is_shift(self) -> bool:
        return self.kind in ("bernoulli-shift", "markov-shift")


@dataclass(frozen=True, eq=False)
class FiberPath:
    """A realized window [-K, N] of the driving orbit.

    Window index ``k`` is stored at array position ``k + K``; the absolute
    lattice position of fiber ``k`` is ``offset + k``, so the path of the
    shifted base point is the same driving sampled with ``offset + 1``.
    """

    driving: DrivingSystem
    seed: int
    K: int
    N: int
    offset: int
    states: np.ndarray
    payloads: tuple[FiberPayload, ...]

    def __len__(self) -> int:
        return self.N + self.K + 1

    @property
    def first(self) -> int:
        return -self.K

    @property
    def last(self) -> int:
        return self.N

    def contains(self, k: int) -> bool:
        return -self.K <= k <= self.N

    def position(self, k: int) -> int:
        if not self.contains(k):
            raise IndexError(f"Fiber {k} outside window [{-self.K}, {self.N}]")
        return k + self.K

    def state(self, k: int) -> float:
        return self.states[self.position(k)]

    def payload(self, k: int) -> FiberPayload:
        return self.payloads[self.position(k)]
