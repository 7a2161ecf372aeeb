import logging
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from apps.driving.constants import (
    MARKOV_INITIAL_LAG,
    MARKOV_MAX_LAG,
    RATIONAL_MAX_DENOMINATOR,
    RATIONAL_TOLERANCE,
    STREAM_BLOCK_SIZE,
    WEIGHT_SUM_TOLERANCE,
)
from apps.driving.types import DrivingSystem, FiberPath, ParameterAssignment


logger = logging.getLogger(__name__)

_BASE_POINT_STREAM = 2 ** 64 - 1
_WORKER_STREAM_BASE = 2 ** 63


class DrivingError(Exception):
    """Raised when a driving system cannot be realized on a window."""


def build_rotation_driving(
    *,
    alpha: float,
    parameter_assignment: ParameterAssignment,
    base_point: Optional[float] = None,
) -> DrivingSystem:
    """Circle rotation sigma(w) = w + alpha (mod 1).

    Parameters
    - alpha: rotation angle in (0, 1); a finite-precision stand-in for an irrational
    - parameter_assignment: payload rule, evaluated on the rotation state
    - base_point: w_0; drawn from the path seed when omitted
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"Rotation angle must lie in (0, 1), got {alpha}")
    _check_rules(parameter_assignment, allowed=("constant", "linear", "bins"))

    warnings = []
    approximant = Fraction(alpha).limit_denominator(RATIONAL_MAX_DENOMINATOR)
    if abs(alpha - float(approximant)) < RATIONAL_TOLERANCE:
        warnings.append(f"rational: not ergodic (alpha = {approximant})")
        logger.warning(f"Rotation angle {alpha} is rational ({approximant}); the driving is not ergodic")

    return DrivingSystem(
        kind="circle-rotation",
        assignment=parameter_assignment,
        alpha=float(alpha),
        base_point=base_point,
        warnings=tuple(warnings),
    )


def build_shift_driving(
    *,
    alphabet_size: int,
    weights: Sequence[float],
    parameter_assignment: ParameterAssignment,
    transition: Optional[Sequence[Sequence[float]]] = None,
) -> DrivingSystem:
    """Bilateral shift on {0, ..., l-1}^Z with i.i.d. (or Markov) coordinates.

    Parameters
    - alphabet_size: l >= 2
    - weights: symbol probabilities (the stationary law when a transition matrix is given)
    - parameter_assignment: payload rule, evaluated on the symbol omega_0
    - transition: optional l x l row-stochastic matrix; switches the kind to markov-shift
    """
    if alphabet_size < 2:
        raise ValueError(f"A shift driving needs at least two symbols, got {alphabet_size}")
    probabilities = _probability_vector(weights, length=alphabet_size, what="Symbol weights")
    _check_rules(parameter_assignment, allowed=("constant", "table"), table_length=alphabet_size)

    kind = "bernoulli-shift"
    rows = None
    if transition is not None:
        if len(transition) != alphabet_size:
            raise ValueError(f"Transition matrix must have {alphabet_size} rows, got {len(transition)}")
        rows = tuple(
            tuple(_probability_vector(row, length=alphabet_size, what=f"Transition row {i}"))
            for i, row in enumerate(transition)
        )
        kind = "markov-shift"

    return DrivingSystem(
        kind=kind,
        assignment=parameter_assignment,
        alphabet_size=alphabet_size,
        weights=tuple(probabilities),
        transition=rows,
    )


def build_markov_driving(
    *,
    transition: Sequence[Sequence[float]],
    parameter_assignment: ParameterAssignment,
) -> DrivingSystem:
    """Markov shift whose symbol weights are the stationary law of ``transition``."""
    matrix = np.asarray(transition, dtype=float)
    return build_shift_driving(
        alphabet_size=matrix.shape[0],
        weights=stationary_distribution(matrix),
        parameter_assignment=parameter_assignment,
        transition=matrix.tolist(),
    )


def stationary_distribution(transition: np.ndarray) -> list[float]:
    eigenvalues, vectors = np.linalg.eig(np.asarray(transition, dtype=float).T)
    leading = vectors[:, np.argmin(np.abs(eigenvalues - 1.0))].real
    leading = np.abs(leading) / np.abs(leading).sum()
    return leading.tolist()


def position_uniforms(*, seed: int, positions: np.ndarray) -> np.ndarray:
    """Uniforms on [0, 1) keyed by (seed, lattice position).

    Position p reads entry ``p mod B`` of the Philox block ``p // B``, so any
    two windows agree wherever they overlap.
    """
    positions = np.asarray(positions, dtype=np.int64)
    out = np.empty(positions.shape, dtype=float)
    blocks = np.floor_divide(positions, STREAM_BLOCK_SIZE)
    for block in np.unique(blocks):
        selected = blocks == block
        draws = _philox(seed, _zigzag(int(block))).random(STREAM_BLOCK_SIZE)
        out[selected] = draws[positions[selected] - block * STREAM_BLOCK_SIZE]
    return out


def worker_generator(*, seed: int, worker: int) -> np.random.Generator:
    """Monte Carlo generator for one worker.

    Worker streams sit above every block id the position lattice can reach.
    """
    if worker < 0:
        raise ValueError(f"Worker index must be nonnegative, got {worker}")
    return _philox(seed, _WORKER_STREAM_BASE + worker)


def sample_fiber_path(
    *,
    driving: DrivingSystem,
    seed: int,
    K: int,
    N: int,
    offset: int = 0,
) -> FiberPath:
    """Realize fibers sigma^k(omega) for k in [-K, N].

    Parameters
    - driving: the base system
    - seed: 64-bit seed; together with the window it fixes the path bit for bit
    - K, N: window extent to the left and right of the base fiber
    - offset: lattice position of the base fiber; offset + 1 gives the path at sigma(omega)
    """
    if K < 0 or N < 0:
        raise ValueError(f"Window extents must be nonnegative, got K={K}, N={N}")

    positions = offset + np.arange(-K, N + 1, dtype=np.int64)
    if driving.kind == "circle-rotation":
        states = _rotation_states(driving, seed, positions)
    elif driving.kind == "bernoulli-shift":
        states = _bernoulli_symbols(driving, seed, positions)
    elif driving.kind == "markov-shift":
        states = _markov_symbols(driving, seed, positions)
    else:
        raise ValueError(f"Unknown driving kind: {driving.kind}")

    cache = {}
    payloads = []
    for state in states.tolist():
        if state not in cache:
            cache[state] = driving.assignment(state)
        payloads.append(cache[state])

    logger.debug(f"Sampled {driving.kind} path seed={seed} window=[{-K}, {N}] offset={offset}")
    return FiberPath(
        driving=driving,
        seed=seed,
        K=K,
        N=N,
        offset=offset,
        states=states,
        payloads=tuple(payloads),
    )


def shift_path(*, path: FiberPath, steps: int = 1) -> FiberPath:
    """The same window sampled at sigma^steps(omega)."""
    return sample_fiber_path(
        driving=path.driving,
        seed=path.seed,
        K=path.K,
        N=path.N,
        offset=path.offset + steps,
    )


def _rotation_states(driving: DrivingSystem, seed: int, positions: np.ndarray) -> np.ndarray:
    base = driving.base_point
    if base is None:
        base = float(_philox(seed, _BASE_POINT_STREAM).random())
    return np.mod(base + positions.astype(float) * driving.alpha, 1.0)


def _bernoulli_symbols(driving: DrivingSystem, seed: int, positions: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(driving.weights)
    uniforms = position_uniforms(seed=seed, positions=positions)
    symbols = np.searchsorted(cumulative, uniforms, side="right")
    return np.minimum(symbols, driving.alphabet_size - 1).astype(np.int64)


def _markov_symbols(driving: DrivingSystem, seed: int, positions: np.ndarray) -> np.ndarray:
    """Grand coupling from the past, then forward steps on the same position-keyed uniforms."""
    cumulative = np.cumsum(np.asarray(driving.transition), axis=1)
    first = int(positions[0])

    lag = MARKOV_INITIAL_LAG
    while True:
        uniforms = position_uniforms(seed=seed, positions=np.arange(first - lag + 1, first + 1))
        states = np.arange(driving.alphabet_size)
        for u in uniforms:
            states = _markov_step(cumulative, states, u)
        if np.all(states == states[0]):
            break
        lag *= 2
        if lag > MARKOV_MAX_LAG:
            raise DrivingError(
                f"Markov coupling did not coalesce within {MARKOV_MAX_LAG} steps; "
                "the transition matrix may not be mixing"
            )

    symbols = np.empty(len(positions), dtype=np.int64)
    symbols[0] = states[0]
    forward = position_uniforms(seed=seed, positions=positions[1:])
    current = states[:1]
    for i, u in enumerate(forward, start=1):
        current = _markov_step(cumulative, current, u)
        symbols[i] = current[0]
    return symbols


def _markov_step(cumulative: np.ndarray, states: np.ndarray, u: float) -> np.ndarray:
    nxt = (cumulative[states] <= u).sum(axis=1)
    return np.minimum(nxt, cumulative.shape[1] - 1)


def _philox(seed: int, stream: int) -> np.random.Generator:
    key = ((int(seed) % 2 ** 64) << 64) | stream
    return np.random.Generator(np.random.Philox(key=key))


def _zigzag(block: int) -> int:
    return 2 * block if block >= 0 else -2 * block - 1


def _probability_vector(values: Sequence[float], *, length: int, what: str) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    if vector.shape != (length,):
        raise ValueError(f"{what} must have {length} entries, got {vector.shape[0] if vector.ndim else 0}")
    if np.any(vector < 0):
        raise ValueError(f"{what} must be nonnegative: {vector.tolist()}")
    if abs(vector.sum() - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise ValueError(f"{what} must sum to 1 within {WEIGHT_SUM_TOLERANCE}, got {vector.sum()!r}")
    return vector


def _check_rules(
    assignment: ParameterAssignment,
    *,
    allowed: tuple[str, ...],
    table_length: Optional[int] = None,
) -> None:
    rules = list(assignment.map_params) + list(assignment.observable_params) + [("t", assignment.scaling)]
    for name, rule in rules:
        if rule.kind not in allowed:
            raise ValueError(f"Parameter '{name}' uses a '{rule.kind}' rule, allowed here: {', '.join(allowed)}")
        if rule.kind == "table" and table_length is not None and len(rule.values) < table_length:
            raise ValueError(
                f"Parameter '{name}' has {len(rule.values)} table entries for {table_length} symbols"
            )
