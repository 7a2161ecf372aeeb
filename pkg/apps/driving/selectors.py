from typing import Any

import numpy as np

from apps.driving.services import sample_fiber_path
from apps.driving.types import DrivingSystem, FiberPath


def window_indices(path: FiberPath) -> range:
    """Window indices ``-K .. N`` in increasing order."""

    return range(-path.K, path.N + 1)


def symbol_frequencies(driving: DrivingSystem, *, seed: int, count: int) -> np.ndarray:
    """Empirical symbol frequencies over ``count`` consecutive lattice positions.

    Args:
        driving: A shift driving.
        seed: Path seed.
        count: Number of positions, starting at 0.

    Returns:
        Frequency vector of length ``alphabet_size``.
    """

    if not driving.is_shift:
        raise ValueError(f"Symbol frequencies need a shift driving, got {driving.kind}")
    path = sample_fiber_path(driving=driving, seed=seed, K=0, N=count - 1)
    counts = np.bincount(path.states, minlength=driving.alphabet_size)
    return counts / float(count)


def path_rows(path: FiberPath) -> list[dict[str, Any]]:
    """Flat rows (one per fiber) for CSV export of a sampled path."""

    rows = []
    for k, state, payload in zip(window_indices(path), path.states.tolist(), path.payloads):
        row = {"fiber": k, "state": state, "t": payload.t}
        row.update({f"map_{name}": value for name, value in payload.map_params})
        row.update({f"obs_{name}": value for name, value in payload.observable_params})
        rows.append(row)
    return rows
