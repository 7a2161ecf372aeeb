"""Configs reproducing the four worked examples at desk scale.

Each preset is a partial config; missing sections take the serializer defaults.
"""
import copy
from typing import Any

from apps.experiments.constants import EXAMPLE_PRESETS


PRESETS: dict[str, dict[str, Any]] = {
    # Centred holes at the fixed point 1/2 of the slope-2 map: theta = 1/2.
    "1": {
        "name": "example-1",
        "driving": {"kind": "bernoulli-shift", "alphabet_size": 2, "weights": [0.5, 0.5]},
        "maps": {"family": "example1", "params": {"s": 2.0}},
        "observable": {"family": "distance", "center": 0.5},
        "grid": {"cells": 4096},
        "window": {"K": 60, "N": 4300},
        "evt": {"ladder": [1024, 2048, 4096], "lo": 0, "hi": 4200, "theta": 0.5, "samples": 20000},
    },
    # Random beta maps, holes [0, r] at the common fixed point 0.
    "2": {
        "name": "example-2",
        "driving": {"kind": "bernoulli-shift", "alphabet_size": 2, "weights": [0.5, 0.5]},
        "maps": {"family": "beta", "params": {"beta": {"table": [2.5, 3.5]}}},
        "observable": {"family": "distance", "center": 0.0},
        "grid": {"cells": 4096},
        "window": {"K": 60, "N": 2200},
        "evt": {"ladder": [512, 1024, 2048], "lo": 0, "hi": 2100},
    },
    # Tripling map, period-2 centre 1/8, holes drifting with a random jitter: theta = 1 - 1/9.
    "3": {
        "name": "example-3",
        "driving": {"kind": "bernoulli-shift", "alphabet_size": 2, "weights": [0.5, 0.5]},
        "maps": {"family": "beta", "params": {"beta": 3.0}},
        "observable": {"family": "drift-distance", "center": 0.125, "params": {"jitter": {"table": [0.0, 1.5]}}},
        "grid": {"cells": 4096},
        "window": {"K": 60, "N": 2200},
        "evt": {"ladder": [512, 1024, 2048], "lo": 0, "hi": 2100, "theta": 8.0 / 9.0, "period": 2},
    },
    # Integer beta maps with an irrational shift and rational centres 1/4, 3/4: no
    # centre orbit meets a centre, theta = 1. The small scaling keeps the finite-N
    # q-hat terms of long orbits below 1e-3.
    "4": {
        "name": "example-4",
        "driving": {"kind": "bernoulli-shift", "alphabet_size": 2, "weights": [0.5, 0.5]},
        "maps": {"family": "beta", "params": {"beta": {"table": [3.0, 4.0]}, "r": 0.41421356237309503}},
        "observable": {"family": "log-distance", "params": {"center": {"table": [0.25, 0.75]}}},
        "scaling": 0.01,
        "grid": {"cells": 4096},
        "window": {"K": 60, "N": 2200},
        "evt": {"ladder": [512, 1024, 2048], "lo": 0, "hi": 2100, "theta": 1.0},
    },
}


def get_preset(name: str) -> dict[str, Any]:
    if name not in PRESETS:
        raise KeyError(f"Unknown example preset {name!r}, expected one of {EXAMPLE_PRESETS}")
    return copy.deepcopy(PRESETS[name])
