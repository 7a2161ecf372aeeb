OBSERVABLE_FAMILIES = [
    "distance",
    "log-distance",
    "drift-distance",
]

# Bisection on the hole radius; each step halves the bracket.
BISECTION_MAX_ITER = 200

# Operator and conditional-measure forms of q-hat must agree to this.
QHAT_CROSS_TOL = 1e-8

# Partial sums of q-hat may exceed 1 by round-off only.
QHAT_SUM_TOL = 1e-9

# Orbit points closer than this to the next centre count as landing on it.
CENTER_MATCH_TOL = 1e-9

# Hitting times are followed for this many multiples of N before censoring.
HITTING_HORIZON_FACTOR = 4

# Scaled times u at which the Monte Carlo survival is compared with the operator.
SURVIVAL_CHECKPOINTS = [0.5, 1.0, 2.0, 3.0]

# Standard deviations allowed between Monte Carlo and operator survival.
SURVIVAL_SIGMA = 3.0

THETA_RANGE_TOL = 1e-6


def get_observable_families() -> list[str]:
    """Return a copy of the supported observable families."""
    return OBSERVABLE_FAMILIES.copy()
