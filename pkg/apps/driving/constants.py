DRIVING_KINDS = ["circle-rotation", "bernoulli-shift", "markov-shift"]

PARAMETER_RULE_KINDS = ["constant", "table", "linear", "bins"]

# Symbol weights and transition rows must sum to one within this tolerance.
WEIGHT_SUM_TOLERANCE = 1e-12

# Position-keyed streams draw uniforms in blocks of this many lattice sites.
STREAM_BLOCK_SIZE = 1024

# Coupling-from-the-past lag doubles from the initial value up to the cap.
MARKOV_INITIAL_LAG = 16
MARKOV_MAX_LAG = 2 ** 16

# Rotation angles closer than this to a rational p/q with q <= RATIONAL_MAX_DENOMINATOR are flagged.
RATIONAL_TOLERANCE = 1e-12
RATIONAL_MAX_DENOMINATOR = 1000


def get_driving_kinds() -> list[str]:
    """Return a copy of the supported driving kinds."""
    return DRIVING_KINDS.copy()
