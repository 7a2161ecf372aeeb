MASK_RULES = ["coordinate", "none", "orthogonal"]

DEFAULT_EPS_LADDER = [1e-2, 1e-3, 1e-4]

# Closed matrix entries are i.i.d. uniform on this range.
ENTRY_RANGE = (0.5, 1.5)

# eta is evaluated on the vertices of the unit cube up to this dimension.
VERTEX_ENUMERATION_MAX_DIM = 10

IDENTITY_TOL = 1e-12
FIRST_ORDER_TOL = 1e-8
Q_DECAY_STEPS = 20
Q_SAMPLE_COUNT = 10

# (P6) fails when Delta is this small relative to eta, or when eta / Delta spreads by more than P6_SPREAD.
P6_DELTA_FLOOR = 1e-8
P6_SPREAD = 10.0
P7_TOL = 1e-2
P8_TOL = 1e-4


def get_mask_rules():
    return MASK_RULES.copy()


def get_default_eps_ladder():
    return DEFAULT_EPS_LADDER.copy()
