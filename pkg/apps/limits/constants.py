OBSERVABLE_KINDS = [
    "indicator",
    "cosine",
    "step",
    "coboundary",
]

RADIUS_KINDS = ["constant", "harmonic", "power"]

# Green-Kubo lag cutoff when none is given.
DEFAULT_LAGS = 60

# Sigma^2 at or below this is treated as the coboundary case.
VARIANCE_FLOOR = 1e-10

CENTERING_TOL = 1e-10

# Significance level of the CLT Kolmogorov-Smirnov test.
KS_LEVEL = 0.01

# Exponent slack in the Sprindzuk remainder sqrt(E) log(E)^(3/2 + delta).
SPRINDZUK_DELTA = 0.1

# Fractions of the horizon at which Borel-Cantelli ratios are reported.
BC_CHECKPOINTS = [0.125, 0.25, 0.5, 1.0]

# Largest conditional mean allowed for a martingale increment.
MARTINGALE_TOL = 1e-10

# Starting fibers averaged by the Green-Kubo estimate when none are given.
VARIANCE_FIBERS = 32


def get_observable_kinds() -> list[str]:
    """Return a copy of the supported Birkhoff observables."""
    return OBSERVABLE_KINDS.copy()


def get_radius_kinds() -> list[str]:
    return RADIUS_KINDS.copy()
