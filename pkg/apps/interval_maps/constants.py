MAP_FAMILIES = ["example1", "beta"]

# Points closer than this are treated as equal when comparing branch and hole endpoints.
ENDPOINT_TOLERANCE = 1e-12

# Uniform bound on hole components asserted by the (E5) check.
MAX_HOLE_COMPONENTS = 4

# Search range for the iterate n' in the (E8) check.
N_PRIME_MAX = 8

# Covering-time cap for the (E4) and (E9) checks, and the test-interval width for (E4).
COVERING_STEPS_MAX = 40
COVERING_TEST_CELLS = 64

# Lasota-Yorke constant in front of sup g^(n').
LASOTA_YORKE_FACTOR = 9.0


def get_map_families() -> list[str]:
    """Return a copy of the supported map families."""
    return MAP_FAMILIES.copy()
