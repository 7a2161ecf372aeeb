# A second sweep started this many fibers later certifies every pullback and adjoint sweep.
CERTIFICATION_OFFSET = 5

# Random step functions used by the decay-rate and correlation checks.
DECAY_SAMPLE_COUNT = 8
DECAY_STEPS = 30

# Test sets for the conditional-invariance residual are unions of this many cell blocks.
CONDITIONAL_TEST_BLOCKS = 16

# Hole measures at or below this value put a fiber outside the positive-measure set.
NULL_HOLE_MEASURE = 1e-15

SURVIVOR_MEASURES = ["nu", "mu"]

# Random step functions for the conformality residual of a window.
CONFORMALITY_SAMPLE_COUNT = 20

# Delta-identity and eta-bound tolerance on exact grids.
IDENTITY_TOL = 1e-10

# Automatic pull depth: a short uncertified pilot window at PILOT_DEPTH, whose
# decay over PILOT_STEPS steps on step functions with PILOT_CUTS random cuts
# gives the depth at which the remainder falls below the certification tolerance.
PILOT_DEPTH = 20
PILOT_STEPS = 12
PILOT_CUTS = 7
