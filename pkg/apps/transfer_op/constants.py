# Branch endpoints and their images within this distance of k/n count as grid points.
GRID_TOLERANCE = 1e-12

# Mass drift allowed per application of a closed r = 1 matrix.
MASS_TOLERANCE = 1e-12

# Slack added to the Lasota-Yorke bound before the empirical ratio is called a violation.
LASOTA_YORKE_SLACK = 1e-9

TRANSFER_MATRIX_CACHE_SIZE = 256
