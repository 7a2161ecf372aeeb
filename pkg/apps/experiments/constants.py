SUBCOMMANDS = [
    "assumptions",
    "thermo",
    "theta",
    "gumbel",
    "hitting",
    "clt",
    "ldp",
    "borel-cantelli",
    "matrix-check",
    "example",
    "branches",
    "matrix",
]

EXAMPLE_PRESETS = ["1", "2", "3", "4"]

CONFIG_SECTIONS = ["driving", "maps", "observable", "grid", "window", "seeds", "evt", "limits", "matrix", "tolerances"]

EXIT_ASSERTION = 1
EXIT_CONFIG = 2

FAILURES_FILE = "failures.json"
SUMMARY_FILE = "summary.json"

# Fixed salt so matplotlib writes byte-identical SVG ids.
SVG_HASHSALT = "qeve"

CSV_FLOAT_FORMAT = "{:.17g}"

# Points on the survival and QQ curves drawn in plots.
PLOT_POINTS = 200

# Fibers listed by the thermo and assumptions reports.
REPORT_FIBERS = 50

# Hole rungs at or below this Lebesgue measure enter the small-hole assumption checks.
ASSUMPTION_EPS0 = 0.05


def get_subcommands() -> list[str]:
    """Return a copy of the run subcommands."""
    return SUBCOMMANDS.copy()


def get_example_presets() -> list[str]:
    return EXAMPLE_PRESETS.copy()
