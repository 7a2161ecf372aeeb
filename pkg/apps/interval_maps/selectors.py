from typing import Any

from apps.interval_maps.types import AssumptionReport, PiecewiseAffineMap, WeightFunction


def branch_rows(tmap: PiecewiseAffineMap, weight: WeightFunction) -> list[dict[str, Any]]:
    """One row per branch: domain, slope, intercept, image and weight.

    Args:
        tmap: The map to describe.
        weight: Weight function evaluated per branch.

    Returns:
        Rows ready for the CSV writer.
    """

    values = weight.values(tmap)
    rows = []
    for index, branch in enumerate(tmap.branches):
        lo, hi = branch.image
        rows.append(
            {
                "branch": index,
                "left": branch.left,
                "right": branch.right,
                "slope": branch.slope,
                "intercept": branch.intercept,
                "image_lo": lo,
                "image_hi": hi,
                "full": int(branch.is_full),
                "g": float(values[index]),
            }
        )
    return rows


def assumption_rows(report: AssumptionReport) -> list[dict[str, Any]]:
    """Flatten an assumption report, one row per condition."""

    return [
        {
            "condition": c.name,
            "passed": int(c.passed),
            "fiber": "" if c.fiber is None else c.fiber,
            "witness": ";".join(f"{k}={v}" for k, v in sorted(c.witness.items())),
            "detail": c.detail,
        }
        for c in report.conditions
    ]
