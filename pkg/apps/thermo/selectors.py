from typing import Any

import numpy as np

from apps.thermo.types import EscapeRateReport, SurvivorResult, ThermoWindow


def thermo_rows(window: ThermoWindow) -> list[dict[str, Any]]:
    """One row per fiber of a thermo window.

    Args:
        window: Closed or open thermo window.

    Returns:
        Rows with the multipliers, the hole measure, the density range and the
        equivariance residual of every fiber.
    """

    rows = []
    for k in window.fibers:
        i = window.row(k)
        rows.append(
            {
                "fiber": k,
                "label": "" if window.label is None else window.label,
                "lambda": window.lam_at(k),
                "lambda0": window.lam0_at(k),
                "hole_measure": float(window.hole_measure[i]),
                "phi_min": float(window.phi[i].min()),
                "phi_max": float(window.phi[i].max()),
                "nu_of_one": window.nu_of_one(k),
                "rho": window.rho(k),
                "residual": float(window.residual[i]),
            }
        )
    return rows


def survivor_rows(results: list[SurvivorResult]) -> list[dict[str, Any]]:
    return [
        {
            "fiber": r.fiber,
            "steps": r.steps,
            "which": r.which,
            "value": r.value,
            "prediction": r.prediction,
            "value_tol": abs(r.value - r.prediction),
        }
        for r in results
    ]


def escape_rows(report: EscapeRateReport) -> list[dict[str, Any]]:
    return [
        {
            "label": row.label,
            "hole_measure": row.hole_measure,
            "rate_fit": row.rate_fit,
            "rate_birkhoff": row.rate_birkhoff,
            "rate_tol": abs(row.rate_fit - row.rate_birkhoff),
            "ratio": row.ratio,
        }
        for row in report.rows
    ]


def pressure_gap(window: ThermoWindow) -> float:
    """Average of log lambda_0 - log lambda_eps over the window fibers."""
    return float(np.mean(np.log(window.lam0) - np.log(window.lam)))
