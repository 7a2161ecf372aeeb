import math
from typing import Any

import numpy as np

from apps.evt.types import GumbelReport, HittingReport, HuslerReport, ThetaReport, ThresholdSchedule


def schedule_rows(schedule: ThresholdSchedule) -> list[dict[str, Any]]:
    """One row per (N, fiber) with the threshold, the realized hole mass and xi.

    Args:
        schedule: Solved threshold schedule.

    Returns:
        Rows ordered by N, then by fiber.
    """

    rows = []
    for r, N in enumerate(schedule.ladder):
        for c, k in enumerate(schedule.fibers):
            target = (schedule.t[c] + schedule.bias) / N
            rows.append(
                {
                    "N": N,
                    "fiber": k,
                    "t": float(schedule.t[c]),
                    "threshold": float(schedule.thresholds[r, c]),
                    "radius": float(schedule.radii[r, c]),
                    "hole_measure": float(schedule.measures[r, c]),
                    "hole_measure_tol": abs(float(schedule.measures[r, c]) - target),
                    "xi": float(schedule.xi[r, c]),
                    "xi_tol": schedule.W,
                }
            )
    return rows


def qhat_rows(report: ThetaReport) -> list[dict[str, Any]]:
    rows = []
    for r, N in enumerate(report.ladder):
        for c, k in enumerate(report.fibers):
            for m in range(report.k_max):
                rows.append(
                    {
                        "N": N,
                        "fiber": k,
                        "k": m,
                        "qhat": float(report.qhat[r, c, m]),
                        "qhat_tol": report.cross_residual,
                        "theta_truncated": float(report.truncations[r, c, m]),
                        "theta_truncated_tol": report.cross_residual * (m + 1),
                    }
                )
    return rows


def theta_rows(report: ThetaReport) -> list[dict[str, Any]]:
    """Per-fiber extrapolated theta next to the closed form when one applies."""
    rows = []
    finest = report.truncations[-1, :, -1]
    for c, k in enumerate(report.fibers):
        exact = None if report.closed_form is None else float(report.closed_form[c])
        theta = float(report.theta[c])
        rows.append(
            {
                "fiber": k,
                "t": float(report.t[c]),
                "theta": theta,
                "theta_tol": abs(theta - float(finest[c])),
                "closed_form": exact,
                "closed_form_tol": None if exact is None else abs(theta - exact),
            }
        )
    return rows


def theta_summary(report: ThetaReport) -> dict[str, Any]:
    return {
        "k_max": report.k_max,
        "ladder": list(report.ladder),
        "fibers": [report.fibers[0], report.fibers[-1]],
        "mean_theta": report.mean_theta,
        "integral_t_theta": report.integral,
        "closed_form_mean": report.closed_form_mean,
        "max_closed_form_deviation": report.deviation,
        "order": report.order,
        "weighted_qhat_mass": [float(x) for x in report.weighted_mass],
        "cross_residual": report.cross_residual,
        "notes": list(report.notes),
    }


def gumbel_rows(report: GumbelReport) -> list[dict[str, Any]]:
    return [
        {
            "fiber": report.fiber,
            "N": row.N,
            "nu_value": row.nu_value,
            "nu_value_tol": row.spread,
            "mu_value": row.mu_value,
            "mu_value_tol": row.spread,
            "lambda_ratio": row.lambda_ratio,
            "lambda_ratio_tol": row.spread,
            "target": row.target,
            "target_tol": abs(row.nu_value - row.target),
        }
        for row in report.rows
    ]


def hitting_rows(report: HittingReport) -> list[dict[str, Any]]:
    """Empirical against operator survival at the checked step counts."""
    return [
        {
            "fiber": report.fiber,
            "N": report.N,
            "steps": point.steps,
            "empirical": point.empirical,
            "empirical_tol": point.sigma,
            "operator": point.operator,
            "operator_tol": abs(point.empirical - point.operator),
            "exponential": math.exp(-report.rate * point.steps / report.N),
            "exponential_tol": abs(point.empirical - math.exp(-report.rate * point.steps / report.N)),
        }
        for point in report.survival
    ]


def hitting_curve(report: HittingReport, points: int = 200) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(u, empirical P(tau / N > u), exp(-rate u)) on a uniform grid up to the horizon."""
    u = np.linspace(0.0, report.horizon / report.N, points)
    ordered = np.sort(report.times)
    empirical = 1.0 - np.searchsorted(ordered, u, side="right") / ordered.size
    return u, empirical, np.exp(-report.rate * u)


def husler_row(report: HuslerReport) -> dict[str, Any]:
    return {
        "N": report.N,
        "first_fiber": report.fibers[0],
        "last_fiber": report.fibers[1],
        "average": report.average,
        "average_tol": report.tolerance,
        "t_mean": report.t_mean,
        "deviation": report.deviation,
        "passed": report.passed,
    }
