import math
from typing import Any

import numpy as np
from scipy import stats

from apps.limits.types import AzumaReport, BirkhoffExperiment, BorelCantelliReport, CltReport, VarianceReport


def variance_row(report: VarianceReport) -> dict[str, Any]:
    return {
        "first_fiber": report.fibers[0],
        "last_fiber": report.fibers[1],
        "lags": report.lags,
        "sigma2": report.sigma2,
        "sigma2_tol": report.tail_bound,
        "second_moment": report.second_moment,
        "fiber_spread": float(np.std(report.per_fiber)),
        "kappa": report.kappa,
        "D": report.constant,
    }


def correlation_rows(report: VarianceReport) -> list[dict[str, Any]]:
    return [{"lag": lag + 1, "correlation": float(c)} for lag, c in enumerate(report.correlations)]


def clt_row(report: CltReport) -> dict[str, Any]:
    """Green-Kubo against the direct variance next to the KS verdict."""
    return {
        "fiber": report.fiber,
        "n": report.n,
        "samples": report.samples,
        "sigma2": report.sigma2,
        "direct_variance": report.direct_variance,
        "direct_variance_tol": abs(report.direct_variance - report.sigma2),
        "ks": report.ks_distance,
        "ks_tol": stats.kstwo.ppf(0.99, report.samples),
        "p_value": report.p_value,
        "passed": report.passed,
    }


def qq_points(experiment: BirkhoffExperiment, points: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """(normal quantiles, sample quantiles) of S_n v / sqrt(n) standardized by Sigma."""
    sigma = math.sqrt(experiment.sigma2) if experiment.sigma2 else float(np.std(experiment.scaled))
    levels = (np.arange(points) + 0.5) / points
    return stats.norm.ppf(levels), np.quantile(experiment.scaled / sigma, levels)


def azuma_rows(report: AzumaReport) -> list[dict[str, Any]]:
    return [
        {
            "fiber": report.fiber,
            "deviation": row.deviation,
            "n": row.n,
            "n0": row.n0,
            "empirical": row.empirical,
            "bound": row.bound,
            "applies": row.applies,
            "violated": row.violated,
        }
        for row in report.rows
    ]


def azuma_constants(report: AzumaReport) -> dict[str, Any]:
    constants = report.constants
    return {
        "U": constants.U,
        "D": constants.D,
        "kappa": constants.kappa,
        "C1": constants.C1,
        "C2": constants.C2,
        "martingale_residual": report.martingale_residual,
        "g_norm_ratio": report.g_norm_ratio,
    }


def borel_cantelli_rows(report: BorelCantelliReport) -> list[dict[str, Any]]:
    """Count / E_n at each checkpoint, with the remainder bound of the final horizon."""
    return [
        {
            "fiber": report.fiber,
            "n": steps,
            "expected": expected,
            "ratio": ratio,
            "ratio_tol": report.error_bound if steps == report.n else None,
        }
        for steps, expected, ratio in report.checkpoints
    ]
