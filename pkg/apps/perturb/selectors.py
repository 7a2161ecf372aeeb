from typing import Any

from apps.perturb.types import FirstOrderTable, PerturbationLedger


def ledger_rows(ledger: PerturbationLedger) -> list[dict[str, Any]]:
    """One row per ladder value with Delta, eta, the ratio and the identity residuals.

    Args:
        ledger: Perturbation ledger at one fiber.

    Returns:
        Rows ordered from the largest to the smallest eps.
    """

    rows = []
    for entry in ledger.entries:
        rows.append(
            {
                "fiber": ledger.fiber,
                "eps": entry.eps,
                "lambda0": entry.lam0,
                "lambda_eps": entry.lam_eps,
                "delta": entry.delta,
                "eta": entry.eta,
                "eigen_gap": entry.lam0 - entry.lam_eps,
                "eigen_bound": entry.phi_sup * entry.eta,
                "ratio": entry.ratio,
                "ratio_tol": abs(entry.ratio - ledger.theta0),
                "theta_truncated": float(entry.theta_truncations[-1]),
                "identity_residual": entry.identity_residual,
                "expansion_residual": entry.expansion_residual,
                "q_tail": entry.q_tail,
            }
        )
    return rows


def check_rows(ledger: PerturbationLedger) -> list[dict[str, Any]]:
    return [
        {"fiber": ledger.fiber, "check": c.name, "passed": c.passed, "value": c.value, "detail": c.detail}
        for c in ledger.checks
    ]


def first_order_rows(table: FirstOrderTable) -> list[dict[str, Any]]:
    return [
        {
            "fiber": table.fiber,
            "eps": row.eps,
            "ratio": row.ratio,
            "theta": table.theta,
            "residual": row.residual,
            "residual_tol": abs(row.residual),
        }
        for row in table.rows
    ]
