from typing import Any

import numpy as np

from apps.transfer_op.types import TransferMatrix


def matrix_rows(matrix: TransferMatrix) -> list[dict[str, Any]]:
    """Coordinate-format rows (row, col, value) of the effective matrix, row-major."""

    coo = matrix.as_csr().tocoo()
    order = np.lexsort((coo.col, coo.row))
    return [
        {"row": int(coo.row[i]), "col": int(coo.col[i]), "value": float(coo.data[i])}
        for i in order
    ]


def cell_midpoints(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def lebesgue_mass_drift(matrix: TransferMatrix) -> float:
    """Largest |column sum - 1|: the per-application Lebesgue mass error of a closed r = 1 matrix."""

    column_sums = np.asarray(matrix.as_csr().sum(axis=0)).ravel()
    return float(np.max(np.abs(column_sums - 1.0)))
