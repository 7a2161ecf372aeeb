"""Deterministic artifact writers. Every file goes to a temporary name first and is renamed into place."""
import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.figure import Figure

from apps.experiments.constants import CSV_FLOAT_FORMAT, SVG_HASHSALT


logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = SVG_HASHSALT


def _atomic_write(path: Path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "wb") as out:
            out.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path} ({len(data)} bytes)")
    return path


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return CSV_FLOAT_FORMAT.format(float(value))
    return str(value)


def _columns(rows: list[dict[str, Any]]) -> list[str]:
    """Row keys in first-seen order, with a *_tol column after every float column lacking one."""
    seen = []
    for row in rows:
        for key in row:
            if key not in seen:
                seen.append(key)
    columns = []
    for key in seen:
        if key.endswith("_tol"):
            if key[: -len("_tol")] not in seen:
                columns.append(key)
            continue
        columns.append(key)
        is_float = any(isinstance(row.get(key), (float, np.floating)) for row in rows)
        if f"{key}_tol" in seen or is_float:
            columns.append(f"{key}_tol")
    return columns


def write_csv(path: Path, rows: Iterable[dict[str, Any]]) -> Path:
    """Header row, comma separator, LF endings, floats as '{:.17g}'.

    Float columns without a tolerance get an empty *_tol column.
    """
    rows = list(rows)
    columns = _columns(rows)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(column)) for column in columns])
    return _atomic_write(path, buffer.getvalue().encode("utf-8"))


def jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: Path, payload: Any) -> Path:
    text = json.dumps(jsonable(payload), sort_keys=True, indent=2) + "\n"
    return _atomic_write(path, text.encode("utf-8"))


def write_svg(path: Path, figure: Figure) -> Path:
    buffer = io.BytesIO()
    figure.savefig(buffer, format="svg", metadata={"Date": None})
    return _atomic_write(path, buffer.getvalue())
