import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .in_schemas import ProvenanceHeader, ReportEnvelope


def to_jsonable(value: Any) -> Any:
    """
    Convert numpy containers and scalars into plain JSON types.

    Non-finite floats become None so reports stay strict JSON.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, "model_dump"):
        return to_jsonable(value.model_dump())
    return value


def canonical_json(payload: Any) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, separators=(",", ":"))


def config_hash(payload: Any) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()


def write_json(path: Path, header: ProvenanceHeader, body: Any) -> Path:
    """
    Write a JSON report with its provenance header.

    Args:
        path (Path): Destination file.
        header (ProvenanceHeader): Provenance of the run.
        body (Any): Report payload (pydantic models and numpy values allowed).

    Returns:
        Path: The written path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    envelope = ReportEnvelope(header=header, body=to_jsonable(body))
    path.write_text(
        json.dumps(envelope.model_dump(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return path


def _cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(
    path: Path,
    header: ProvenanceHeader,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    extra: Any = None,
) -> Path:
    """
    Write an RFC-4180 CSV plus a sidecar ``<stem>.header.json``.

    Args:
        path (Path): Destination CSV file.
        header (ProvenanceHeader): Provenance of the run.
        columns (Sequence[str]): Column names.
        rows (Iterable[Sequence[Any]]): Row values; floats are written losslessly.
        extra (Any): Additional header fields (system parameters, grid, ...).

    Returns:
        Path: The written CSV path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    write_json(path.with_name(path.stem + ".header.json"), header, {"columns": list(columns), **(to_jsonable(extra) or {})})
    return path


def read_csv(path: Path) -> tuple:
    with Path(path).open(newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        columns = next(reader)
        rows = [row for row in reader]
    return columns, rows
