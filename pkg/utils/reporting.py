import csv
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _atomic_write(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write text through a temporary file in the same directory, then rename."""
    _atomic_write(path, text.encode("utf-8"))


def atomic_write_bytes(path: PathLike, payload: bytes) -> None:
    _atomic_write(path, payload)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def write_json_report(path: PathLike, report: Dict[str, Any]) -> None:
    """Run report as indented JSON with sorted keys, so reruns are byte-identical."""
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True)
    atomic_write_text(path, text + "\n")
    logger.info(f"Report written to {path}")


def format_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue()


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    atomic_write_text(path, format_csv(header, rows))


class HistoryWriter:
    """Optimizer iterate history, streamed row by row and finalised atomically.

    Rows are appended to ``<path>.partial`` as they arrive so that an aborted
    run still leaves a readable history; ``close`` moves the complete table
    into place.
    """

    COLUMNS = (
        "stage", "iteration", "lambda", "objective", "tracking", "gradient_term",
        "tikhonov", "penalty", "grad_norm", "max_violation_K", "step",
    )

    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.partial = self.path.with_name(self.path.name + ".partial")
        self.rows: List[List[Any]] = []
        with open(self.partial, "w", encoding="utf-8") as handle:
            handle.write(",".join(self.COLUMNS) + "\n")

    def append(self, record: Dict[str, Any]) -> None:
        row = [record.get(column, "") for column in self.COLUMNS]
        self.rows.append(row)
        with open(self.partial, "a", encoding="utf-8") as handle:
            handle.write(format_csv(self.COLUMNS, [row]).split("\n", 1)[1])

    def close(self) -> None:
        write_csv(self.path, self.COLUMNS, self.rows)
        if self.partial.exists():
            self.partial.unlink()
