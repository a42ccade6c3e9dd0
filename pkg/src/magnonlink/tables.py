"""CSV result tables with a commented metadata header.

Values are written with shortest round-trip formatting, so re-reading a
table reproduces every float bit-exactly; runs with identical configs and
seeds produce byte-identical files (no timestamps in the header).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TableError(ValueError):
    pass


@dataclass
class ResultTable:
    """Rectangular real-valued table; the first column of every time series
    is the sample time."""

    columns: list[str]
    rows: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if self.rows.size and self.rows.shape[1] != len(self.columns):
            raise TableError(
                f"row width {self.rows.shape[1]} does not match {len(self.columns)} columns"
            )


def write_table(table: ResultTable, path: str | Path) -> Path:
    path = Path(path)
    lines = []
    for key, value in table.metadata.items():
        if "\n" in str(value):
            raise TableError(f"metadata value for {key!r} must be single-line")
        lines.append(f"# {key}: {value}")
    lines.append(",".join(table.columns))
    for row in table.rows:
        lines.append(",".join(repr(float(x)) for x in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path: str | Path) -> ResultTable:
    path = Path(path)
    metadata: dict[str, str] = {}
    columns: list[str] | None = None
    rows: list[list[float]] = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            key, _, value = body.partition(":")
            metadata[key.strip()] = value.strip()
        elif columns is None:
            columns = [c.strip() for c in line.split(",")]
        else:
            rows.append([float(x) for x in line.split(",")])
    if columns is None:
        raise TableError(f"{path} contains no header row")
    data = np.asarray(rows, dtype=float) if rows else np.empty((0, len(columns)))
    return ResultTable(columns, data, metadata)


def write_summary(summary: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")
