"""CSV loading with hard schema checks.

The plot scripts never recompute physics: every number comes out of the
CSV, and a missing or malformed column is a non-zero exit naming the
offending column.
"""

import csv
from pathlib import Path


class SchemaError(ValueError):
    def __init__(self, column: str, detail: str):
        super().__init__(f"column {column!r}: {detail}")
        self.column = column


def read_rows(path, required: tuple) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError("<header>", "empty file")
        for col in required:
            if col not in reader.fieldnames:
                raise SchemaError(col, "missing from header")
        rows = list(reader)
    if not rows:
        raise SchemaError("<body>", "no data rows")
    return rows


def floats(rows, column: str, allow_blank: bool = False) -> list:
    out = []
    for i, row in enumerate(rows):
        raw = row[column]
        if raw == "" and allow_blank:
            out.append(None)
            continue
        try:
            out.append(float(raw))
        except ValueError:
            raise SchemaError(column, f"non-numeric value {raw!r} in row {i + 1}")
    return out


def bools(rows, column: str) -> list:
    out = []
    for i, row in enumerate(rows):
        raw = row[column].strip().lower()
        if raw not in ("true", "false"):
            raise SchemaError(column, f"non-boolean value {raw!r} in row {i + 1}")
        out.append(raw == "true")
    return out
