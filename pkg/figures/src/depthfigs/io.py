"""CSV loading and schema checks for the figure scripts.

The experiment CSVs are flat tables whose header names are the
contract; each figure kind needs a different subset of columns, and
anything missing must fail loudly before matplotlib is touched.
"""

import csv
import math

import numpy as np


class SchemaError(ValueError):
    """The input CSV cannot drive the requested figure."""


def load_table(path) -> dict:
    """Read a CSV into ``{column: list[str]}``.

    Short rows are padded with empty strings so ragged files still
    key cleanly by header name.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file (no header row)") from None
        rows = list(reader)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return {
        name: [row[i] if i < len(row) else "" for row in rows]
        for i, name in enumerate(header)
    }


def require_columns(table: dict, names) -> None:
    missing = [n for n in names if n not in table]
    if missing:
        raise SchemaError("missing columns: " + ", ".join(missing))


def numeric(table: dict, name: str, default: float = math.nan) -> np.ndarray:
    """One column as floats; empty cells become ``default``."""
    column = table[name]
    out = np.empty(len(column))
    for i, cell in enumerate(column):
        try:
            out[i] = float(cell) if cell != "" else default
        except ValueError:
            raise SchemaError(
                f"column {name!r} row {i + 1}: {cell!r} is not numeric"
            ) from None
    return out


def matches(table: dict, name: str, value: str) -> np.ndarray:
    return np.array([cell == value for cell in table[name]], dtype=bool)
