"""CSV and manifest helpers shared by the command line front end."""
from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np


class CsvParseError(ValueError):
    pass


def driver_header(T: int, d: int) -> list[str]:
    return [f"x_t{t}_d{j}" for t in range(1, T + 1) for j in range(1, d + 1)]


def cashflow_header(T: int) -> list[str]:
    return ["path_id"] + [f"zeta_t{t}" for t in range(1, T + 1)] + ["terminal"]


def write_matrix_csv(path, header, data) -> None:
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"data shape {data.shape} does not match {len(header)} columns")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_matrix_csv(path, header=None) -> tuple[list[str], np.ndarray]:
    """Parse a numeric CSV; errors name the offending row and column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            cols = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file") from None
        if header is not None and cols != list(header):
            raise CsvParseError(f"{path}: header {cols[:4]}... does not match expected {list(header)[:4]}...")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(cols):
                raise CsvParseError(f"{path}: row {lineno} has {len(row)} fields, expected {len(cols)}")
            vals = []
            for name, cell in zip(cols, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvParseError(f"{path}: row {lineno}, column {name}: cannot parse {cell!r}") from None
                if not np.isfinite(v):
                    raise CsvParseError(f"{path}: row {lineno}, column {name}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    return cols, np.array(rows, dtype=float).reshape(len(rows), len(cols))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_json(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
