"""CSV and JSON helpers shared by the instance store and the CLI.

Floats are written with 17 significant digits so that IEEE doubles
round-trip exactly; JSON is emitted with sorted keys for stable diffs.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


def write_matrix_csv(path, a, header=None) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in a:
            fh.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_matrix_csv(path, skip_header=False) -> np.ndarray:
    rows = []
    with open(path) as fh:
        lines = fh.read().strip().splitlines()
    if skip_header and lines:
        lines = lines[1:]
    width = None
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        vals = [float(v) for v in line.split(",")]
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ValueError(f"ragged CSV at line {i + 1}: {len(vals)} fields, expected {width}")
        rows.append(vals)
    if not rows:
        raise ValueError(f"empty CSV file: {path}")
    return np.asarray(rows, dtype=float)


def write_vector_csv(path, v, header=None) -> None:
    write_matrix_csv(path, np.asarray(v, dtype=float).reshape(-1, 1),
                     header=[header] if header else None)


def read_vector_csv(path, skip_header=False) -> np.ndarray:
    return read_matrix_csv(path, skip_header=skip_header).ravel()


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())
