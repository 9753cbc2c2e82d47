"""File helpers: atomic writes and exact float formatting."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17 significant digits; ``float(fmt(x)) == x`` for every finite double."""
    return "%.17g" % float(x)


def atomic_write_text(path, text: str):
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_jsonable, allow_nan=True) + "\n"


def write_json(path, payload):
    atomic_write_text(path, dumps(payload))


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def csv_text(columns: dict) -> str:
    """Comma-separated table with a header row and LF line endings."""
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n_rows = len(arrays[0]) if arrays else 0
    if any(len(a) != n_rows for a in arrays):
        raise ValueError("all columns must have the same length")
    lines = [",".join(names)]
    for i in range(n_rows):
        lines.append(",".join(_cell(a[i]) for a in arrays))
    return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, (str, np.str_)):
        return str(v)
    if v is None:
        return ""
    return fmt(v)


def write_csv(path, columns: dict):
    atomic_write_text(path, csv_text(columns))


def read_csv(path) -> dict:
    """Read a numeric CSV written by :func:`write_csv` into float arrays."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header:
            raise ValueError(f"{path}: missing header row")
        names = header.split(",")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    for i, row in enumerate(rows, start=2):
        if len(row) != len(names):
            raise ValueError(f"{path}:{i}: expected {len(names)} fields, got {len(row)}")
    data = np.array([[float(v) for v in row] for row in rows], dtype=float).reshape(-1, len(names))
    return {name: data[:, j] for j, name in enumerate(names)}


def jsonl_text(records) -> str:
    return "".join(json.dumps(r, sort_keys=True, default=_jsonable, allow_nan=True) + "\n"
                   for r in records)


def write_jsonl(path, records):
    atomic_write_text(path, jsonl_text(records))


def append_jsonl(path, record):
    """Append one record; the whole file is rewritten atomically."""
    path = Path(path)
    old = path.read_text(encoding="utf-8") if path.exists() else ""
    atomic_write_text(path, old + jsonl_text([record]))


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
