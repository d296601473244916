"""Versioned CSV tables and JSON metadata sidecars."""

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import ConfigError

SCHEMA_VERSION = 1
_MAGIC = "# schema_version="


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def write_csv(path, header, rows):
    """Write ``rows`` under ``header`` with a schema-version first line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"{_MAGIC}{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path, expect_version=SCHEMA_VERSION):
    """Read a table written by :func:`write_csv`; returns ``(header, rows)``.

    Raises :class:`ConfigError` if the schema line is missing or differs.
    """
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(_MAGIC):
            raise ConfigError(f"{path}: missing schema_version line")
        version = first[len(_MAGIC):]
        if version != str(expect_version):
            raise ConfigError(f"{path}: schema_version {version} != {expect_version}")
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader]
    return header, rows


def read_columns(path):
    """Numeric columns of a versioned CSV as a dict of float arrays (non-numeric kept as str)."""
    header, rows = read_csv(path)
    out = {}
    for i, name in enumerate(header):
        col = [r[i] for r in rows]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_meta(path, meta):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"schema_version": SCHEMA_VERSION, **_jsonable(meta)}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def read_meta(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {payload.get('schema_version')}")
    return payload
