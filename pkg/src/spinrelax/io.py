"""CSV and key=value config file handling."""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .errors import SpinRelaxError
from .fitting import TimeTrace


class DataFileError(SpinRelaxError):
    """A data file is missing, empty or malformed; ``row`` is 1-based when known."""

    def __init__(self, message, row=None):
        self.row = row
        super().__init__(f"{message} (row {row})" if row is not None else message)


class ConfigError(SpinRelaxError):
    """Bad configuration file content or unknown keys."""


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return "" if value is None else str(value)


def comment_header(command: str, params: Mapping) -> str:
    lines = [f"# spinrelax {__version__}", f"# command = {command}"]
    for key in sorted(params):
        lines.append(f"# {key} = {format_value(params[key])}")
    return "\n".join(lines) + "\n"


def parse_header(lines: Iterable[str]) -> dict:
    out = {}
    for line in lines:
        body = line.lstrip("#").strip()
        if "=" in body:
            key, val = body.split("=", 1)
            out[key.strip()] = val.strip()
        elif ":" in body:
            key, val = body.split(":", 1)
            out[key.strip()] = val.strip()
    return out


def read_table(path, required: Sequence[str] | None = None) -> tuple[dict, list[str], np.ndarray]:
    """Read a comment-headed numeric CSV; returns (header, columns, data rows)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFileError(f"cannot read {path}: {exc.strerror}") from None
    comments, rows, columns = [], [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            comments.append(stripped)
            continue
        fields = next(csv.reader([stripped]))
        if columns is None:
            columns = [f.strip() for f in fields]
            continue
        if len(fields) != len(columns):
            raise DataFileError(f"{path}: expected {len(columns)} fields, got {len(fields)}", lineno)
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            raise DataFileError(f"{path}: non-numeric value", lineno) from None
    if columns is None or not rows:
        raise DataFileError(f"{path}: no data rows")
    if required:
        missing = [c for c in required if c not in columns]
        if missing:
            raise DataFileError(f"{path}: missing column(s) {missing}")
    return parse_header(comments), columns, np.array(rows)


def read_trace(path) -> TimeTrace:
    header, cols, data = read_table(path)
    if "time_ns" not in cols:
        raise DataFileError(f"{path}: missing column 'time_ns'")
    t = data[:, cols.index("time_ns")]
    if "real" in cols:
        values = data[:, cols.index("real")]
        if "imag" in cols:
            values = values + 1j * data[:, cols.index("imag")]
    elif "value" in cols:
        values = data[:, cols.index("value")]
    else:
        raise DataFileError(f"{path}: need 'real'[,'imag'] or 'value' columns")
    try:
        return TimeTrace(t, values, header)
    except ValueError as exc:
        raise DataFileError(f"{path}: {exc}") from None


def read_xy(path) -> tuple[dict, np.ndarray, np.ndarray]:
    header, cols, data = read_table(path, required=["temperature_K", "value"])
    return header, data[:, cols.index("temperature_K")], data[:, cols.index("value")]


def write_trace(path, trace: TimeTrace, header: str):
    buf = io.StringIO()
    buf.write(header)
    buf.write("time_ns,real,imag\n")
    values = np.asarray(trace.values, dtype=complex)
    for t, v in zip(trace.times, values):
        buf.write(f"{t:.6f},{v.real:.12e},{v.imag:.12e}\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_rows(path, header: str, columns: Sequence[str], rows, fmt: str = ".10g"):
    buf = io.StringIO()
    buf.write(header)
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else format(v, fmt) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def parse_config_file(path) -> dict:
    """``key = value`` lines with '#' comments; keys use '-' or '_'."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = val.strip()
    return out
