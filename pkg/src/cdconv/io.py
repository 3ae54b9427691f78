"""Artifact writers: CSV with fixed float formatting, JSON, atomic replace."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def fmt(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def atomic_write_text(path, text: str) -> Path:
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
    return path


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    s = fmt(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path, header, rows) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json_text(obj))


def trajectory_rows(traj):
    """Rows ``t, theta_1..d, gcd_1..d``; the gradient cells are empty at ``t = 0``."""
    d = traj.thetas.shape[1]
    header = ["t"] + [f"theta_{j + 1}" for j in range(d)] + [f"gcd_{j + 1}" for j in range(d)]
    rows = []
    for t, th in enumerate(traj.thetas):
        g = traj.cd_grads[t - 1] if t > 0 else [None] * d
        rows.append([t, *th, *g])
    return header, rows


def write_trajectory(path, traj) -> Path:
    header, rows = trajectory_rows(traj)
    return write_csv(path, header, rows)


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV reader for trajectory-style files; empty cells become NaN."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        rows = [[float(c) if c else np.nan for c in line.rstrip("\n").split(",")] for line in fh]
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


REPORT_FIELDS = ("check", "inputs", "bound", "estimate", "std_error", "replicates", "pass", "flags")


def report_csv_text(records: list[dict]) -> str:
    rows = []
    for r in records:
        rows.append([r["check"], json.dumps(r["inputs"], separators=(",", ":")), r["bound"],
                     r["estimate"], r["std_error"], r["replicates"],
                     "" if r["pass"] is None else r["pass"], ";".join(r["flags"])])
    return csv_text(REPORT_FIELDS, rows)
