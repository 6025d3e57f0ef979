"""CSV and JSON serialization with bit-exact round trips.

Floats are written with Python's shortest round-trip representation, so
parsing a file back reproduces the original values bit for bit.  All writers
go through a temp-file-plus-rename so readers never see a partial file.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .density import EvaluationLedger, LedgerRecord
from .errors import FileFormatError


def fmt(value: float) -> str:
    """Shortest decimal string that round-trips the float exactly."""
    return repr(float(value))


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path: str | Path, obj) -> None:
    """Stable JSON: sorted keys, two-space indent, trailing newline."""
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _coord_names(p: int) -> list[str]:
    return [f"x{l}" for l in range(1, p + 1)]


@dataclass(frozen=True)
class DesignFile:
    points: np.ndarray
    logf: np.ndarray
    stages: np.ndarray


def write_design(
    path: str | Path, points: np.ndarray, logf: np.ndarray, stages: np.ndarray
) -> None:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, p = points.shape
    lines = [",".join(_coord_names(p) + ["logf", "stage"])]
    for i in range(n):
        row = [fmt(c) for c in points[i]]
        row.append(fmt(logf[i]))
        row.append(str(int(stages[i])))
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_ledger(path: str | Path, ledger: EvaluationLedger) -> None:
    if ledger.count == 0:
        raise FileFormatError("refusing to write an empty ledger")
    p = len(ledger.records[0].x)
    lines = [",".join(["seq", "stage"] + _coord_names(p) + ["logf", "duration_ms"])]
    for rec in ledger.records:
        row = [str(rec.seq), str(rec.stage)]
        row += [fmt(c) for c in rec.x]
        row.append(fmt(rec.logf))
        row.append(fmt(rec.duration_ms))
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_samples(
    path: str | Path, samples: np.ndarray, logf: np.ndarray, chain_ids: np.ndarray
) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n, p = samples.shape
    lines = [",".join(_coord_names(p) + ["logf", "chain"])]
    for i in range(n):
        row = [fmt(c) for c in samples[i]]
        row.append(fmt(logf[i]))
        row.append(str(int(chain_ids[i])))
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_rows(path: Path, expected_tail: list[str]) -> tuple[list[str], list[list[str]]]:
    """Read a CSV whose header is x1..xp followed by ``expected_tail`` columns."""
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise FileFormatError(f"{path}: empty file")
    header = rows[0]
    if header[-len(expected_tail):] != expected_tail or len(header) <= len(expected_tail):
        raise FileFormatError(
            f"{path}: expected header ending in {','.join(expected_tail)}, got {','.join(header)}"
        )
    body = rows[1:]
    if not body:
        raise FileFormatError(f"{path}: no data rows")
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FileFormatError(
                f"{path} line {i}: expected {len(header)} fields, got {len(row)}"
            )
    return header, body


def _cell_float(path: Path, header: list[str], lineno: int, col: int, cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise FileFormatError(
            f"{path} line {lineno} column '{header[col]}': not a number: {cell!r}"
        ) from None


def _cell_int(path: Path, header: list[str], lineno: int, col: int, cell: str) -> int:
    try:
        return int(cell)
    except ValueError:
        raise FileFormatError(
            f"{path} line {lineno} column '{header[col]}': not an integer: {cell!r}"
        ) from None


def read_design(path: str | Path) -> DesignFile:
    path = Path(path)
    header, body = _parse_rows(path, ["logf", "stage"])
    p = len(header) - 2
    points = np.empty((len(body), p))
    logf = np.empty(len(body))
    stages = np.empty(len(body), dtype=int)
    for i, row in enumerate(body):
        lineno = i + 2
        for l in range(p):
            points[i, l] = _cell_float(path, header, lineno, l, row[l])
        logf[i] = _cell_float(path, header, lineno, p, row[p])
        stages[i] = _cell_int(path, header, lineno, p + 1, row[p + 1])
    return DesignFile(points=points, logf=logf, stages=stages)


def read_ledger(path: str | Path) -> EvaluationLedger:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise FileFormatError(f"{path}: empty file")
    header = rows[0]
    if (
        len(header) < 5
        or header[:2] != ["seq", "stage"]
        or header[-2:] != ["logf", "duration_ms"]
    ):
        raise FileFormatError(f"{path}: unrecognized ledger header {','.join(header)}")
    p = len(header) - 4
    ledger = EvaluationLedger()
    for i, row in enumerate(rows[1:]):
        lineno = i + 2
        if len(row) != len(header):
            raise FileFormatError(
                f"{path} line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        seq = _cell_int(path, header, lineno, 0, row[0])
        if seq != i:
            raise FileFormatError(f"{path} line {lineno}: sequence {seq} out of order")
        stage = _cell_int(path, header, lineno, 1, row[1])
        x = np.array(
            [_cell_float(path, header, lineno, 2 + l, row[2 + l]) for l in range(p)]
        )
        logf = _cell_float(path, header, lineno, 2 + p, row[2 + p])
        duration = _cell_float(path, header, lineno, 3 + p, row[3 + p])
        ledger.records.append(
            LedgerRecord(seq=seq, stage=stage, x=x, logf=logf, duration_ms=duration)
        )
    if ledger.count == 0:
        raise FileFormatError(f"{path}: no data rows")
    return ledger


def read_samples(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = Path(path)
    header, body = _parse_rows(path, ["logf", "chain"])
    p = len(header) - 2
    samples = np.empty((len(body), p))
    logf = np.empty(len(body))
    chain_ids = np.empty(len(body), dtype=int)
    for i, row in enumerate(body):
        lineno = i + 2
        for l in range(p):
            samples[i, l] = _cell_float(path, header, lineno, l, row[l])
        logf[i] = _cell_float(path, header, lineno, p, row[p])
        chain_ids[i] = _cell_int(path, header, lineno, p + 1, row[p + 1])
    return samples, logf, chain_ids


def ledger_digest(ledger: EvaluationLedger) -> str:
    """Order-sensitive SHA-256 over the evaluated points and their values."""
    lines = []
    for rec in ledger.records:
        lines.append(",".join([fmt(c) for c in rec.x] + [fmt(rec.logf)]))
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()


def point_stages(points: np.ndarray, ledger: EvaluationLedger) -> np.ndarray:
    """Stage at which each design point was first evaluated (exact match)."""
    keys = {}
    for rec in ledger.records:
        keys.setdefault(rec.x.tobytes(), rec.stage)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    stages = np.empty(len(points), dtype=int)
    for i, row in enumerate(points):
        stage = keys.get(row.tobytes())
        if stage is None:
            raise FileFormatError(f"design point {i} not found in the ledger")
        stages[i] = stage
    return stages
