"""Readers and writers for waveform, experiment, trajectory and event files."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .hybrid import Trajectory, VoltageWaveform
from .identify import ExperimentRecord
from .magnetics import InputError

EXPERIMENT_HEADER = ("t_s", "v_V", "i_A", "phi_Wb")
WAVEFORM_HEADER = ("t_s", "v_V")


def read_columns(path: str | Path, required: Sequence[str], optional: Sequence[str] = ()) -> dict[str, npt.NDArray]:
    """
    Numeric CSV with a header row. Columns may appear in any order; unknown columns are rejected.
    Errors carry the file name and line number.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as ex:
        raise InputError(f"{path}: {ex}") from ex
    return parse_columns(text, str(path), required, optional)


def parse_columns(text: str, name: str, required: Sequence[str], optional: Sequence[str] = ()) -> dict[str, npt.NDArray]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise InputError(f"{name}:1: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in required if c not in header]
    unknown = [c for c in header if c not in required and c not in optional]
    if missing or unknown or len(set(header)) != len(header):
        raise InputError(
            f"{name}:1: expected columns {','.join(required)}"
            + (f" (optional {','.join(optional)})" if optional else "")
            + f", got {','.join(header)}"
        )
    values: list[list[float]] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"{name}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            bad = next(c for c in row if not _is_float(c))
            raise InputError(f"{name}:{lineno}: not a number: {bad!r}") from None
        if not all(np.isfinite(values[-1])):
            raise InputError(f"{name}:{lineno}: non-finite value")
    arr = np.array(values, dtype=np.float64).reshape(-1, len(header))
    return {h: arr[:, k].copy() for k, h in enumerate(header)}


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_waveform(path: str | Path) -> VoltageWaveform:
    cols = read_columns(path, WAVEFORM_HEADER)
    if cols["t_s"].size == 0:
        raise InputError(f"{path}: no samples")
    try:
        return VoltageWaveform(cols["t_s"], cols["v_V"])
    except ValueError as ex:
        raise InputError(f"{path}: {ex}") from ex


def write_waveform(path: str | Path, t: npt.ArrayLike, v: npt.ArrayLike, header: Sequence[str] = WAVEFORM_HEADER) -> None:
    _write_table(path, header, np.column_stack([t, v]))


def _write_table(path: str | Path, header: Sequence[str], data: npt.NDArray, int_cols: Sequence[int] = ()) -> None:
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in data:
        out.write(",".join(str(int(x)) if k in int_cols else repr(float(x)) for k, x in enumerate(row)) + "\n")
    Path(path).write_text(out.getvalue())


def write_trajectory(path: str | Path, traj: Trajectory) -> None:
    cols = [Trajectory.COLUMNS.index(c) for c in ("t", "q", "H", "z", "vz", "i", "phi", "F", "iec")]
    _write_table(path, Trajectory.CSV_COLUMNS, traj.records[:, cols], int_cols=(1,))


def write_events(path: str | Path, traj: Trajectory) -> None:
    Path(path).write_text("".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in traj.events))


def read_experiment(path: str | Path) -> ExperimentRecord:
    """Experiment CSV plus its JSON sidecar (same name, .json suffix) holding gap_m, wave and level."""
    path = Path(path)
    cols = read_columns(path, ("t_s", "i_A", "phi_Wb"), ("v_V",))
    side = path.with_suffix(".json")
    try:
        meta = json.loads(side.read_text())
    except OSError as ex:
        raise InputError(f"{side}: metadata sidecar missing: {ex}") from ex
    except json.JSONDecodeError as ex:
        raise InputError(f"{side}:{ex.lineno}: invalid JSON: {ex.msg}") from ex
    if not isinstance(meta, dict) or "gap_m" not in meta:
        raise InputError(f"{side}: gap_m is required")
    try:
        return ExperimentRecord(
            cols["t_s"], cols["i_A"], cols["phi_Wb"], float(meta["gap_m"]), cols.get("v_V"),
            str(meta.get("wave", "")), float(meta.get("level", 0.0)),
        )
    except (TypeError, ValueError) as ex:
        raise InputError(f"{path}: {ex}") from ex


def write_experiment(path: str | Path, rec: ExperimentRecord) -> None:
    path = Path(path)
    if rec.v is None:
        _write_table(path, ("t_s", "i_A", "phi_Wb"), np.column_stack([rec.t, rec.i, rec.phi]))
    else:
        _write_table(path, EXPERIMENT_HEADER, np.column_stack([rec.t, rec.v, rec.i, rec.phi]))
    meta = {"gap_m": rec.gap, "wave": rec.wave, "level": rec.level}
    path.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True) + "\n")
