"""
Wide-CSV recording files.

One header row, then one row per frame:
t, hmd pose, left pose, right pose (each pose = px, py, pz, rx, ry, rz, rw).
File names follow `<user>__<app>__<session>.csv` so identity survives a round trip.
"""

import re
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.model.recording_model import AppLabel, Recording
from app.services.recording_service import estimate_rate, validate_recording
from app.utils.errors import EmptyRecording, IoFailure, MalformedRow, SchemaMismatch

_POSE_SUFFIXES = ["px", "py", "pz", "rx", "ry", "rz", "rw"]
_DEVICE_PREFIXES = ["hmd", "l", "r"]

RECORDING_COLUMNS: List[str] = ["t"] + [f"{d}_{s}" for d in _DEVICE_PREFIXES for s in _POSE_SUFFIXES]

_FLOAT_FORMAT = "%.10g"
_LINE_RE = re.compile(r"line (\d+)")


def recording_filename(user: str, app: str, session: str) -> str:
    return f"{user}__{AppLabel.normalize(app)}__{session}.csv"


def identity_from_filename(path: Union[str, Path]) -> Tuple[str, str, str]:
    parts = Path(path).stem.split("__")
    if len(parts) != 3 or not all(parts):
        raise ValueError(f"cannot derive (user, app, session) from file name '{Path(path).name}'")
    return parts[0], AppLabel.normalize(parts[1]), parts[2]


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except FileNotFoundError as exc:
        raise IoFailure(f"recording not found: {path}") from exc
    except pd.errors.EmptyDataError as exc:
        raise EmptyRecording(f"recording {path} has no header") from exc
    except pd.errors.ParserError as exc:
        m = _LINE_RE.search(str(exc))
        row = int(m.group(1)) - 2 if m else -1
        raise MalformedRow(row, f"wrong column count in {path.name}") from exc
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def parse_recording(
    path: Union[str, Path],
    expected_schema: Sequence[str] = RECORDING_COLUMNS,
    user: Optional[str] = None,
    app: Optional[str] = None,
    session: Optional[str] = None,
    nominal_rate: Optional[float] = None,
) -> Recording:
    path = Path(path)
    df = _read_frame(path)

    columns = [c.strip() for c in df.columns]
    if columns != list(expected_schema):
        raise SchemaMismatch(columns, expected_schema)
    if df.empty:
        raise EmptyRecording(f"recording {path} has a header but no rows")

    values = df.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce")).to_numpy(dtype=np.float64)
    bad = np.isnan(values).any(axis=1)
    if bad.any():
        raise MalformedRow(int(np.argmax(bad)), f"unparseable or missing value in {path.name}")

    if user is None or app is None or session is None:
        f_user, f_app, f_session = identity_from_filename(path)
        user, app, session = user or f_user, app or f_app, session or f_session

    t = values[:, 0]
    poses = values[:, 1:].reshape(-1, 3, 7)
    raw = Recording(
        user=str(user),
        app=AppLabel.normalize(app),
        session=str(session),
        t=t,
        pos=poses[:, :, :3].copy(),
        rot=poses[:, :, 3:].copy(),
        nominal_rate=float(nominal_rate) if nominal_rate else 0.0,
    )
    rec = validate_recording(raw)
    if not nominal_rate:
        rec = rec.with_arrays(rec.t, rec.pos, rec.rot, nominal_rate=estimate_rate(rec.t))
    return rec


def recording_to_frame(recording: Recording) -> pd.DataFrame:
    n = recording.n_frames
    wide = np.concatenate([recording.pos, recording.rot], axis=2).reshape(n, 21)
    data = np.concatenate([recording.t[:, None], wide], axis=1)
    return pd.DataFrame(data, columns=RECORDING_COLUMNS)


def write_recording(recording: Recording, path: Union[str, Path]) -> Path:
    if recording.n_frames == 0:
        raise EmptyRecording(f"refusing to write empty recording {recording.identity}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        recording_to_frame(recording).to_csv(path, index=False, float_format=_FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
