from typing import Optional

import numpy as np

from app.model.recording_model import Recording
from app.services import quaternion_service as quat
from app.utils.errors import DegenerateQuaternion, EmptyRecording, MalformedRow, NonMonotonicTime

# Share of regressing timestamps tolerated before a stream is rejected.
MAX_REGRESSION_SHARE = 0.01


def validate_recording(recording: Recording, max_regression_share: float = MAX_REGRESSION_SHARE) -> Recording:
    """
    Normalize a raw stream into a valid Recording: quaternions unit-length,
    timestamps strictly increasing (stable sort, duplicates keep the first
    occurrence). Idempotent on an already valid recording.
    """
    n = recording.n_frames
    if n == 0:
        raise EmptyRecording(f"recording {recording.identity} has no frames")

    t = np.asarray(recording.t, dtype=np.float64)
    pos = np.asarray(recording.pos, dtype=np.float64)
    rot = np.asarray(recording.rot, dtype=np.float64)
    if pos.shape != (n, 3, 3) or rot.shape != (n, 3, 4):
        raise MalformedRow(0, f"pose arrays have shapes {pos.shape}, {rot.shape}")

    bad = ~np.isfinite(t) | (t < 0) | ~np.isfinite(pos).all(axis=(1, 2)) | ~np.isfinite(rot).all(axis=(1, 2))
    if bad.any():
        row = int(np.argmax(bad))
        raise MalformedRow(row, "non-finite value or negative timestamp")

    try:
        rot = quat.normalize(rot)
    except DegenerateQuaternion:
        row = int(np.argmax((np.linalg.norm(rot, axis=-1) < 1e-8).any(axis=1)))
        raise MalformedRow(row, "zero-norm rotation")

    regress = int(np.sum(np.diff(t) < 0))
    if regress > max_regression_share * n:
        raise NonMonotonicTime(
            f"{regress} of {n} timestamps regress in {recording.identity} (limit {max_regression_share:.0%})"
        )

    order = np.argsort(t, kind="stable")
    t, pos, rot = t[order], pos[order], rot[order]
    keep = np.concatenate([[True], np.diff(t) > 0])
    return recording.with_arrays(t[keep], pos[keep], rot[keep])


def estimate_rate(t: np.ndarray, fallback: Optional[float] = None) -> float:
    """Median sampling rate of a timestamp column."""
    if t.shape[0] < 2:
        return float(fallback or 0.0)
    dt = np.median(np.diff(t))
    return float(1.0 / dt) if dt > 0 else float(fallback or 0.0)
