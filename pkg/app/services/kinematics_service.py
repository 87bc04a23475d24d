"""
Motion preprocessing: 30 FPS resampling, body-relative (BR) encoding,
body-relative-velocity (BRV) differencing and sliding windows.

BR reference frame = HMD position + yaw-only heading. The HMD keeps its
residual (pitch/roll) rotation as four features; controllers are re-expressed
in the heading frame. BRV = per-frame differences of BR features, quaternions
sign-aligned first.
"""

from typing import List, Literal, Optional, Tuple

import numpy as np

from app.model.feature_model import N_FEATURES, TARGET_FPS, EncodingConfig, FeatureStream, FeatureWindow
from app.model.recording_model import Recording
from app.services import quaternion_service as quat
from app.utils.errors import TooShort

# |pitch| above this makes the forward-vector heading unreliable
GIMBAL_PITCH_DEG = 89.0

ReferenceMode = Literal["heading", "full"]


def resampled_frame_count(duration_s: float, target_fps: int = TARGET_FPS) -> int:
    """floor(duration x fps) + 1, tolerant of float round-off in the product."""
    return int(np.floor(duration_s * target_fps + 1e-6)) + 1


def resample_to_30fps(recording: Recording, target_fps: int = TARGET_FPS) -> Recording:
    """
    Resample onto t = k / target_fps covering [0, duration]: positions linearly
    interpolated, rotations slerped between the bracketing source frames.
    """
    n = recording.n_frames
    if n < 2:
        raise TooShort(f"recording {recording.identity} has {n} frame(s); need at least 2")
    t = recording.t - recording.t[0]
    duration = float(t[-1])
    n_out = resampled_frame_count(duration, target_fps)
    if n_out < 2:
        raise TooShort(f"recording {recording.identity} lasts {duration:.4f}s; shorter than two output frames")
    tq = np.arange(n_out, dtype=np.float64) / target_fps

    pos = np.empty((n_out, 3, 3))
    for d in range(3):
        for axis in range(3):
            pos[:, d, axis] = np.interp(tq, t, recording.pos[:, d, axis])

    lo = np.clip(np.searchsorted(t, tq, side="right") - 1, 0, n - 2)
    span = t[lo + 1] - t[lo]
    alpha = np.clip((tq - t[lo]) / span, 0.0, 1.0)
    rot = quat.slerp(recording.rot[lo], recording.rot[lo + 1], alpha[:, None])

    return recording.with_arrays(tq, pos, rot, nominal_rate=float(target_fps))


def heading_yaw(hmd_rot: np.ndarray) -> np.ndarray:
    """
    Yaw of the HMD per frame; frames with |pitch| > 89 degrees hold the yaw of
    the last non-degenerate frame (leading ones take the first valid yaw).
    """
    yaw = quat.yaw_of(hmd_rot)
    valid = np.abs(quat.pitch_of(hmd_rot)) <= np.deg2rad(GIMBAL_PITCH_DEG)
    if valid.all():
        return yaw
    if not valid.any():
        return np.zeros_like(yaw)
    idx = np.where(valid, np.arange(yaw.shape[0]), -1)
    idx = np.maximum.accumulate(idx)
    idx[idx < 0] = int(np.argmax(valid))
    return yaw[idx]


def reference_rotation(hmd_rot: np.ndarray, mode: ReferenceMode = "heading") -> np.ndarray:
    if mode == "full":
        return hmd_rot
    return quat.yaw_quat(heading_yaw(hmd_rot))


def encode_body_relative(recording: Recording, mode: ReferenceMode = "heading") -> np.ndarray:
    """
    BR tuples, (N, 18): hmd residual rot, left pos, left rot, right pos, right rot.
    The HMD position is the frame origin and is dropped.
    """
    hmd_pos = recording.pos[:, 0]
    ref_inv = quat.conjugate(reference_rotation(recording.rot[:, 0], mode))

    parts = [quat.canonicalize(quat.multiply(ref_inv, recording.rot[:, 0]))]
    for d in (1, 2):
        parts.append(quat.rotate_vec(ref_inv, recording.pos[:, d] - hmd_pos))
        parts.append(quat.canonicalize(quat.multiply(ref_inv, recording.rot[:, d])))
    return np.concatenate(parts, axis=1)


_ROT_SLICES = (slice(0, 4), slice(7, 11), slice(14, 18))


def encode_brv(br_frames: np.ndarray) -> np.ndarray:
    """First differences of BR frames, (N-1, 18)."""
    br = np.asarray(br_frames, dtype=np.float64)
    if br.ndim != 2 or br.shape[1] != N_FEATURES:
        raise ValueError(f"BR frames must be (N, {N_FEATURES}); got {br.shape}")
    if br.shape[0] < 2:
        raise TooShort(f"need at least 2 BR frames; got {br.shape[0]}")
    aligned = br.copy()
    for s in _ROT_SLICES:
        aligned[:, s] = quat.align_signs(br[:, s], axis=0)
    return np.diff(aligned, axis=0)


def window_count(length: int, window_size: int, frame_step: int) -> int:
    if length < window_size:
        return 0
    return (length - window_size) // frame_step + 1


def make_windows(
    features: np.ndarray,
    config: EncodingConfig,
    user: str,
    app: str,
    session: str = "",
    offset: int = 0,
) -> List[FeatureWindow]:
    """
    Windows start at 0, S, 2S, ...; the trailing partial window is dropped.
    `offset` shifts the reported start_frame (segment position in the stream).
    """
    L = int(features.shape[0])
    W, S = config.window_size, config.frame_step
    if L < W:
        raise TooShort(f"feature sequence of {L} frames is shorter than window size {W}")
    feats = np.asarray(features, dtype=np.float32)
    return [
        FeatureWindow(frames=feats[s:s + W], user=user, app=app, start_frame=offset + s, session=session)
        for s in range(0, L - W + 1, S)
    ]


def encode_feature_stream(
    recording: Recording,
    frame_range: Optional[Tuple[int, int]] = None,
    mode: ReferenceMode = "heading",
    target_fps: int = TARGET_FPS,
) -> FeatureStream:
    """Resample -> BR -> BRV for a recording, or for a [start, end) range of its 30 FPS frames."""
    rec30 = resample_to_30fps(recording, target_fps)
    if frame_range is not None:
        start, stop = frame_range
        rec30 = rec30.slice_frames(start, min(stop, rec30.n_frames))
        if rec30.n_frames < 2:
            raise TooShort(f"segment {frame_range} of {recording.identity} has fewer than 2 frames")
    brv = encode_brv(encode_body_relative(rec30, mode))
    return FeatureStream(
        features=brv.astype(np.float32),
        user=recording.user,
        app=recording.app,
        session=recording.session,
        segment=tuple(frame_range) if frame_range is not None else None,
    )


def windows_from_stream(stream: FeatureStream, config: EncodingConfig) -> List[FeatureWindow]:
    offset = stream.segment[0] if stream.segment else 0
    return make_windows(stream.features, config, stream.user, stream.app, stream.session, offset)


def preprocess_recording(
    recording: Recording,
    config: EncodingConfig,
    frame_range: Optional[Tuple[int, int]] = None,
) -> List[FeatureWindow]:
    return windows_from_stream(encode_feature_stream(recording, frame_range, target_fps=config.target_fps), config)
