"""
Quaternion algebra on (x, y, z, w) arrays.

All functions broadcast over leading axes: a (..., 4) array is a batch of
quaternions, a (..., 3) array a batch of vectors. Axis convention: +Y up,
-Z forward, so yaw is a rotation about Y and pitch about X (positive = looking up).
"""

from typing import Union

import numpy as np

from app.utils.errors import DegenerateQuaternion

ArrayLike = Union[np.ndarray, list, tuple]

IDENTITY = np.array([0.0, 0.0, 0.0, 1.0])
FORWARD = np.array([0.0, 0.0, -1.0])
UP = np.array([0.0, 1.0, 0.0])

_MIN_NORM = 1e-8


def normalize(q: ArrayLike) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise DegenerateQuaternion("quaternion has non-finite components")
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _MIN_NORM):
        raise DegenerateQuaternion(f"quaternion norm below {_MIN_NORM}")
    return q / n


def multiply(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    """Hamilton product a*b (apply b, then a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack([
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
        aw * bw - ax * bx - ay * by - az * bz,
    ], axis=-1)


def conjugate(q: ArrayLike) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([-1.0, -1.0, -1.0, 1.0])


def inverse(q: ArrayLike) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n2 = np.sum(q * q, axis=-1, keepdims=True)
    if np.any(n2 < _MIN_NORM ** 2):
        raise DegenerateQuaternion("cannot invert a zero quaternion")
    return conjugate(q) / n2


def rotate_vec(q: ArrayLike, v: ArrayLike) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion(s) q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., :3]
    w = q[..., 3:4]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def from_axis_angle(axis: ArrayLike, angle: Union[float, np.ndarray]) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = np.asarray(angle, dtype=np.float64)[..., None] / 2.0
    return np.concatenate([axis * np.sin(half), np.cos(half)], axis=-1)


def yaw_quat(yaw: Union[float, np.ndarray]) -> np.ndarray:
    return from_axis_angle(UP, yaw)


def slerp(a: ArrayLike, b: ArrayLike, t: Union[float, np.ndarray]) -> np.ndarray:
    """
    Spherical interpolation, t in [0, 1]. Takes the short arc: when dot(a, b) < 0
    one operand is negated.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any((t < 0.0) | (t > 1.0)):
        raise ValueError("slerp parameter must lie in [0, 1]")
    dot = np.sum(a * b, axis=-1, keepdims=True)
    b = np.where(dot < 0.0, -b, b)
    dot = np.abs(dot)
    tt = t[..., None] if t.ndim else t

    near = dot > 0.9995
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin_theta = np.sin(theta)
    safe_sin = np.where(near, 1.0, sin_theta)
    wa = np.where(near, 1.0 - tt, np.sin((1.0 - tt) * theta) / safe_sin)
    wb = np.where(near, tt, np.sin(tt * theta) / safe_sin)
    out = wa * a + wb * b
    # lerp branch needs renormalizing; slerp branch is unit already
    return np.where(near, out / np.linalg.norm(out, axis=-1, keepdims=True), out)


def forward_of(q: ArrayLike) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return rotate_vec(q, np.broadcast_to(FORWARD, q.shape[:-1] + (3,)))


def yaw_of(q: ArrayLike) -> np.ndarray:
    """Heading of the forward vector around +Y, radians."""
    f = forward_of(q)
    return np.arctan2(-f[..., 0], -f[..., 2])


def pitch_of(q: ArrayLike) -> np.ndarray:
    """Elevation of the forward vector, radians; positive looks up."""
    f = forward_of(q)
    return np.arcsin(np.clip(f[..., 1], -1.0, 1.0))


def canonicalize(q: ArrayLike) -> np.ndarray:
    """Flip to the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., 3:4] < 0.0, -q, q)


def align_signs(q: np.ndarray, axis: int = 0) -> np.ndarray:
    """
    Make consecutive quaternions along `axis` sign-consistent (dot >= 0 with the
    previous, already-aligned element).
    """
    q = np.moveaxis(np.asarray(q, dtype=np.float64), axis, 0)
    if q.shape[0] < 2:
        return np.moveaxis(q.copy(), 0, axis)
    # flipping element i-1 flips dot(i, i-1), so the aligned sign is a running product
    step = np.where(np.sum(q[1:] * q[:-1], axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    signs = np.concatenate([np.ones_like(step[:1]), np.cumprod(step, axis=0)], axis=0)
    return np.moveaxis(q * signs, 0, axis)
