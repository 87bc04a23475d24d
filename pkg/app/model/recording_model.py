"""
Tracking-data model: poses, frames, recordings, dataset manifests and the
synthetic-profile parameters.

Axis convention: right-handed, +Y up, -Z forward. Quaternions are stored in
(x, y, z, w) order. A Recording keeps its frames as dense arrays
(`pos[frame, device, xyz]`, `rot[frame, device, xyzw]`); `Recording.frames`
materializes the per-frame view when needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator


class Device(str, Enum):
    HMD = "hmd"
    LEFT = "left"
    RIGHT = "right"


DEVICES: Tuple[Device, ...] = (Device.HMD, Device.LEFT, Device.RIGHT)
DEVICE_INDEX: Dict[str, int] = {d.value: i for i, d in enumerate(DEVICES)}


class AppLabel(str, Enum):
    SYNTH_RIDERS = "synth_riders"
    SUPERHOT_VR = "superhot_vr"
    BEAT_SABER = "beat_saber"
    HALF_LIFE_ALYX = "half_life_alyx"
    SOCIAL_VR = "social_vr"

    @classmethod
    def normalize(cls, value: Any) -> str:
        """
        Canonical app label. Accepts enum members, values, names and display
        names; anything else is kept as a custom label.
        """
        if isinstance(value, AppLabel):
            return value.value
        if value is None:
            raise ValueError("app label is required")
        s = str(value).strip()
        if not s:
            raise ValueError("app label is required")
        key = s.lower().replace("-", "_").replace(" ", "_").replace(":", "")
        for e in cls:
            if key in (e.value, e.name.lower()) or s == APP_DISPLAY_NAMES[e.value]:
                return e.value
        return s


# Play order of the study; fixes heatmap row/column order.
APP_ORDER: List[str] = [
    AppLabel.SYNTH_RIDERS.value,
    AppLabel.SUPERHOT_VR.value,
    AppLabel.BEAT_SABER.value,
    AppLabel.HALF_LIFE_ALYX.value,
    AppLabel.SOCIAL_VR.value,
]

APP_DISPLAY_NAMES: Dict[str, str] = {
    "synth_riders": "Synth Riders",
    "superhot_vr": "Superhot VR",
    "beat_saber": "Beat Saber",
    "half_life_alyx": "Half-Life: Alyx",
    "social_vr": "Social VR",
}

APP_ARCHETYPE: Dict[str, str] = {
    "synth_riders": "rhythm",
    "beat_saber": "rhythm",
    "superhot_vr": "shooter",
    "half_life_alyx": "shooter",
    "social_vr": "social",
}


@dataclass(frozen=True)
class DevicePose:
    pos: np.ndarray  # (3,) meters
    rot: np.ndarray  # (4,) x, y, z, w


@dataclass(frozen=True)
class Frame:
    t: float
    hmd: DevicePose
    left: DevicePose
    right: DevicePose


@dataclass(frozen=True, eq=False)
class Recording:
    user: str
    app: str
    session: str
    t: np.ndarray    # (N,) seconds since recording start
    pos: np.ndarray  # (N, 3, 3)
    rot: np.ndarray  # (N, 3, 4)
    nominal_rate: float

    @property
    def n_frames(self) -> int:
        return int(self.t.shape[0])

    @property
    def duration(self) -> float:
        if self.n_frames == 0:
            return 0.0
        return float(self.t[-1] - self.t[0])

    @property
    def identity(self) -> Tuple[str, str, str]:
        return (self.user, self.app, self.session)

    @property
    def frames(self) -> List[Frame]:
        out = []
        for i in range(self.n_frames):
            poses = [DevicePose(pos=self.pos[i, d].copy(), rot=self.rot[i, d].copy()) for d in range(3)]
            out.append(Frame(t=float(self.t[i]), hmd=poses[0], left=poses[1], right=poses[2]))
        return out

    def with_arrays(self, t: np.ndarray, pos: np.ndarray, rot: np.ndarray, nominal_rate: Optional[float] = None) -> "Recording":
        return replace(self, t=t, pos=pos, rot=rot,
                       nominal_rate=self.nominal_rate if nominal_rate is None else float(nominal_rate))

    def slice_frames(self, start: int, stop: int) -> "Recording":
        return replace(self, t=self.t[start:stop], pos=self.pos[start:stop], rot=self.rot[start:stop])

    def allclose(self, other: "Recording", atol: float = 1e-6) -> bool:
        if self.identity != other.identity or self.n_frames != other.n_frames:
            return False
        return (
            np.allclose(self.t, other.t, atol=atol, rtol=0)
            and np.allclose(self.pos, other.pos, atol=atol, rtol=0)
            and np.allclose(self.rot, other.rot, atol=atol, rtol=0)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "user": self.user,
            "app": self.app,
            "session": self.session,
            "n_frames": self.n_frames,
            "duration_s": self.duration,
            "nominal_rate": self.nominal_rate,
        }


class ManifestEntry(BaseModel):
    user: str = Field(min_length=1)
    app: str = Field(min_length=1)
    session: str = Field(min_length=1)
    path: str = Field(min_length=1)
    duration_s: float = Field(ge=0)
    # Optional [start, end) range on the 30 FPS stream (temporal splits)
    frame_range: Optional[Tuple[int, int]] = None

    @field_validator("app")
    @classmethod
    def _canonical_app(cls, v: str) -> str:
        return AppLabel.normalize(v)

    @field_validator("frame_range")
    @classmethod
    def _valid_range(cls, v: Optional[Tuple[int, int]]) -> Optional[Tuple[int, int]]:
        if v is not None and not (0 <= v[0] < v[1]):
            raise ValueError(f"invalid frame_range {v}")
        return v

    @property
    def key(self) -> Tuple[str, str, str]:
        return (self.user, self.app, self.session)


MANIFEST_SCHEMA_VERSION = 1


class DatasetManifest(BaseModel):
    schema_version: int = MANIFEST_SCHEMA_VERSION
    entries: List[ManifestEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _no_duplicates(self) -> "DatasetManifest":
        seen = set()
        for e in self.entries:
            # temporal segments of one recording share the triple but not the range
            k = (e.key, e.frame_range)
            if k in seen:
                raise ValueError(f"duplicate manifest entry {e.key}")
            seen.add(k)
        return self

    @property
    def users(self) -> List[str]:
        return sorted({e.user for e in self.entries})

    @property
    def apps(self) -> List[str]:
        present = {e.app for e in self.entries}
        ordered = [a for a in APP_ORDER if a in present]
        return ordered + sorted(present - set(ordered))

    def filter(self, users: Optional[List[str]] = None, apps: Optional[List[str]] = None) -> "DatasetManifest":
        us = set(users) if users is not None else None
        aps = {AppLabel.normalize(a) for a in apps} if apps is not None else None
        kept = [
            e for e in self.entries
            if (us is None or e.user in us) and (aps is None or e.app in aps)
        ]
        return DatasetManifest(schema_version=self.schema_version, entries=kept)


@dataclass(frozen=True)
class UserSignature:
    arm_length: float       # m
    rest_height: float      # m
    osc_freq: float         # Hz
    phase: float            # rad
    head_bob_amp: float     # m
    jitter_sigma: float     # m
    handedness: float = 0.0  # right/left amplitude bias in [-0.5, 0.5]

    def __post_init__(self):
        for name in ("arm_length", "rest_height", "osc_freq", "head_bob_amp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")


@dataclass(frozen=True)
class AppModulation:
    amplitude_scale: float
    head_travel_scale: float
    pitch_bias_deg: float
    tempo_scale: float = 1.0

    def __post_init__(self):
        for name in ("amplitude_scale", "head_travel_scale", "tempo_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class SynthProfile:
    user: str
    signature: UserSignature
    apps: Dict[str, AppModulation] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "user": self.user,
            "signature": vars(self.signature).copy(),
            "apps": {k: vars(v).copy() for k, v in self.apps.items()},
        }
