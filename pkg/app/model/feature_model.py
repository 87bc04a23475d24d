from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

# Order of the 18 BRV features per frame.
FEATURE_NAMES: List[str] = [
    "hmd_rx", "hmd_ry", "hmd_rz", "hmd_rw",
    "l_px", "l_py", "l_pz", "l_rx", "l_ry", "l_rz", "l_rw",
    "r_px", "r_py", "r_pz", "r_rx", "r_ry", "r_rz", "r_rw",
]
N_FEATURES = len(FEATURE_NAMES)

TARGET_FPS = 30


class EncodingConfig(BaseModel):
    target_fps: int = Field(default=TARGET_FPS, gt=0)
    window_size: int = Field(default=450, gt=0)
    frame_step: int = Field(default=50, gt=0)

    model_config = {"frozen": True}


@dataclass(frozen=True, eq=False)
class FeatureWindow:
    frames: np.ndarray  # (W, 18)
    user: str
    app: str
    start_frame: int
    session: str = ""

    @property
    def key(self) -> Tuple[str, str, str, int]:
        return (self.user, self.app, self.session, self.start_frame)


@dataclass(frozen=True, eq=False)
class FeatureStream:
    """Whole BRV matrix of one recording (or one temporal segment of it)."""
    features: np.ndarray  # (L, 18)
    user: str
    app: str
    session: str = ""
    segment: Optional[Tuple[int, int]] = None

    @property
    def length(self) -> int:
        return int(self.features.shape[0])

    def slice(self, start: int, stop: int) -> "FeatureStream":
        return FeatureStream(self.features[start:stop], self.user, self.app, self.session, self.segment)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "user": self.user,
            "app": self.app,
            "session": self.session,
            "segment": list(self.segment) if self.segment else None,
            "length": self.length,
        }


def stack_windows(windows: List[FeatureWindow]) -> np.ndarray:
    """(B, W, 18) float32 batch."""
    return np.stack([w.frames for w in windows]).astype(np.float32)
