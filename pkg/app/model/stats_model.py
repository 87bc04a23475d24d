from dataclasses import asdict, dataclass
from typing import Any, Dict, List


@dataclass(frozen=True)
class MovementStats:
    """Mean per-minute travel distance (m) per device for one (user, app)."""
    user: str
    app: str
    hmd: float
    left: float
    right: float
    minutes: int
    # mean HMD-controller separation (m)
    hmd_left_distance: float = float("nan")
    hmd_right_distance: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PitchStats:
    user: str
    app: str
    mean_deg: float
    std_deg: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


STANDARD_DF_NOTE = "df = (a-1, (a-1)(n-1)), standard repeated-measures formula"


@dataclass(frozen=True)
class AnovaResult:
    f_value: float
    df_between: int
    df_within: int
    p_value: float
    metric: str = ""
    note: str = STANDARD_DF_NOTE

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class PosthocResult:
    app_a: str
    app_b: str
    t_stat: float
    p_raw: float
    p_adjusted: float
    significant: bool
    metric: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class DatasetAnalysis:
    movement: List[MovementStats]
    pitch: List[PitchStats]
    anova: List[AnovaResult]
    posthoc: List[PosthocResult]
