from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.model.recording_model import DatasetManifest

SplitMode = Literal["user", "temporal"]
MatrixMetric = Literal["nn_accuracy", "sequence_accuracy", "top3_sequence_accuracy"]

# 23 / 9 / 17 of 49 users
USER_SPLIT_WEIGHTS: Tuple[int, int, int] = (23, 9, 17)
TEMPORAL_SPLIT_FRACTIONS: Tuple[float, float, float] = (0.45, 0.20, 0.35)


class SplitSpec(BaseModel):
    mode: SplitMode = "user"
    user_weights: Tuple[int, int, int] = USER_SPLIT_WEIGHTS
    temporal_fractions: Tuple[float, float, float] = TEMPORAL_SPLIT_FRACTIONS
    # windows must not straddle a temporal cut: cuts snap down to this stride
    frame_step: int = Field(default=50, gt=0)
    window_size: int = Field(default=450, gt=0)

    @model_validator(mode="after")
    def _check(self) -> "SplitSpec":
        if any(w < 0 for w in self.user_weights) or sum(self.user_weights) <= 0:
            raise ValueError("user_weights must be non-negative with a positive sum")
        if any(f <= 0 for f in self.temporal_fractions) or abs(sum(self.temporal_fractions) - 1.0) > 1e-9:
            raise ValueError("temporal_fractions must be positive and sum to 1")
        return self


@dataclass(frozen=True)
class DatasetSplit:
    train: DatasetManifest
    val: DatasetManifest
    test: DatasetManifest
    mode: SplitMode = "user"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode,
            "train_users": self.train.users,
            "val_users": self.val.users,
            "test_users": self.test.users,
            "entries": {"train": len(self.train.entries), "val": len(self.val.entries), "test": len(self.test.entries)},
        }


@dataclass
class CrossAppMatrix:
    """(reference_app, query_app) grid of per-user macro-averaged metric values."""
    apps: List[str]
    mean: np.ndarray   # (A, A)
    std: np.ndarray    # (A, A)
    metric: MatrixMetric = "nn_accuracy"
    span_seconds: Optional[float] = None
    # diagonal cells exclude the query's own window from the references
    note: str = "diagonal cells exclude the query window itself from the reference set"

    def cell(self, ref_app: str, query_app: str) -> Tuple[float, float]:
        i, j = self.apps.index(ref_app), self.apps.index(query_app)
        return float(self.mean[i, j]), float(self.std[i, j])

    @property
    def diagonal_mean(self) -> float:
        return float(np.mean(np.diag(self.mean)))

    @property
    def off_diagonal_mean(self) -> float:
        mask = ~np.eye(len(self.apps), dtype=bool)
        return float(np.mean(self.mean[mask])) if mask.any() else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric,
            "apps": list(self.apps),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "span_seconds": self.span_seconds,
            "diagonal_mean": self.diagonal_mean,
            "off_diagonal_mean": self.off_diagonal_mean,
            "note": self.note,
        }


@dataclass
class MetricsReport:
    overall_accuracy: float
    n_queries: int
    n_test_users: int
    per_app_accuracy: Dict[str, float] = field(default_factory=dict)
    per_app_queries: Dict[str, int] = field(default_factory=dict)
    per_user_accuracy: Dict[str, float] = field(default_factory=dict)
    # (user, app) -> accuracy, box-plot input
    per_user_app_accuracy: Dict[Tuple[str, str], float] = field(default_factory=dict)
    sequence_accuracy: Optional[float] = None
    per_app_sequence_accuracy: Dict[str, float] = field(default_factory=dict)
    top3_sequence_accuracy: Optional[float] = None
    span_seconds: Optional[float] = None
    n_sequences: int = 0
    skipped_spans: int = 0
    model_kind: str = "slm"
    notes: List[str] = field(default_factory=list)

    @property
    def chance_level(self) -> float:
        return 1.0 / self.n_test_users if self.n_test_users else float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model_kind": self.model_kind,
            "overall_accuracy": self.overall_accuracy,
            "n_queries": self.n_queries,
            "n_test_users": self.n_test_users,
            "chance_level": self.chance_level,
            "per_app_accuracy": dict(self.per_app_accuracy),
            "per_app_queries": dict(self.per_app_queries),
            "per_user_accuracy": dict(self.per_user_accuracy),
            "sequence_accuracy": self.sequence_accuracy,
            "per_app_sequence_accuracy": dict(self.per_app_sequence_accuracy),
            "top3_sequence_accuracy": self.top3_sequence_accuracy,
            "span_seconds": self.span_seconds,
            "n_sequences": self.n_sequences,
            "skipped_spans": self.skipped_spans,
            "notes": list(self.notes),
        }
