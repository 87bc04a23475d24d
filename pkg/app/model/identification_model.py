from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.model.recording_model import AppLabel

UNIT_NORM_TOL = 1e-4


@dataclass(frozen=True, eq=False)
class ReferenceStore:
    """
    Labeled embedding rows. Row i is (embeddings[i], users[i], apps[i],
    sessions[i], window_starts[i]); embeddings are unit-norm.
    """
    embeddings: np.ndarray      # (N, E) float32
    users: np.ndarray           # (N,) str
    apps: np.ndarray            # (N,) str
    window_starts: np.ndarray   # (N,) int64
    sessions: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.embeddings.shape[0]
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be (N, E); got {self.embeddings.shape}")
        for name in ("users", "apps", "window_starts"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
        if self.sessions is None:
            object.__setattr__(self, "sessions", np.full(n, "", dtype=object))
        if n:
            norms = np.linalg.norm(self.embeddings.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise ValueError("reference embeddings must be unit-norm")

    @classmethod
    def build(
        cls,
        embeddings: np.ndarray,
        users: Sequence[str],
        apps: Sequence[str],
        window_starts: Sequence[int],
        sessions: Optional[Sequence[str]] = None,
    ) -> "ReferenceStore":
        emb = np.asarray(embeddings, dtype=np.float32)
        if emb.ndim == 1:
            emb = emb.reshape(0 if emb.size == 0 else 1, -1)
        return cls(
            embeddings=emb,
            users=np.asarray(list(users), dtype=object),
            apps=np.asarray([AppLabel.normalize(a) for a in apps], dtype=object),
            window_starts=np.asarray(list(window_starts), dtype=np.int64),
            sessions=None if sessions is None else np.asarray(list(sessions), dtype=object),
        )

    @classmethod
    def concat(cls, stores: Iterable["ReferenceStore"]) -> "ReferenceStore":
        stores = [s for s in stores if len(s)]
        if not stores:
            return cls.empty()
        return cls(
            embeddings=np.concatenate([s.embeddings for s in stores]),
            users=np.concatenate([s.users for s in stores]),
            apps=np.concatenate([s.apps for s in stores]),
            window_starts=np.concatenate([s.window_starts for s in stores]),
            sessions=np.concatenate([s.sessions for s in stores]),
        )

    @classmethod
    def empty(cls, dim: int = 0) -> "ReferenceStore":
        return cls(
            embeddings=np.zeros((0, dim), dtype=np.float32),
            users=np.zeros(0, dtype=object),
            apps=np.zeros(0, dtype=object),
            window_starts=np.zeros(0, dtype=np.int64),
        )

    def __len__(self) -> int:
        return int(self.embeddings.shape[0])

    @property
    def dim(self) -> int:
        return int(self.embeddings.shape[1])

    @property
    def enrolled_users(self) -> List[str]:
        return sorted(set(self.users.tolist()))

    @property
    def app_set(self) -> List[str]:
        return sorted(set(self.apps.tolist()))

    @property
    def keys(self) -> List[Tuple[str, str, str, int]]:
        return list(zip(self.users.tolist(), self.apps.tolist(), self.sessions.tolist(),
                        self.window_starts.tolist()))

    def select(self, mask: np.ndarray) -> "ReferenceStore":
        return ReferenceStore(
            embeddings=self.embeddings[mask],
            users=self.users[mask],
            apps=self.apps[mask],
            window_starts=self.window_starts[mask],
            sessions=self.sessions[mask],
        )

    def filter_apps(self, apps: Optional[Iterable[str]]) -> "ReferenceStore":
        if apps is None:
            return self
        wanted = {AppLabel.normalize(a) for a in apps}
        return self.select(np.array([a in wanted for a in self.apps.tolist()], dtype=bool))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": len(self),
            "dim": self.dim,
            "users": self.enrolled_users,
            "apps": self.app_set,
        }


@dataclass(frozen=True)
class Candidate:
    user: str
    votes: int
    cumulative_similarity: float


@dataclass(frozen=True)
class RankedCandidates:
    """Sorted by votes desc, cumulative similarity desc, then user id."""
    candidates: Tuple[Candidate, ...]
    n_queries: int = 0
    k: int = 1
    query: Dict[str, Any] = field(default_factory=dict)

    @property
    def winner(self) -> Optional[str]:
        return self.candidates[0].user if self.candidates else None

    @property
    def users(self) -> List[str]:
        return [c.user for c in self.candidates]

    def to_rows(self) -> List[Dict[str, Any]]:
        return [
            {"rank": i + 1, "user": c.user, "votes": c.votes, "cum_similarity": c.cumulative_similarity}
            for i, c in enumerate(self.candidates)
        ]


@dataclass(frozen=True)
class SequenceDecision:
    window_decisions: Tuple[str, ...]
    final_user: str
    span_seconds: float
    ranked: Optional[RankedCandidates] = None

    @property
    def n_windows(self) -> int:
        return len(self.window_decisions)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "final_user": self.final_user,
            "span_seconds": self.span_seconds,
            "n_windows": self.n_windows,
            "candidates": self.ranked.to_rows() if self.ranked else [],
        }
