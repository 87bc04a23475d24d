"""
Identity decisions.

Similarity side: exhaustive cosine nearest-neighbour scans over a
ReferenceStore, k-nearest majority voting, top-k ranking and span-level
sequence decisions. Classifier side: per-window argmax and span-level
plurality.

Candidate order is total: votes desc, cumulative similarity (classifier:
summed softmax probability) desc, user id asc.
"""

from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.model.feature_model import TARGET_FPS, FeatureStream, FeatureWindow
from app.model.identification_model import Candidate, RankedCandidates, ReferenceStore, SequenceDecision
from app.services.kinematics_service import windows_from_stream
from app.services.sequence_model_service import SequenceModel
from app.utils.errors import EmptyStore, InsufficientSpan, ShapeMismatch

WindowKey = Tuple[str, str, str, int]

_CHUNK = 512


def _unit(queries: np.ndarray) -> np.ndarray:
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim == 1:
        q = q[None]
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ShapeMismatch("query embedding has zero norm")
    return q / norms


def _require(store: ReferenceStore, app_filter: Optional[Iterable[str]]) -> ReferenceStore:
    view = store.filter_apps(app_filter)
    if len(view) == 0:
        raise EmptyStore(f"no reference rows for apps {sorted(app_filter) if app_filter else 'any'}")
    return view


def nearest_references(
    store: ReferenceStore,
    queries: np.ndarray,
    k: int = 1,
    exclude_keys: Optional[Sequence[Optional[WindowKey]]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Indices (Q, k) and cosine similarities (Q, k) of each query's k nearest rows,
    best first; equal similarities keep store order. A query's exclude key
    removes the reference row with that (user, app, session, start) key.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(store) == 0:
        raise EmptyStore("reference store is empty")
    q = _unit(queries)
    if q.shape[1] != store.dim:
        raise ShapeMismatch(f"query dim {q.shape[1]} != store dim {store.dim}")
    ref = store.embeddings.astype(np.float64)
    row_of: Dict[WindowKey, List[int]] = defaultdict(list)
    if exclude_keys is not None:
        for i, key in enumerate(store.keys):
            row_of[key].append(i)

    # every query must keep k_eff candidates after its excluded rows are masked
    max_excluded = max((len(row_of.get(tuple(key), [])) for key in exclude_keys or () if key is not None), default=0)
    k_eff = min(k, len(store) - max_excluded)
    if k_eff < 1:
        raise EmptyStore("no reference rows remain after excluding the query window")

    idx_out = np.empty((q.shape[0], k_eff), dtype=np.int64)
    sim_out = np.empty((q.shape[0], k_eff), dtype=np.float64)
    for start in range(0, q.shape[0], _CHUNK):
        sims = q[start:start + _CHUNK] @ ref.T
        if exclude_keys is not None:
            for r in range(sims.shape[0]):
                key = exclude_keys[start + r]
                if key is not None:
                    sims[r, row_of.get(tuple(key), [])] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, :k_eff]
        idx_out[start:start + _CHUNK] = order
        sim_out[start:start + _CHUNK] = np.take_along_axis(sims, order, axis=1)
    return idx_out, sim_out


def nearest_reference(
    store: ReferenceStore,
    query_embedding: np.ndarray,
    app_filter: Optional[Iterable[str]] = None,
) -> Tuple[str, float]:
    view = _require(store, app_filter)
    idx, sims = nearest_references(view, np.asarray(query_embedding).reshape(1, -1), k=1)
    return str(view.users[idx[0, 0]]), float(sims[0, 0])


def rank_candidates(
    votes: Dict[str, int],
    scores: Dict[str, float],
    users: Iterable[str],
    n_queries: int = 0,
    k: int = 1,
    query: Optional[dict] = None,
) -> RankedCandidates:
    """Every user in `users` gets a row, zero-vote users included."""
    pool = set(users) | set(votes)
    cands = [Candidate(u, int(votes.get(u, 0)), float(scores.get(u, 0.0))) for u in pool]
    cands.sort(key=lambda c: (-c.votes, -c.cumulative_similarity, c.user))
    return RankedCandidates(candidates=tuple(cands), n_queries=n_queries, k=k, query=dict(query or {}))


def vote_identify(
    store: ReferenceStore,
    query_embeddings: np.ndarray,
    k: int = 1,
    app_filter: Optional[Iterable[str]] = None,
    exclude_keys: Optional[Sequence[Optional[WindowKey]]] = None,
    query: Optional[dict] = None,
) -> RankedCandidates:
    """Each query's k nearest rows vote for their user; votes pool across queries."""
    view = _require(store, app_filter)
    q = np.asarray(query_embeddings)
    if q.ndim == 1:
        q = q[None]
    idx, sims = nearest_references(view, q, k=k, exclude_keys=exclude_keys)
    votes: Dict[str, int] = defaultdict(int)
    scores: Dict[str, float] = defaultdict(float)
    for u, s in zip(view.users[idx].ravel().tolist(), sims.ravel().tolist()):
        votes[u] += 1
        scores[u] += s
    return rank_candidates(votes, scores, view.enrolled_users, n_queries=q.shape[0], k=k, query=query)


def topk_users(ranked: RankedCandidates, k: int) -> List[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return ranked.users[:k]


def span_frames(span_seconds: float, fps: int = TARGET_FPS) -> int:
    """BRV frames in a span: a span of N resampled frames has N - 1 differences."""
    return int(round(span_seconds * fps)) - 1


def span_windows(stream: FeatureStream, span_seconds: float, model: SequenceModel) -> List[FeatureWindow]:
    need = span_frames(span_seconds, model.config.encoding.target_fps)
    if stream.length < need or need < model.config.window_size:
        raise InsufficientSpan(
            f"stream of {stream.length} frames does not cover {span_seconds}s ({need} frames, window {model.config.window_size})"
        )
    return windows_from_stream(stream.slice(0, need), model.config.encoding)


def sequence_decision(
    store: ReferenceStore,
    embeddings: np.ndarray,
    span_seconds: float,
    app_filter: Optional[Iterable[str]] = None,
    exclude_keys: Optional[Sequence[Optional[WindowKey]]] = None,
    query: Optional[dict] = None,
) -> SequenceDecision:
    """k=1 vote per window embedding, pooled over the span."""
    view = _require(store, app_filter)
    idx, _ = nearest_references(view, embeddings, k=1, exclude_keys=exclude_keys)
    ranked = vote_identify(view, embeddings, k=1, exclude_keys=exclude_keys, query=query)
    return SequenceDecision(
        window_decisions=tuple(view.users[idx[:, 0]].tolist()),
        final_user=ranked.winner,
        span_seconds=float(span_seconds),
        ranked=ranked,
    )


def sequence_identify(
    store: ReferenceStore,
    model: SequenceModel,
    stream: FeatureStream,
    span_seconds: float,
    app_filter: Optional[Iterable[str]] = None,
) -> SequenceDecision:
    """Identify the user behind the first `span_seconds` of a BRV stream."""
    windows = span_windows(stream, span_seconds, model)
    emb = model.embed(windows)
    return sequence_decision(store, emb, span_seconds, app_filter,
                             query={"app": stream.app, "session": stream.session})


# --- classifier side ---

def class_labels_of(model: SequenceModel) -> List[str]:
    c = model.config
    return list(c.class_labels) if c.class_labels else [str(i) for i in range(int(c.n_classes))]


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_users(logits: np.ndarray, labels: Sequence[str]) -> List[str]:
    logits = np.asarray(logits)
    if logits.ndim == 1:
        logits = logits[None]
    if logits.shape[1] != len(labels):
        raise ShapeMismatch(f"{logits.shape[1]} logits for {len(labels)} classes")
    return [labels[i] for i in np.argmax(logits, axis=1)]


def plurality_decision(logits: np.ndarray, labels: Sequence[str], span_seconds: float = 0.0) -> SequenceDecision:
    """Most frequent argmax; ties by summed softmax probability, then user id."""
    logits = np.asarray(logits, dtype=np.float64)
    decisions = predict_users(logits, labels)
    probs = _softmax(logits).sum(axis=0)
    votes: Dict[str, int] = defaultdict(int)
    for u in decisions:
        votes[u] += 1
    scores = {u: float(p) for u, p in zip(labels, probs)}
    ranked = rank_candidates(votes, scores, labels, n_queries=len(decisions))
    return SequenceDecision(window_decisions=tuple(decisions), final_user=ranked.winner,
                            span_seconds=float(span_seconds), ranked=ranked)


def classifier_identify(model: SequenceModel, window) -> str:
    return predict_users(model.predict_logits(window), class_labels_of(model))[0]


def classifier_sequence_identify(model: SequenceModel, stream: FeatureStream, span_seconds: float = 150.0) -> SequenceDecision:
    windows = span_windows(stream, span_seconds, model)
    return plurality_decision(model.predict_logits(windows), class_labels_of(model), span_seconds)
