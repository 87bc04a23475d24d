"""
Evaluation protocol: dataset splits, reference stores, the cross-application
grid and the accuracy reports for both models.

Matrix cells are macro-averaged over users (mean of per-user accuracies, std
across users). Whenever references and queries come from the same app the
query's own window is removed from the reference set.
"""

from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.model.evaluation_model import CrossAppMatrix, DatasetSplit, MatrixMetric, MetricsReport, SplitSpec
from app.model.feature_model import TARGET_FPS, FeatureStream
from app.model.identification_model import ReferenceStore
from app.model.recording_model import APP_ORDER, AppLabel, DatasetManifest, ManifestEntry
from app.services.identification_service import (
    class_labels_of,
    nearest_references,
    plurality_decision,
    rank_candidates,
    span_frames,
)
from app.services.kinematics_service import resampled_frame_count, window_count, windows_from_stream
from app.services.sequence_model_service import SequenceModel
from app.utils.errors import InsufficientSpan, MissingApp, NoWindows, RecordingTooShort, RosterTooSmall, TooShort
from app.utils.logger_util import logger

GroupKey = Tuple[str, str, str]


# --- splits ---

def _split_counts(n: int, weights: Tuple[int, int, int]) -> Tuple[int, int, int]:
    total = sum(weights)
    n_train = (n * weights[0]) // total
    n_val = (n * weights[1]) // total
    return n_train, n_val, n - n_train - n_val


def _temporal_cuts(n_frames: int, spec: SplitSpec) -> Tuple[int, int]:
    f_train, f_val, _ = spec.temporal_fractions
    step = spec.frame_step
    c1 = (int(np.floor(f_train * n_frames)) // step) * step
    c2 = (int(np.floor((f_train + f_val) * n_frames)) // step) * step
    return c1, c2


def split_users(manifest: DatasetManifest, spec: SplitSpec, fps: int = TARGET_FPS) -> DatasetSplit:
    """
    user mode: sorted user ids split floor/floor/remainder in `user_weights`
    proportions. temporal mode: every recording is cut chronologically into
    train/val/test frame ranges at stride-aligned boundaries.
    """
    if spec.mode == "user":
        users = manifest.users
        if len(users) < 3:
            raise RosterTooSmall(f"user-disjoint split needs at least 3 users; have {len(users)}")
        n_train, n_val, _ = _split_counts(len(users), spec.user_weights)
        train_u, val_u, test_u = users[:n_train], users[n_train:n_train + n_val], users[n_train + n_val:]
        logger.info("User split: %d train / %d val / %d test", len(train_u), len(val_u), len(test_u))
        return DatasetSplit(
            train=manifest.filter(users=train_u),
            val=manifest.filter(users=val_u),
            test=manifest.filter(users=test_u),
            mode="user",
        )

    parts: Dict[str, List[ManifestEntry]] = {"train": [], "val": [], "test": []}
    for e in manifest.entries:
        base, end = e.frame_range if e.frame_range else (0, resampled_frame_count(e.duration_s, fps))
        n = end - base
        c1, c2 = _temporal_cuts(n, spec)
        bounds = {"train": (0, c1), "val": (c1, c2), "test": (c2, n)}
        for name, (lo, hi) in bounds.items():
            # a segment of m resampled frames yields m - 1 BRV frames
            if hi - lo - 1 < spec.window_size:
                raise RecordingTooShort(
                    f"{e.key}: {name} segment of {hi - lo} frames cannot hold a {spec.window_size}-frame window"
                )
            parts[name].append(e.model_copy(update={
                "frame_range": (base + lo, base + hi),
                "duration_s": (hi - lo - 1) / fps,
            }))
    return DatasetSplit(
        train=DatasetManifest(entries=parts["train"]),
        val=DatasetManifest(entries=parts["val"]),
        test=DatasetManifest(entries=parts["test"]),
        mode="temporal",
    )


# --- reference stores ---

def _select_streams(streams: Sequence[FeatureStream], apps: Optional[Iterable[str]]) -> List[FeatureStream]:
    if apps is None:
        return list(streams)
    wanted = {AppLabel.normalize(a) for a in apps}
    return [s for s in streams if s.app in wanted]


def build_reference_store(
    model: SequenceModel,
    streams: Sequence[FeatureStream],
    apps: Optional[Iterable[str]] = None,
) -> ReferenceStore:
    """Embed every window of the selected apps' streams."""
    if apps is not None:
        apps = list(apps)
        if not apps:
            raise NoWindows("no apps selected for the reference store")
    windows = []
    for s in _select_streams(streams, apps):
        try:
            windows.extend(windows_from_stream(s, model.config.encoding))
        except TooShort:
            logger.warning("Stream %s/%s/%s is shorter than one window; skipped", s.user, s.app, s.session)
    if not windows:
        raise NoWindows(f"no windows for apps {apps if apps is not None else 'all'}")
    emb = model.embed(windows)
    return ReferenceStore.build(
        emb,
        [w.user for w in windows],
        [w.app for w in windows],
        [w.start_frame for w in windows],
        [w.session for w in windows],
    )


# --- shared helpers ---

def _require_apps(store: ReferenceStore, apps: Sequence[str]) -> None:
    present = set(store.apps.tolist())
    missing = [a for a in apps if a not in present]
    if missing:
        raise MissingApp(f"test data lacks app(s): {', '.join(missing)}")


def _macro(correct: np.ndarray, users: np.ndarray) -> Tuple[float, float, Dict[str, float]]:
    per_user = {u: float(np.mean(correct[users == u])) for u in sorted(set(users.tolist()))}
    vals = np.array(list(per_user.values()), dtype=np.float64)
    if vals.size == 0:
        return float("nan"), float("nan"), per_user
    return float(vals.mean()), float(vals.std()), per_user


def stream_extents(streams: Sequence[FeatureStream]) -> Dict[GroupKey, int]:
    return {(s.user, s.app, s.session): s.length for s in streams}


def span_groups(
    store: ReferenceStore,
    rows: np.ndarray,
    span_len: int,
    window_size: int,
    extents: Optional[Dict[GroupKey, int]] = None,
) -> List[Tuple[GroupKey, int, np.ndarray]]:
    """
    Disjoint consecutive spans of `span_len` BRV frames per (user, app, session).
    Span k holds the windows entirely inside [k*span, (k+1)*span); spans past the
    stream end are not formed.
    """
    groups: Dict[GroupKey, List[int]] = defaultdict(list)
    for r in rows.tolist():
        groups[(store.users[r], store.apps[r], store.sessions[r])].append(r)
    out = []
    for key in sorted(groups):
        g = np.asarray(groups[key], dtype=np.int64)
        starts = store.window_starts[g]
        rel = starts - starts.min()
        length = extents.get(key) if extents else None
        if length is None:
            length = int(rel.max()) + window_size
        for k in range(length // span_len):
            sel = g[(rel >= k * span_len) & (rel + window_size <= (k + 1) * span_len)]
            if sel.size:
                out.append((key, k, sel))
    return out


def _span_outcomes(
    store: ReferenceStore,
    ref_rows: np.ndarray,
    query_rows: np.ndarray,
    exclude: bool,
    span_len: int,
    window_size: int,
    extents: Optional[Dict[GroupKey, int]],
    top: int,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(users, top-1 correct, top-`top` correct) per query span."""
    ref = store.select(ref_rows)
    keys = store.keys
    spans = span_groups(store, query_rows, span_len, window_size, extents)
    users, hit1, hitk = [], [], []
    for (user, _, _), _, sel in spans:
        excl = [keys[i] for i in sel] if exclude else None
        idx, sims = nearest_references(ref, store.embeddings[sel], k=1, exclude_keys=excl)
        votes: Dict[str, int] = defaultdict(int)
        scores: Dict[str, float] = defaultdict(float)
        for u, s in zip(ref.users[idx[:, 0]].tolist(), sims[:, 0].tolist()):
            votes[u] += 1
            scores[u] += s
        ranked = rank_candidates(votes, scores, ref.enrolled_users, n_queries=sel.size)
        users.append(user)
        hit1.append(ranked.winner == user)
        hitk.append(user in ranked.users[:top])
    return np.asarray(users, dtype=object), np.asarray(hit1, dtype=bool), np.asarray(hitk, dtype=bool)


# --- similarity-model evaluation ---

def cross_app_matrix(
    store: ReferenceStore,
    metric: MatrixMetric = "nn_accuracy",
    apps: Sequence[str] = APP_ORDER,
    span_len: Optional[int] = None,
    window_size: Optional[int] = None,
    extents: Optional[Dict[GroupKey, int]] = None,
) -> CrossAppMatrix:
    """The (reference app, query app) grid over an embedded test set."""
    apps = [AppLabel.normalize(a) for a in apps]
    _require_apps(store, apps)
    if metric != "nn_accuracy" and (span_len is None or window_size is None):
        raise ValueError(f"{metric} needs span_len and window_size")
    A = len(apps)
    mean = np.zeros((A, A))
    std = np.zeros((A, A))
    app_rows = {a: np.flatnonzero(store.apps == a) for a in apps}
    keys = store.keys
    for i, ref_app in enumerate(apps):
        ref = store.select(app_rows[ref_app])
        for j, query_app in enumerate(apps):
            q_rows = app_rows[query_app]
            diagonal = i == j
            if metric == "nn_accuracy":
                excl = [keys[r] for r in q_rows] if diagonal else None
                idx, _ = nearest_references(ref, store.embeddings[q_rows], k=1, exclude_keys=excl)
                correct = ref.users[idx[:, 0]] == store.users[q_rows]
                users = store.users[q_rows]
            else:
                users, hit1, hit3 = _span_outcomes(store, app_rows[ref_app], q_rows, diagonal,
                                                   span_len, window_size, extents, top=3)
                if users.size == 0:
                    raise InsufficientSpan(f"no complete {span_len}-frame span for query app {query_app}")
                correct = hit1 if metric == "sequence_accuracy" else hit3
            mean[i, j], std[i, j], _ = _macro(np.asarray(correct, dtype=np.float64), np.asarray(users))
    return CrossAppMatrix(apps=apps, mean=mean, std=std, metric=metric)


def eval_cross_app(
    model: SequenceModel,
    test_streams: Sequence[FeatureStream],
    metric: MatrixMetric = "nn_accuracy",
    span_seconds: Optional[float] = None,
    apps: Sequence[str] = APP_ORDER,
    store: Optional[ReferenceStore] = None,
) -> CrossAppMatrix:
    apps = [AppLabel.normalize(a) for a in apps]
    present = {s.app for s in test_streams}
    missing = [a for a in apps if a not in present]
    if missing:
        raise MissingApp(f"test data lacks app(s): {', '.join(missing)}")
    store = store if store is not None else build_reference_store(model, test_streams, apps)
    span_len = None
    if metric != "nn_accuracy":
        if span_seconds is None:
            raise ValueError(f"{metric} needs span_seconds")
        span_len = span_frames(span_seconds, model.config.encoding.target_fps)
    matrix = cross_app_matrix(store, metric, apps, span_len, model.config.window_size, stream_extents(test_streams))
    matrix.span_seconds = span_seconds
    logger.info("Cross-app %s: diagonal %.3f, off-diagonal %.3f", metric, matrix.diagonal_mean, matrix.off_diagonal_mean)
    return matrix


def nn_report(
    store: ReferenceStore,
    span_len: Optional[int] = None,
    window_size: Optional[int] = None,
    extents: Optional[Dict[GroupKey, int]] = None,
) -> MetricsReport:
    """All-app references, own window excluded; overall accuracy is the micro average."""
    rows = np.arange(len(store))
    if rows.size == 0:
        raise NoWindows("empty test store")
    idx, _ = nearest_references(store, store.embeddings, k=1, exclude_keys=store.keys)
    correct = store.users[idx[:, 0]] == store.users
    report = MetricsReport(
        overall_accuracy=float(np.mean(correct)),
        n_queries=int(rows.size),
        n_test_users=len(store.enrolled_users),
        model_kind="slm",
        notes=["queries exclude their own window from the reference set"],
    )
    for app in [a for a in APP_ORDER if a in set(store.apps.tolist())] + sorted(set(store.apps.tolist()) - set(APP_ORDER)):
        m = store.apps == app
        report.per_app_accuracy[app] = float(np.mean(correct[m]))
        report.per_app_queries[app] = int(m.sum())
    _, _, report.per_user_accuracy = _macro(correct.astype(np.float64), store.users)
    for u in store.enrolled_users:
        for app in report.per_app_accuracy:
            m = (store.users == u) & (store.apps == app)
            if m.any():
                report.per_user_app_accuracy[(u, app)] = float(np.mean(correct[m]))

    if span_len is not None and window_size is not None:
        users, hit1, hit3 = _span_outcomes(store, rows, rows, True, span_len, window_size, extents, top=3)
        report.n_sequences = int(users.size)
        if users.size:
            report.sequence_accuracy = float(np.mean(hit1))
            report.top3_sequence_accuracy = float(np.mean(hit3))
    return report


def eval_overall(
    model: SequenceModel,
    test_streams: Sequence[FeatureStream],
    span_seconds: Optional[float] = None,
    store: Optional[ReferenceStore] = None,
) -> MetricsReport:
    store = store if store is not None else build_reference_store(model, test_streams)
    span_len = span_frames(span_seconds, model.config.encoding.target_fps) if span_seconds else None
    report = nn_report(store, span_len, model.config.window_size, stream_extents(test_streams))
    report.span_seconds = span_seconds
    logger.info("Overall NN accuracy %.4f over %d queries (chance %.4f)",
                report.overall_accuracy, report.n_queries, report.chance_level)
    return report


# --- classification-model evaluation ---

def classifier_report(
    logits: np.ndarray,
    users: Sequence[str],
    apps: Sequence[str],
    labels: Sequence[str],
    span_logits: Sequence[Tuple[str, str, np.ndarray]] = (),
    skipped_spans: int = 0,
    span_seconds: Optional[float] = None,
) -> MetricsReport:
    """
    Window accuracy from (N, C) logits; sequence accuracy from per-span
    (user, app, logits) groups decided by plurality.
    """
    users = np.asarray(list(users), dtype=object)
    apps = np.asarray([AppLabel.normalize(a) for a in apps], dtype=object)
    pred = np.asarray(labels, dtype=object)[np.argmax(logits, axis=1)] if len(users) else np.zeros(0, dtype=object)
    correct = (pred == users).astype(np.float64)
    app_list = [a for a in APP_ORDER if a in set(apps.tolist())] + sorted(set(apps.tolist()) - set(APP_ORDER))
    report = MetricsReport(
        overall_accuracy=float(correct.mean()) if correct.size else 0.0,
        n_queries=int(correct.size),
        n_test_users=len(set(users.tolist())),
        model_kind="clm",
        skipped_spans=int(skipped_spans),
        span_seconds=span_seconds,
    )
    for app in app_list:
        m = apps == app
        report.per_app_accuracy[app] = float(correct[m].mean())
        report.per_app_queries[app] = int(m.sum())
    _, _, report.per_user_accuracy = _macro(correct, users)
    for u in sorted(set(users.tolist())):
        for app in app_list:
            m = (users == u) & (apps == app)
            if m.any():
                report.per_user_app_accuracy[(u, app)] = float(correct[m].mean())

    if span_logits:
        hits: Dict[str, List[bool]] = defaultdict(list)
        for user, app, lg in span_logits:
            hits[app].append(plurality_decision(lg, labels).final_user == user)
        flat = [h for app in hits for h in hits[app]]
        report.sequence_accuracy = float(np.mean(flat))
        report.n_sequences = len(flat)
        report.per_app_sequence_accuracy = {a: float(np.mean(hits[a])) for a in app_list if a in hits}
    if skipped_spans:
        report.notes.append(f"{skipped_spans} span(s) shorter than {span_seconds}s skipped")
    return report


def eval_classifier(
    model: SequenceModel,
    test_streams: Sequence[FeatureStream],
    span_seconds: float = 150.0,
) -> MetricsReport:
    """
    Per-window argmax accuracy plus plurality sequence accuracy over contiguous
    `span_seconds` spans of each test segment; short segments are counted and skipped.
    """
    enc = model.config.encoding
    labels = class_labels_of(model)
    span_len = span_frames(span_seconds, enc.target_fps)
    all_logits, users, apps = [], [], []
    span_logits: List[Tuple[str, str, np.ndarray]] = []
    skipped = 0
    for s in test_streams:
        try:
            windows = windows_from_stream(s, enc)
        except TooShort:
            logger.warning("Test segment %s/%s/%s shorter than one window; skipped", s.user, s.app, s.session)
            skipped += 1
            continue
        logits = model.predict_logits(windows)
        all_logits.append(logits)
        users += [s.user] * len(windows)
        apps += [s.app] * len(windows)

        n_spans = s.length // span_len
        if n_spans == 0 or window_count(span_len, enc.window_size, enc.frame_step) == 0:
            skipped += 1
            continue
        rel = np.asarray([w.start_frame for w in windows]) - windows[0].start_frame
        for k in range(n_spans):
            sel = (rel >= k * span_len) & (rel + enc.window_size <= (k + 1) * span_len)
            if sel.any():
                span_logits.append((s.user, s.app, logits[sel]))

    if not all_logits:
        raise NoWindows("no classifier test windows")
    report = classifier_report(np.concatenate(all_logits), users, apps, labels, span_logits, skipped, span_seconds)
    logger.info("Classifier accuracy %.4f over %d windows; sequence accuracy %s over %d spans (%d skipped)",
                report.overall_accuracy, report.n_queries, report.sequence_accuracy, report.n_sequences, skipped)
    return report
