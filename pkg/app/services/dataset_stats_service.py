"""
Movement and head-pitch statistics per (user, app), one-way repeated-measures
ANOVA across apps and Bonferroni-corrected paired t-tests.

Tail probabilities come from scipy.stats (F and Student t survival functions).
"""

from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as scistats

from app.model.recording_model import APP_ORDER, DEVICE_INDEX, Recording
from app.model.stats_model import AnovaResult, DatasetAnalysis, MovementStats, PitchStats, PosthocResult
from app.services import quaternion_service as quat
from app.services.kinematics_service import resample_to_30fps
from app.utils.errors import IncompleteMatrix, TooShort
from app.utils.logger_util import logger

# metrics entering the ANOVA / post-hoc tables
ANALYZED_METRICS = ("hmd_travel", "left_travel", "right_travel", "pitch_mean")


def _frames_per_minute(recording: Recording) -> int:
    return int(round(60.0 * recording.nominal_rate))


def travel_distance(recording_30fps: Recording, device: str) -> np.ndarray:
    """Summed inter-frame displacement per full minute (m); the trailing partial minute is dropped."""
    d = DEVICE_INDEX[device]
    per_min = _frames_per_minute(recording_30fps)
    steps = np.linalg.norm(np.diff(recording_30fps.pos[:, d], axis=0), axis=1)
    n_min = steps.shape[0] // per_min
    if n_min == 0:
        raise TooShort(f"{recording_30fps.identity} is shorter than one minute")
    return steps[: n_min * per_min].reshape(n_min, per_min).sum(axis=1)


def hmd_controller_distance(recording_30fps: Recording, side: str) -> np.ndarray:
    """Mean HMD-to-controller separation per full minute (m)."""
    per_min = _frames_per_minute(recording_30fps)
    sep = np.linalg.norm(recording_30fps.pos[:, DEVICE_INDEX[side]] - recording_30fps.pos[:, 0], axis=1)
    n_min = sep.shape[0] // per_min
    if n_min == 0:
        raise TooShort(f"{recording_30fps.identity} is shorter than one minute")
    return sep[: n_min * per_min].reshape(n_min, per_min).mean(axis=1)


def pitch_stats(recording_30fps: Recording) -> PitchStats:
    pitch = np.rad2deg(quat.pitch_of(recording_30fps.rot[:, 0]))
    return PitchStats(
        user=recording_30fps.user,
        app=recording_30fps.app,
        mean_deg=float(pitch.mean()),
        std_deg=float(pitch.std()),
    )


def movement_stats(recording_30fps: Recording) -> MovementStats:
    per_device = {d: travel_distance(recording_30fps, d) for d in ("hmd", "left", "right")}
    return MovementStats(
        user=recording_30fps.user,
        app=recording_30fps.app,
        hmd=float(per_device["hmd"].mean()),
        left=float(per_device["left"].mean()),
        right=float(per_device["right"].mean()),
        minutes=int(per_device["hmd"].shape[0]),
        hmd_left_distance=float(hmd_controller_distance(recording_30fps, "left").mean()),
        hmd_right_distance=float(hmd_controller_distance(recording_30fps, "right").mean()),
    )


def _check_matrix(values: np.ndarray) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise IncompleteMatrix(f"need a users x apps matrix with >= 2 of each; got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise IncompleteMatrix("matrix has missing cells")
    return x


def rm_anova(values: np.ndarray, metric: str = "") -> AnovaResult:
    """One-way repeated-measures ANOVA over a (users x apps) matrix."""
    x = _check_matrix(values)
    n, a = x.shape
    grand = x.mean()
    ss_treat = n * np.sum((x.mean(axis=0) - grand) ** 2)
    ss_subj = a * np.sum((x.mean(axis=1) - grand) ** 2)
    ss_total = np.sum((x - grand) ** 2)
    ss_err = max(ss_total - ss_treat - ss_subj, 0.0)
    df1, df2 = a - 1, (a - 1) * (n - 1)

    if ss_err <= 1e-12 * max(ss_total, 1e-300):
        f_value, p = (0.0, 1.0) if ss_treat <= 1e-12 * max(ss_total, 1e-300) else (float("inf"), 0.0)
    else:
        f_value = float((ss_treat / df1) / (ss_err / df2))
        p = float(scistats.f.sf(f_value, df1, df2))
    return AnovaResult(f_value=f_value, df_between=df1, df_within=df2, p_value=p, metric=metric)


def paired_t(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """Two-sided paired t-test; zero-variance differences give t = 0 (p = 1) or t = +-inf (p = 0)."""
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    n = d.shape[0]
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return float(np.copysign(np.inf, mean)), 0.0
    t = float(mean / (sd / np.sqrt(n)))
    return t, float(2.0 * scistats.t.sf(abs(t), n - 1))


def posthoc_bonferroni(
    values: np.ndarray,
    apps: Optional[Sequence[str]] = None,
    alpha: float = 0.05,
    metric: str = "",
) -> List[PosthocResult]:
    x = _check_matrix(values)
    apps = list(apps) if apps is not None else [str(i) for i in range(x.shape[1])]
    pairs = list(combinations(range(x.shape[1]), 2))
    out = []
    for i, j in pairs:
        t, p = paired_t(x[:, i], x[:, j])
        adj = min(1.0, p * len(pairs))
        out.append(PosthocResult(app_a=apps[i], app_b=apps[j], t_stat=t, p_raw=p,
                                 p_adjusted=adj, significant=adj < alpha, metric=metric))
    return out


def metric_matrix(
    movement: Sequence[MovementStats],
    pitch: Sequence[PitchStats],
    metric: str,
    apps: Sequence[str],
) -> Tuple[List[str], np.ndarray]:
    """(users, users x apps matrix) for one metric; session values are averaged per cell."""
    if metric == "pitch_mean":
        cells = [(p.user, p.app, p.mean_deg) for p in pitch]
    else:
        attr = metric.replace("_travel", "")
        cells = [(m.user, m.app, getattr(m, attr)) for m in movement]
    users = sorted({u for u, _, _ in cells})
    acc: Dict[Tuple[str, str], List[float]] = {}
    for u, a, v in cells:
        acc.setdefault((u, a), []).append(v)
    mat = np.full((len(users), len(apps)), np.nan)
    for ui, u in enumerate(users):
        for ai, a in enumerate(apps):
            if (u, a) in acc:
                mat[ui, ai] = float(np.mean(acc[(u, a)]))
    return users, mat


def analyze_dataset(recordings: Sequence[Recording], alpha: float = 0.05) -> DatasetAnalysis:
    """Per-recording statistics at 30 FPS, then ANOVA and post-hoc tests per metric."""
    movement, pitch = [], []
    for rec in recordings:
        rec30 = rec if rec.nominal_rate == 30.0 else resample_to_30fps(rec)
        try:
            movement.append(movement_stats(rec30))
        except TooShort:
            logger.warning("Recording %s shorter than one minute; excluded from movement statistics", rec.identity)
        pitch.append(pitch_stats(rec30))

    present = {m.app for m in movement}
    apps = [a for a in APP_ORDER if a in present] + sorted(present - set(APP_ORDER))
    anova, posthoc = [], []
    for metric in ANALYZED_METRICS:
        _, mat = metric_matrix(movement, pitch, metric, apps)
        try:
            anova.append(rm_anova(mat, metric))
            posthoc.extend(posthoc_bonferroni(mat, apps, alpha, metric))
        except IncompleteMatrix as exc:
            logger.warning("Skipping tests for %s: %s", metric, exc)
    for r in anova:
        logger.info("%s: F(%d, %d) = %.3f, p = %.4g", r.metric, r.df_between, r.df_within, r.f_value, r.p_value)
    return DatasetAnalysis(movement=movement, pitch=pitch, anova=anova, posthoc=posthoc)
