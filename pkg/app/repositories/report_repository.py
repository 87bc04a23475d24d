"""
Report files: JSON / JSON-lines documents and the CSV tables external tools
read (heatmaps, per-user accuracies, dataset statistics, ranked candidates,
window dumps).
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from app.model.evaluation_model import CrossAppMatrix, MetricsReport
from app.model.feature_model import FEATURE_NAMES, FeatureWindow
from app.model.identification_model import RankedCandidates
from app.model.recording_model import APP_DISPLAY_NAMES, APP_ORDER
from app.model.stats_model import AnovaResult, MovementStats, PitchStats, PosthocResult
from app.utils.errors import IncompleteMatrix, IoFailure

PathLike = Union[str, Path]


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create directory {path.parent}: {exc}") from exc
    return path


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_json(payload: Any, path: PathLike) -> Path:
    path = _prepare(path)
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path: PathLike) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_jsonl(rows: Iterable[Dict[str, Any]], path: PathLike, append: bool = False) -> Path:
    path = _prepare(path)
    try:
        with open(path, "a" if append else "w", encoding="utf-8", newline="\n") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True, default=_json_default) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_jsonl(path: PathLike) -> List[Dict[str, Any]]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_csv(df: pd.DataFrame, path: PathLike, index: bool = False) -> Path:
    path = _prepare(path)
    try:
        df.to_csv(path, index=index, lineterminator="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


# --- heatmaps ---

def _ordered(apps: Sequence[str]) -> List[str]:
    known = [a for a in APP_ORDER if a in apps]
    return known + [a for a in apps if a not in known]


def export_heatmap(matrix: CrossAppMatrix, path: PathLike) -> Tuple[Path, Path]:
    """
    Display CSV ("mean±std" cells, rows = reference app, columns = query app)
    plus `<stem>_raw.csv` holding the raw means.
    """
    order = _ordered(matrix.apps)
    idx = [matrix.apps.index(a) for a in order]
    mean = np.asarray(matrix.mean)[np.ix_(idx, idx)]
    std = np.asarray(matrix.std)[np.ix_(idx, idx)]
    if mean.shape != (len(order), len(order)) or not np.all(np.isfinite(mean)):
        raise IncompleteMatrix("heatmap export needs a complete matrix")

    names = [APP_DISPLAY_NAMES.get(a, a) for a in order]
    display = pd.DataFrame(
        [[f"{m:.3f}±{s:.3f}" for m, s in zip(mrow, srow)] for mrow, srow in zip(mean, std)],
        index=pd.Index(names, name="reference\\query"),
        columns=names,
    )
    raw = pd.DataFrame(mean, index=pd.Index(order, name="reference_app"), columns=order)

    path = Path(path)
    raw_path = path.with_name(f"{path.stem}_raw{path.suffix or '.csv'}")
    write_csv(display, path, index=True)
    _prepare(raw_path)
    try:
        raw.to_csv(raw_path, index=True, float_format="%.17g", lineterminator="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {raw_path}: {exc}") from exc
    return path, raw_path


def read_heatmap_raw(path: PathLike) -> Tuple[List[str], np.ndarray]:
    try:
        df = pd.read_csv(path, index_col=0)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    return [str(c) for c in df.columns], df.to_numpy(dtype=np.float64)


# --- evaluation reports ---

def write_metrics_report(report: MetricsReport, path: PathLike) -> Path:
    return write_json(report.to_dict(), path)


def write_per_user_csv(report: MetricsReport, path: PathLike) -> Path:
    """One row per (user, app) accuracy plus per-user overall rows (app = "all")."""
    rows = [{"user": u, "app": a, "accuracy": acc} for (u, a), acc in sorted(report.per_user_app_accuracy.items())]
    rows += [{"user": u, "app": "all", "accuracy": acc} for u, acc in sorted(report.per_user_accuracy.items())]
    return write_csv(pd.DataFrame(rows, columns=["user", "app", "accuracy"]), path)


def export_ranked_candidates(ranked: RankedCandidates, path: PathLike) -> Path:
    return write_csv(pd.DataFrame(ranked.to_rows(), columns=["rank", "user", "votes", "cum_similarity"]), path)


# --- dataset statistics ---

def write_stats_table(
    movement: Sequence[MovementStats],
    pitch: Sequence[PitchStats],
    path: PathLike,
) -> Path:
    """App rows in play order: mean per-minute distances (m/min) and pitch mean/std (deg)."""
    mv = pd.DataFrame([m.to_dict() for m in movement])
    pt = pd.DataFrame([p.to_dict() for p in pitch])
    by_app = mv.groupby("app")[["hmd", "left", "right", "hmd_left_distance", "hmd_right_distance"]].mean()
    pitch_app = pt.groupby("app")[["mean_deg", "std_deg"]].mean()
    table = by_app.join(pitch_app, how="outer")
    table = table.reindex(_ordered(list(table.index)))
    table.index = [APP_DISPLAY_NAMES.get(a, a) for a in table.index]
    table.index.name = "app"
    table = table.rename(columns={
        "hmd": "hmd_m_per_min",
        "left": "con1_left_m_per_min",
        "right": "con2_right_m_per_min",
        "hmd_left_distance": "hmd_left_separation_m",
        "hmd_right_distance": "hmd_right_separation_m",
        "mean_deg": "pitch_mean_deg",
        "std_deg": "pitch_std_deg",
    })
    return write_csv(table.round(6), path, index=True)


def write_anova_table(results: Sequence[AnovaResult], path: PathLike) -> Path:
    return write_csv(pd.DataFrame([r.to_dict() for r in results]), path)


def write_posthoc_table(results: Sequence[PosthocResult], path: PathLike) -> Path:
    return write_csv(pd.DataFrame([r.to_dict() for r in results]), path)


# --- debug dumps ---

def dump_windows_csv(windows: Sequence[FeatureWindow], path: PathLike) -> Path:
    """Long format: window id, identity, frame index, 18 feature columns."""
    frames = []
    for wid, w in enumerate(windows):
        df = pd.DataFrame(w.frames, columns=FEATURE_NAMES)
        df.insert(0, "frame", np.arange(w.frames.shape[0]))
        df.insert(0, "start_frame", w.start_frame)
        df.insert(0, "app", w.app)
        df.insert(0, "user", w.user)
        df.insert(0, "window_id", wid)
        frames.append(df)
    columns = ["window_id", "user", "app", "start_frame", "frame"] + FEATURE_NAMES
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=columns)
    path = _prepare(path)
    try:
        out.to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
