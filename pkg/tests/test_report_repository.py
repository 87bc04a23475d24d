import numpy as np
import pandas as pd
import pytest

from app.model.evaluation_model import CrossAppMatrix, MetricsReport
from app.model.identification_model import ReferenceStore
from app.model.stats_model import MovementStats, PitchStats
from app.repositories.reference_store_repository import load_reference_store, save_reference_store
from app.repositories.report_repository import (
    dump_windows_csv,
    export_heatmap,
    export_ranked_candidates,
    read_heatmap_raw,
    read_json,
    read_jsonl,
    write_json,
    write_jsonl,
    write_per_user_csv,
    write_stats_table,
)
from app.services.identification_service import rank_candidates
from app.utils.errors import CheckpointMismatch, IncompleteMatrix
from tests.helpers import make_windows


def test_zero_matrix_heatmap(tmp_path):
    m = CrossAppMatrix(apps=["beat_saber", "social_vr"], mean=np.zeros((2, 2)), std=np.zeros((2, 2)))
    path, _ = export_heatmap(m, tmp_path / "heatmap.csv")
    df = pd.read_csv(path, index_col=0, encoding="utf-8")
    assert list(df.columns) == ["Beat Saber", "Social VR"]
    assert (df.to_numpy() == "0.000±0.000").all()


def test_heatmap_rows_follow_play_order(tmp_path):
    mean = np.array([[0.9, 0.2], [0.3, 0.8]])  # social_vr first
    m = CrossAppMatrix(apps=["social_vr", "synth_riders"], mean=mean, std=np.full((2, 2), 0.05))
    path, raw_path = export_heatmap(m, tmp_path / "nn.csv")
    assert raw_path.name == "nn_raw.csv"
    apps, values = read_heatmap_raw(raw_path)
    assert apps == ["synth_riders", "social_vr"]
    assert np.array_equal(values, [[0.8, 0.3], [0.2, 0.9]])
    assert pd.read_csv(path, index_col=0).iloc[0, 1] == "0.300±0.050"


def test_incomplete_matrix_is_not_exported(tmp_path):
    mean = np.array([[1.0, np.nan], [0.5, 1.0]])
    m = CrossAppMatrix(apps=["beat_saber", "social_vr"], mean=mean, std=np.zeros((2, 2)))
    with pytest.raises(IncompleteMatrix):
        export_heatmap(m, tmp_path / "h.csv")
    assert not (tmp_path / "h.csv").exists()


def test_json_and_jsonl(tmp_path):
    write_json({"x": np.float32(0.5), "arr": np.arange(3)}, tmp_path / "a" / "m.json")
    assert read_json(tmp_path / "a" / "m.json") == {"x": 0.5, "arr": [0, 1, 2]}
    write_jsonl([{"epoch": 1}], tmp_path / "h.jsonl")
    write_jsonl([{"epoch": 2}], tmp_path / "h.jsonl", append=True)
    assert read_jsonl(tmp_path / "h.jsonl") == [{"epoch": 1}, {"epoch": 2}]


def test_per_user_csv(tmp_path):
    report = MetricsReport(overall_accuracy=0.5, n_queries=4, n_test_users=2,
                           per_user_accuracy={"a": 1.0, "b": 0.0},
                           per_user_app_accuracy={("a", "beat_saber"): 1.0, ("b", "beat_saber"): 0.0})
    df = pd.read_csv(write_per_user_csv(report, tmp_path / "u.csv"))
    assert list(df.columns) == ["user", "app", "accuracy"]
    assert len(df) == 4
    assert df[df.app == "all"].set_index("user").accuracy.to_dict() == {"a": 1.0, "b": 0.0}


def test_ranked_candidates_csv(tmp_path):
    ranked = rank_candidates({"a": 2, "b": 1}, {"a": 1.9, "b": 0.8}, ["a", "b", "c"])
    df = pd.read_csv(export_ranked_candidates(ranked, tmp_path / "r.csv"))
    assert df.user.tolist() == ["a", "b", "c"]
    assert df["rank"].tolist() == [1, 2, 3]


def test_stats_table_rows(tmp_path):
    movement = [MovementStats(u, a, 1.0, 2.0, 3.0, 1, 0.5, 0.6) for u in ("x", "y") for a in ("social_vr", "beat_saber")]
    pitch = [PitchStats(u, a, -10.0, 4.0) for u in ("x", "y") for a in ("social_vr", "beat_saber")]
    df = pd.read_csv(write_stats_table(movement, pitch, tmp_path / "t.csv"), index_col=0)
    assert df.index.tolist() == ["Beat Saber", "Social VR"]
    assert df.loc["Social VR", "pitch_mean_deg"] == -10.0
    assert df.loc["Beat Saber", "hmd_m_per_min"] == 1.0


def test_window_dump_is_long_format(tmp_path):
    df = pd.read_csv(dump_windows_csv(make_windows(2, W=6), tmp_path / "w.csv"))
    assert len(df) == 12
    assert df.columns[:5].tolist() == ["window_id", "user", "app", "start_frame", "frame"]
    assert df.shape[1] == 5 + 18


def test_reference_store_round_trip(tmp_path, rng):
    emb = rng.normal(size=(5, 4))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    store = ReferenceStore.build(emb, list("aabbc"), ["beat_saber"] * 5, [0, 50, 0, 50, 0], ["s1"] * 5)
    path = save_reference_store(store, tmp_path / "refs.xrs")
    back = load_reference_store(path)
    assert back.keys == store.keys
    assert np.array_equal(back.embeddings, store.embeddings)
    wrong_magic = tmp_path / "wrong.xrs"
    wrong_magic.write_bytes(b"XRIDCKPT" + path.read_bytes()[8:])
    with pytest.raises(CheckpointMismatch):
        load_reference_store(wrong_magic)
