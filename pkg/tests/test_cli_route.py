import json

import numpy as np
import pytest

from app.config.run_config import RunConfig
from app.controllers.pipeline_controller import PipelineController
from app.repositories.manifest_repository import load_manifest
from app.repositories.recording_repository import recording_filename, write_recording
from app.routes.cli_route import run
from app.utils.errors import ManifestError, StageFailed
from tests.helpers import make_recording


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_synth_writes_recordings_and_manifest(workdir, capsys):
    code = run(["synth", "--users", "5", "--minutes", "0.05", "--out", "data", "--seed", "3"])
    assert code == 0
    summary = _last_json(capsys)
    assert summary["recordings"] == 25 and summary["users"] == 5
    assert len(list((workdir / "data").rglob("*.csv"))) == 25
    assert len(load_manifest(workdir / "data" / "manifest.json").entries) == 25
    assert (workdir / "data" / "run_config.json").is_file()


def test_unknown_command_is_usage_error(workdir, capsys):
    assert run(["train-everything"]) == 2
    assert "Error:" in capsys.readouterr().err


def test_bad_flag_values_are_usage_errors(workdir):
    assert run(["synth", "--threads", "0"]) == 2
    assert run(["train", "--model", "xgb"]) == 2
    assert run(["evaluate"]) == 2


def test_missing_checkpoint_is_domain_error(workdir):
    assert run(["synth", "--users", "3", "--minutes", "0.05"]) == 0
    assert run(["evaluate", "--mode", "overall"]) == 1


def test_invalid_config_file_is_domain_error(workdir):
    (workdir / "run.json").write_text('{"threads": 0}', encoding="utf-8")
    assert run(["synth", "--config", "run.json"]) == 1


def test_ingest_skips_slow_captures(workdir, capsys):
    src = workdir / "raw"
    src.mkdir()
    for i, rate in enumerate([72.0, 30.0, 20.0]):
        rec = make_recording(n=40, rate=rate, user=f"p{i}", app="Beat Saber", seed=i)
        write_recording(rec, src / recording_filename(rec.user, rec.app, rec.session))
    assert run(["ingest", str(src), "--data", "dataset"]) == 0
    assert _last_json(capsys)["recordings"] == 2
    manifest = load_manifest(workdir / "dataset" / "manifest.json")
    assert manifest.users == ["p0", "p1"]
    assert manifest.apps == ["beat_saber"]


def test_ingest_of_empty_folder(workdir):
    (workdir / "empty").mkdir()
    with pytest.raises(ManifestError, match="no recording CSV"):
        PipelineController(RunConfig.resolve()).ingest("empty")
    assert run(["ingest", "empty"]) == 1
    (workdir / "empty" / "no_identity.csv").write_text("t\n", encoding="utf-8")
    assert run(["ingest", "empty"]) == 1


def test_preprocess_reuses_cache(workdir, capsys):
    assert run(["synth", "--users", "3", "--minutes", "0.1"]) == 0
    assert run(["preprocess", "--dump-csv"]) == 0
    first = _last_json(capsys)
    assert first["recordings"] == 15
    assert first["slm_windows"] > 0 and first["clm_windows"] > 0
    assert (workdir / "out" / "preprocess" / "windows.csv").is_file()
    assert run(["preprocess"]) == 0
    again = _last_json(capsys)
    assert again["cache_hits"] == 2 * 15
    assert again["slm_windows"] == first["slm_windows"]


def test_no_cache_flag_bypasses_cache(workdir, capsys):
    assert run(["synth", "--users", "3", "--minutes", "0.1"]) == 0
    assert run(["preprocess"]) == 0
    assert run(["preprocess", "--no-cache"]) == 0
    assert _last_json(capsys)["cache_hits"] == 0


def test_stats_stage_tables(workdir, capsys):
    assert run(["synth", "--users", "3", "--minutes", "1.0", "--rate", "30"]) == 0
    assert run(["stats"]) == 0
    assert len(_last_json(capsys)["anova"]) == 4
    for name in ("table3.csv", "anova.csv", "posthoc.csv", "movement_per_user.csv", "pitch_per_user.csv"):
        assert (workdir / "out" / "stats" / name).is_file()


def test_threads_do_not_change_streams(workdir):
    assert run(["synth", "--users", "3", "--minutes", "0.1"]) == 0
    one = PipelineController(RunConfig.resolve(threads=1, use_cache=False))
    four = PipelineController(RunConfig.resolve(threads=4, use_cache=False))
    enc = one.config.slm_config().encoding
    a = one.load_streams(one.manifest(), enc)
    b = four.load_streams(four.manifest(), enc)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))


@pytest.mark.slow
def test_all_stages_on_synthetic_data(workdir, capsys):
    (workdir / "run.json").write_text(json.dumps({
        "synth_users": 5, "synth_minutes": 0.6, "apps": ["beat_saber", "social_vr"],
        "train": {"epochs": 2, "patience": 2},
    }), encoding="utf-8")
    assert run(["all", "--config", "run.json"]) == 0
    stages = _last_json(capsys)["stages"]
    assert stages[0] == "synth" and stages[-1] == "stats"
    out = workdir / "out"
    assert (out / "train_slm" / "slm.ckpt").is_file()
    assert (out / "train_clm" / "clm.ckpt").is_file()
    assert (out / "evaluate_overall" / "ranked" / "decisions.csv").is_file()
    assert (out / "evaluate_cross_app" / "heatmap_nn_accuracy_raw.csv").is_file()
    metrics = json.loads((out / "evaluate_overall" / "metrics.json").read_text(encoding="utf-8"))
    assert 0.0 <= metrics["overall_accuracy"] <= 1.0

    # test users lack an app named in the configuration
    (workdir / "wide.json").write_text(json.dumps({"apps": ["beat_saber", "social_vr", "half_life_alyx"]}),
                                       encoding="utf-8")
    assert run(["evaluate", "--mode", "cross-app", "--config", "wide.json"]) == 1


def test_failed_stage_is_named(workdir):
    controller = PipelineController(RunConfig.resolve(synth_users=2, synth_minutes=0.05))
    with pytest.raises(StageFailed) as err:
        controller.run_all()
    assert "train_slm" in str(err.value)


def test_bad_split_fractions_are_domain_errors(workdir, capsys):
    (workdir / "run.json").write_text(json.dumps({"temporal_fractions": [0.5, 0.5, 0.5]}), encoding="utf-8")
    assert run(["train", "--model", "clm", "--config", "run.json"]) == 1
    assert run(["synth", "--config", "run.json"]) == 1


@pytest.mark.slow
def test_repeat_runs_are_byte_identical(workdir):
    (workdir / "run.json").write_text(json.dumps({
        "synth_users": 5, "synth_minutes": 0.6, "apps": ["beat_saber", "social_vr"],
        "train": {"epochs": 1, "patience": 1},
    }), encoding="utf-8")
    common = ["--config", "run.json", "--seed", "3", "--threads", "1", "--no-cache"]
    assert run(["all", *common, "--out", "first"]) == 0
    assert run(["all", *common, "--out", "second"]) == 0

    first, second = workdir / "first", workdir / "second"
    produced = sorted(p.relative_to(first) for p in first.rglob("*")
                      if p.is_file() and (p.suffix in {".csv", ".ckpt", ".xrs"} or p.name == "metrics.json"))
    assert any(p.name.startswith("heatmap_") for p in produced)
    assert any(p.suffix == ".ckpt" for p in produced)
    for rel in produced:
        assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
