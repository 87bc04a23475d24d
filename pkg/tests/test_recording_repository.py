import json

import numpy as np
import pytest

from app.model.recording_model import DatasetManifest, ManifestEntry, Recording
from app.repositories.manifest_repository import load_manifest, save_manifest
from app.repositories.recording_repository import (
    RECORDING_COLUMNS,
    identity_from_filename,
    parse_recording,
    recording_filename,
    write_recording,
)
from app.services.recording_service import validate_recording
from app.utils.errors import EmptyRecording, IoFailure, MalformedRow, ManifestError, NonMonotonicTime, SchemaMismatch
from tests.helpers import identity_rot, make_recording

_POSE = "0,1.6,0,0,0,0,1"


def _csv(tmp_path, rows, name="u01__beat_saber__s1.csv"):
    path = tmp_path / name
    path.write_text(",".join(RECORDING_COLUMNS) + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path


def test_parse_three_rows(tmp_path):
    path = _csv(tmp_path, [f"{t},{_POSE},{_POSE},{_POSE}" for t in ("0.0", "0.033", "0.066")])
    rec = parse_recording(path)
    assert rec.n_frames == 3
    assert rec.identity == ("u01", "beat_saber", "s1")
    assert np.allclose(rec.t, [0.0, 0.033, 0.066])
    assert rec.nominal_rate == pytest.approx(1 / 0.033)


def test_per_frame_view(tmp_path):
    path = _csv(tmp_path, [f"{t},{_POSE},0.3,1.2,-0.3,0,0,0,1,{_POSE}" for t in ("0.0", "0.1")])
    frame = parse_recording(path).frames[1]
    assert frame.t == pytest.approx(0.1)
    assert np.allclose(frame.left.pos, [0.3, 1.2, -0.3])
    assert np.allclose(frame.hmd.rot, [0.0, 0.0, 0.0, 1.0])


def test_scaled_rotation_is_normalized(tmp_path):
    path = _csv(tmp_path, [f"0.0,{_POSE},0,0,0,0,0,0,2,{_POSE}", f"0.1,{_POSE},{_POSE},{_POSE}"])
    rec = parse_recording(path)
    assert np.allclose(rec.rot[0, 1], [0.0, 0.0, 0.0, 1.0])


def test_header_only_is_empty(tmp_path):
    with pytest.raises(EmptyRecording):
        parse_recording(_csv(tmp_path, []))


def test_unparseable_value_names_row(tmp_path):
    rows = [f"{t},{_POSE},{_POSE},{_POSE}" for t in ("0.0", "0.1")] + [f"0.2,{_POSE},{_POSE},0,1.6,0,0,0,x,1"]
    with pytest.raises(MalformedRow) as err:
        parse_recording(_csv(tmp_path, rows))
    assert err.value.row == 2


def test_zero_rotation_is_malformed(tmp_path):
    with pytest.raises(MalformedRow):
        parse_recording(_csv(tmp_path, [f"0.0,{_POSE},0,0,0,0,0,0,0,{_POSE}"]))


def test_wrong_header_is_schema_mismatch(tmp_path):
    path = tmp_path / "u__beat_saber__s.csv"
    path.write_text("time,a,b\n0,1,2\n", encoding="utf-8")
    with pytest.raises(SchemaMismatch) as err:
        parse_recording(path)
    assert isinstance(err.value, MalformedRow)
    assert err.value.row is None
    assert err.value.expected == list(RECORDING_COLUMNS)
    assert "hmd_px" in str(err.value)


def test_regressing_timestamps(tmp_path):
    times = ["0.0", "0.1", "0.05", "0.2", "0.15", "0.3"]
    with pytest.raises(NonMonotonicTime):
        parse_recording(_csv(tmp_path, [f"{t},{_POSE},{_POSE},{_POSE}" for t in times]))


def test_duplicate_timestamps_keep_first(tmp_path):
    rows = [f"0.0,{_POSE},{_POSE},{_POSE}", f"0.0,1,1,1,0,0,0,1,{_POSE},{_POSE}", f"0.1,{_POSE},{_POSE},{_POSE}"]
    rec = parse_recording(_csv(tmp_path, rows))
    assert rec.n_frames == 2
    assert np.allclose(rec.pos[0, 0], [0.0, 1.6, 0.0])


def test_missing_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        parse_recording(tmp_path / "nope__beat_saber__s1.csv")


@pytest.mark.parametrize("seed", range(100))
def test_write_then_parse_round_trip(tmp_path, seed):
    rec = make_recording(n=50, rate=72.0, seed=seed, user="u07", app="social_vr", session="s2")
    path = write_recording(rec, tmp_path / recording_filename(rec.user, rec.app, rec.session))
    back = parse_recording(path)
    assert back.allclose(rec, atol=1e-6)


def test_validation_is_idempotent(rng):
    for seed in range(20):
        n = 40
        t = np.sort(rng.uniform(0.0, 2.0, size=n))
        t[5] = t[4]  # duplicate timestamp
        rot = rng.normal(size=(n, 3, 4)) * 3.0
        rec = make_recording(n=n, seed=seed, rot=rot)
        raw = rec.with_arrays(t, rec.pos, rot)
        once = validate_recording(raw)
        twice = validate_recording(once)
        assert once.n_frames == n - 1
        assert np.array_equal(twice.t, once.t)
        assert np.array_equal(twice.pos, once.pos)
        assert np.array_equal(twice.rot, once.rot)


def test_write_empty_recording_refused(tmp_path):
    empty = Recording("u", "beat_saber", "s", np.zeros(0), np.zeros((0, 3, 3)), np.zeros((0, 3, 4)), 30.0)
    with pytest.raises(EmptyRecording):
        write_recording(empty, tmp_path / "u__beat_saber__s.csv")


def test_ten_minutes_at_30_hz_writes_18000_rows(tmp_path):
    n = 18000
    rec = make_recording(n=n, rate=30.0, pos=np.zeros((n, 3, 3)), rot=identity_rot(n))
    path = write_recording(rec, tmp_path / "long.csv")
    with open(path, encoding="utf-8") as fh:
        assert sum(1 for _ in fh) == n + 1


def test_identity_from_filename():
    assert identity_from_filename("data/u3__Beat Saber__s9.csv") == ("u3", "beat_saber", "s9")
    with pytest.raises(ValueError):
        identity_from_filename("bad_name.csv")


# --- manifests ---

def _entry(user, app="beat_saber", session="s1", path=None):
    return ManifestEntry(user=user, app=app, session=session, path=path or f"recordings/{user}__{app}__{session}.csv",
                         duration_s=10.0)


def test_manifest_round_trip_resolves_relative_paths(tmp_path):
    (tmp_path / "recordings").mkdir()
    for u in ("a", "b"):
        (tmp_path / "recordings" / f"{u}__beat_saber__s1.csv").write_text("x", encoding="utf-8")
    save_manifest(DatasetManifest(entries=[_entry("a"), _entry("b")]), tmp_path / "manifest.json")
    loaded = load_manifest(tmp_path / "manifest.json")
    assert loaded.users == ["a", "b"]
    assert all(e.path.startswith(str(tmp_path)) for e in loaded.entries)
    assert '"recordings/a__beat_saber__s1.csv"' in (tmp_path / "manifest.json").read_text(encoding="utf-8")


def test_manifest_missing_file(tmp_path):
    save_manifest(DatasetManifest(entries=[_entry("a")]), tmp_path / "manifest.json")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "manifest.json")
    assert len(load_manifest(tmp_path / "manifest.json", check_files=False).entries) == 1


def test_manifest_duplicate_triple(tmp_path):
    payload = DatasetManifest(entries=[_entry("a")]).model_dump(mode="json")
    payload["entries"] *= 2
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    with pytest.raises(ManifestError):
        load_manifest(path, check_files=False)


def test_manifest_not_json(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ManifestError):
        load_manifest(path)


def test_manifest_filter_and_app_order():
    m = DatasetManifest(entries=[_entry("a", "social_vr"), _entry("a", "Synth Riders"), _entry("b", "beat_saber")])
    assert m.apps == ["synth_riders", "beat_saber", "social_vr"]
    assert [e.key for e in m.filter(users=["a"], apps=["social_vr"]).entries] == [("a", "social_vr", "s1")]
