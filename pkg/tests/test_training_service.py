import numpy as np
import pytest

from app.model.network_model import TrainConfig
from app.repositories.checkpoint_repository import load_checkpoint
from app.repositories.report_repository import read_jsonl
from app.services.autodiff_service import Tensor
from app.services.optimizer_service import ParamSet, grad_check
from app.services.sequence_model_service import SequenceModel
from app.services.training_service import (
    classification_loss,
    nn_accuracy_loo,
    pk_batches,
    similarity_loss,
    train,
    valid_triplets,
)
from app.utils.errors import DegenerateBatch, EmptyTrainingSet, IndexOutOfRange, ShapeMismatch
from tests.helpers import make_windows, tiny_clm, tiny_slm


# --- classification loss ---

def test_uniform_logits_give_log_of_class_count():
    loss = classification_loss(Tensor(np.zeros((4, 17))), [0, 5, 16, 3])
    assert float(loss.data) == pytest.approx(np.log(17), abs=1e-3)
    assert float(loss.data) == pytest.approx(2.833, abs=1e-3)


def test_saturated_logits():
    right = np.full((2, 3), -50.0)
    right[[0, 1], [1, 2]] = 50.0
    assert float(classification_loss(Tensor(right), [1, 2]).data) == pytest.approx(0.0, abs=1e-12)
    assert float(classification_loss(Tensor(right), [0, 0]).data) == pytest.approx(100.0, rel=1e-6)


def test_cross_entropy_matches_log_sum_exp(rng):
    logits = rng.normal(size=(6, 5)) * 3
    targets = rng.integers(0, 5, size=6)
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    expected = np.mean(lse - logits[np.arange(6), targets])
    assert float(classification_loss(Tensor(logits), targets).data) == pytest.approx(expected)


def test_classification_loss_validation():
    with pytest.raises(IndexOutOfRange):
        classification_loss(Tensor(np.zeros((2, 3))), [0, 3])
    with pytest.raises(ShapeMismatch):
        classification_loss(Tensor(np.zeros((2, 3))), [0])


# --- triplet loss ---

def test_separated_classes_have_zero_triplet_loss():
    emb = np.array([[1, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 0]], dtype=np.float64)
    assert float(similarity_loss(Tensor(emb), ["a", "a", "b", "b"]).data) == 0.0


def test_collapsed_embeddings_cost_the_margin():
    emb = np.ones((4, 3))
    assert float(similarity_loss(Tensor(emb), ["a", "a", "b", "b"], margin=0.3).data) == pytest.approx(0.3)


def test_triplet_loss_matches_brute_force(rng):
    emb = rng.normal(size=(8, 4))
    labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    terms = []
    for a in range(8):
        for p in range(8):
            for n in range(8):
                if a != p and labels[a] == labels[p] and labels[a] != labels[n]:
                    d_ap = 1 - unit[a] @ unit[p]
                    d_an = 1 - unit[a] @ unit[n]
                    terms.append(max(0.0, d_ap - d_an + 0.3))
    assert len(valid_triplets(labels)[0]) == len(terms) == 8 * 6
    assert float(similarity_loss(Tensor(emb), labels, margin=0.3).data) == pytest.approx(np.mean(terms))


def test_triplet_loss_gradient(rng):
    params = ParamSet()
    params.add("e", rng.normal(size=(6, 3)))
    labels = ["a", "a", "b", "b", "c", "c"]
    report = grad_check(lambda: similarity_loss(params["e"], labels, margin=0.5), params, h=1e-6, tol=1e-4)
    assert report.passed, report.to_dict()


def test_degenerate_triplet_batches():
    with pytest.raises(DegenerateBatch):
        similarity_loss(Tensor(np.eye(3)), ["a", "a", "a"])
    with pytest.raises(DegenerateBatch):
        similarity_loss(Tensor(np.eye(3)), ["a", "b", "c"])


# --- batching ---

def test_pk_batches_cover_each_window_once():
    labels = np.repeat(["u0", "u1", "u2", "u3"], 8)
    batches = pk_batches(labels, p_users=4, k_windows=4, rng=np.random.default_rng(0))
    assert len(batches) == 2
    for b in batches:
        users, counts = np.unique(labels[b], return_counts=True)
        assert len(users) == 4 and set(counts) == {4}
    assert sorted(np.concatenate(batches).tolist()) == list(range(32))


def test_pk_batches_are_seeded():
    labels = np.repeat(["a", "b", "c"], 6)
    a = pk_batches(labels, 3, 2, np.random.default_rng(5))
    b = pk_batches(labels, 3, 2, np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_pk_batches_shrink_p_and_need_two_users():
    labels = np.array(["a"] * 4 + ["b"] * 4 + ["c"])
    assert all(len(b) == 8 for b in pk_batches(labels, 8, 4, np.random.default_rng(0)))
    with pytest.raises(DegenerateBatch):
        pk_batches(np.array(["a"] * 4 + ["b"] * 3), 2, 4, np.random.default_rng(0))


def test_leave_one_out_accuracy():
    emb = np.array([[1, 0], [0.9, 0.1], [0, 1], [0.1, 0.9]])
    assert nn_accuracy_loo(emb, ["a", "a", "b", "b"]) == 1.0
    assert nn_accuracy_loo(emb, ["a", "b", "a", "b"]) == 0.0
    assert nn_accuracy_loo(emb[:1], ["a"]) == 0.0


# --- training loop ---

def _user_windows(users, per_user=8, W=6):
    out = []
    for i, u in enumerate(users):
        out += make_windows(per_user, W=W, user=u, seed=i, offset=float(i))
    return out


def test_zero_learning_rate_leaves_parameters():
    model = SequenceModel(tiny_clm(n_classes=3))
    before = model.params.arrays()
    train(model, _user_windows(["u0", "u1", "u2"]), TrainConfig(epochs=1, learning_rate=0.0, batch_size=4))
    after = model.params.arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_same_seed_gives_identical_runs():
    cfg = TrainConfig(epochs=2, p_users=2, k_windows=2, seed=9, learning_rate=0.01)
    runs = []
    for _ in range(2):
        model = SequenceModel(tiny_slm(dropout_frames=0.2, dropout_global=0.1))
        result = train(model, _user_windows(["a", "b", "c"], per_user=4), cfg)
        runs.append((model.params.arrays(), [r.model_dump() for r in result.history]))
    (a, ha), (b, hb) = runs
    assert ha == hb
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_training_writes_log_and_checkpoint(tmp_path):
    cfg = TrainConfig(epochs=2, batch_size=8, learning_rate=0.01,
                      checkpoint_path=str(tmp_path / "m.ckpt"), log_path=str(tmp_path / "log.jsonl"))
    model = SequenceModel(tiny_clm(n_classes=2))
    windows = _user_windows(["u0", "u1"])
    result = train(model, windows, cfg, val_windows=windows[::2])
    rows = read_jsonl(tmp_path / "log.jsonl")
    assert [(r["epoch"], r["split"]) for r in rows] == [(1, "train"), (1, "val"), (2, "train"), (2, "val")]
    restored, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta["epoch"] == result.best_epoch
    assert meta["class_labels"] == ["u0", "u1"]
    assert result.to_dict()["kind"] == "clm"


def test_empty_training_set():
    with pytest.raises(EmptyTrainingSet):
        train(SequenceModel(tiny_slm()), [], TrainConfig())


def test_class_count_must_match_users():
    model = SequenceModel(tiny_clm(n_classes=3, class_labels=None))
    with pytest.raises(ShapeMismatch):
        train(model, _user_windows(["u0", "u1"]), TrainConfig(epochs=1))


def test_early_stopping_after_patience():
    cfg = TrainConfig(epochs=10, patience=2, batch_size=4, learning_rate=0.0)
    result = train(SequenceModel(tiny_clm(n_classes=2)), _user_windows(["u0", "u1"]), cfg)
    assert result.stopped_early
    assert result.epochs_run == 3
    assert result.best_epoch == 1


@pytest.mark.slow
def test_classifier_overfits_separable_users():
    windows = _user_windows(["u0", "u1", "u2"], per_user=10)
    model = SequenceModel(tiny_clm(n_classes=3))
    result = train(model, windows, TrainConfig(epochs=40, batch_size=10, learning_rate=0.01, patience=40),
                   val_windows=windows)
    assert result.best_val_accuracy >= 0.9


@pytest.mark.slow
def test_similarity_model_separates_users():
    windows = _user_windows(["a", "b", "c", "d"], per_user=8)
    model = SequenceModel(tiny_slm())
    cfg = TrainConfig(epochs=30, p_users=4, k_windows=4, learning_rate=0.01, patience=30)
    result = train(model, windows, cfg, val_windows=windows)
    assert result.best_val_accuracy >= 0.9
