"""
Training loops for the similarity model (batch-all triplet loss on cosine
distance, P users x K windows per batch) and the classification model
(softmax cross-entropy, shuffled fixed-size batches).

Shuffling is a pure function of (seed, epoch); dropout masks are keyed by
(seed, layer, global step). Validation accuracy drives best-checkpoint
selection and early stopping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.preprocessing import LabelEncoder
from tqdm import tqdm

from app.config.env_config import env
from app.model.feature_model import FeatureWindow, stack_windows
from app.model.network_model import LossRecord, TrainConfig
from app.repositories.checkpoint_repository import save_checkpoint
from app.repositories.report_repository import write_jsonl
from app.services import autodiff_service as ad
from app.services.autodiff_service import Tape, Tensor
from app.services.optimizer_service import adam_step
from app.services.sequence_model_service import SequenceModel
from app.utils.errors import DegenerateBatch, EmptyTrainingSet, IndexOutOfRange, ShapeMismatch
from app.utils.logger_util import logger


# --- losses ---

def classification_loss(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean softmax cross-entropy of (B, C) logits against integer targets."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} and targets {targets.shape} do not align")
    n_classes = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise IndexOutOfRange(f"target index out of range for {n_classes} classes")
    onehot = np.zeros(logits.shape, dtype=logits.data.dtype)
    onehot[np.arange(targets.size), targets] = 1.0
    picked = ad.sum(ad.mul(ad.log_softmax(logits, axis=-1), ad.constant(onehot, like=logits)), axis=-1)
    return ad.scale(ad.mean(picked), -1.0)


def valid_triplets(labels: Sequence) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """All (anchor, positive, negative) index triples of a batch."""
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    n = labels.shape[0]
    pos = same & ~np.eye(n, dtype=bool)
    a, p, neg = [], [], []
    for i in range(n):
        ps = np.flatnonzero(pos[i])
        ns = np.flatnonzero(~same[i])
        if ps.size == 0 or ns.size == 0:
            continue
        pp, nn = np.meshgrid(ps, ns, indexing="ij")
        a.append(np.full(pp.size, i))
        p.append(pp.ravel())
        neg.append(nn.ravel())
    if not a:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty
    return np.concatenate(a), np.concatenate(p), np.concatenate(neg)


def similarity_loss(embeddings: Tensor, labels: Sequence, margin: float = 0.3) -> Tensor:
    """
    Batch-all triplet loss with d = 1 - cos:
    mean over valid triplets of max(0, d(a, p) - d(a, n) + margin).
    """
    labels = np.asarray(labels)
    if embeddings.ndim != 2 or labels.shape != (embeddings.shape[0],):
        raise ShapeMismatch(f"embeddings {embeddings.shape} and labels {labels.shape} do not align")
    if np.unique(labels).size < 2:
        raise DegenerateBatch("similarity batch holds a single class")
    a, p, n = valid_triplets(labels)
    if a.size == 0:
        raise DegenerateBatch("similarity batch has no class with two members")
    B = embeddings.shape[0]
    unit = ad.l2_normalize(embeddings, axis=-1)
    cos = ad.reshape(ad.matmul(unit, ad.transpose(unit, (1, 0))), (B * B, 1))
    cos_ap = ad.take_rows(cos, a * B + p)
    cos_an = ad.take_rows(cos, a * B + n)
    # d(a,p) - d(a,n) = cos(a,n) - cos(a,p)
    return ad.mean(ad.relu(ad.add_scalar(ad.sub(cos_an, cos_ap), margin)))


# --- batching ---

def classification_batches(n: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def pk_batches(labels: Sequence, p_users: int, k_windows: int, rng: np.random.Generator) -> List[np.ndarray]:
    """
    P users x K windows per batch, without replacement inside an epoch. P shrinks
    to the number of users holding at least K windows.
    """
    labels = np.asarray(labels)
    pools: Dict[str, List[int]] = {}
    for u in sorted(set(labels.tolist())):
        idx = np.flatnonzero(labels == u)
        if idx.size >= k_windows:
            pools[u] = rng.permutation(idx).tolist()
    p_eff = min(p_users, len(pools))
    if p_eff < 2:
        raise DegenerateBatch(f"need two users with at least {k_windows} windows; have {len(pools)}")
    batches = []
    while True:
        eligible = sorted(u for u, pool in pools.items() if len(pool) >= k_windows)
        if len(eligible) < p_eff:
            break
        chosen = rng.choice(len(eligible), size=p_eff, replace=False)
        batch = []
        for c in sorted(chosen):
            pool = pools[eligible[c]]
            batch.extend(pool[:k_windows])
            del pool[:k_windows]
        batches.append(np.asarray(batch, dtype=np.int64))
    return batches


# --- metrics ---

def nn_accuracy_loo(embeddings: np.ndarray, labels: Sequence) -> float:
    """Leave-one-out nearest-neighbour accuracy under cosine similarity."""
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    if n < 2:
        return 0.0
    e = embeddings.astype(np.float64)
    e = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
    correct = 0
    for start in range(0, n, 1024):
        sims = e[start:start + 1024] @ e.T
        rows = np.arange(sims.shape[0])
        sims[rows, start + rows] = -np.inf
        correct += int(np.sum(labels[np.argmax(sims, axis=1)] == labels[start:start + 1024]))
    return correct / n


@dataclass
class TrainResult:
    model: SequenceModel
    history: List[LossRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = 0.0
    epochs_run: int = 0
    stopped_early: bool = False
    class_labels: Optional[List[str]] = None

    def to_dict(self) -> dict:
        return {
            "kind": self.model.kind,
            "best_epoch": self.best_epoch,
            "max_val_accuracy": self.best_val_accuracy,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "class_labels": self.class_labels,
        }


def fit_label_encoder(model: SequenceModel, users: Sequence[str]) -> LabelEncoder:
    classes = model.config.class_labels or sorted(set(users))
    le = LabelEncoder().fit(classes)
    if len(le.classes_) != model.config.n_classes:
        raise ShapeMismatch(f"{len(le.classes_)} users for a {model.config.n_classes}-class model")
    return le


class _Evaluator:
    """Eval-mode loss and accuracy for one split."""

    def __init__(self, model: SequenceModel, cfg: TrainConfig, x: np.ndarray, users: np.ndarray,
                 targets: Optional[np.ndarray]):
        self.model, self.cfg, self.x, self.users, self.targets = model, cfg, x, users, targets
        if cfg.eval_max_windows and x.shape[0] > cfg.eval_max_windows:
            keep = np.sort(np.random.default_rng([cfg.seed, 7]).choice(x.shape[0], cfg.eval_max_windows, replace=False))
            self.x, self.users = x[keep], users[keep]
            self.targets = targets[keep] if targets is not None else None

    def __call__(self) -> Tuple[float, float]:
        if self.model.kind == "clm":
            logits = self.model.predict_logits(self.x)
            loss = float(classification_loss(Tensor(logits), self.targets).data)
            return loss, float(np.mean(np.argmax(logits, axis=1) == self.targets))
        emb = self.model.embed(self.x)
        acc = nn_accuracy_loo(emb, self.users)
        try:
            batch = pk_batches(self.users, self.cfg.p_users, self.cfg.k_windows, np.random.default_rng([self.cfg.seed, 11]))[0]
            loss = float(similarity_loss(Tensor(emb[batch]), self.users[batch], self.cfg.margin).data)
        except (DegenerateBatch, IndexError):
            loss = 0.0
        return loss, acc


def train(
    model: SequenceModel,
    train_windows: Sequence[FeatureWindow],
    config: TrainConfig,
    val_windows: Optional[Sequence[FeatureWindow]] = None,
) -> TrainResult:
    if not train_windows:
        raise EmptyTrainingSet("no training windows")
    kind = model.kind
    lr = model.config.learning_rate if config.learning_rate is None else config.learning_rate
    x_train = stack_windows(list(train_windows))
    u_train = np.asarray([w.user for w in train_windows], dtype=object)

    le = fit_label_encoder(model, u_train.tolist()) if kind == "clm" else None
    y_train = le.transform(u_train.tolist()) if le is not None else None

    val_windows = list(val_windows or [])
    if val_windows:
        x_val = stack_windows(val_windows)
        u_val = np.asarray([w.user for w in val_windows], dtype=object)
        y_val = le.transform(u_val.tolist()) if le is not None else None
        val_eval = _Evaluator(model, config, x_val, u_val, y_val)
    else:
        logger.warning("No validation windows; model selection falls back to the training metric")
        val_eval = None
    train_eval = _Evaluator(model, config, x_train, u_train, y_train)

    params = dict(model.params.items())
    result = TrainResult(model=model, class_labels=list(le.classes_) if le is not None else None)
    best_arrays = model.params.arrays()
    best_acc = -1.0
    since_best = 0
    step = 0
    if config.log_path:
        write_jsonl([], config.log_path)

    logger.info("Training %s model: %d windows, %d parameters, lr=%g",
                kind, x_train.shape[0], model.params.num_parameters, lr)
    epochs = tqdm(range(1, config.epochs + 1), desc=f"train {kind}", disable=not env.XRID_PROGRESS, leave=False)
    for epoch in epochs:
        rng = np.random.default_rng([config.seed, epoch])
        if kind == "clm":
            batches = classification_batches(x_train.shape[0], config.batch_size, rng)
        else:
            batches = pk_batches(u_train, config.p_users, config.k_windows, rng)

        for idx in batches:
            with Tape() as tape:
                out = model.forward(x_train[idx], training=True, seed=config.seed, step=step)
                if kind == "clm":
                    loss = classification_loss(out, y_train[idx])
                else:
                    loss = similarity_loss(out, u_train[idx], config.margin)
            grads = ad.backward(tape, loss, params)
            adam_step(model.params, grads, lr)
            step += 1

        tr_loss, tr_acc = train_eval()
        records = [LossRecord(epoch=epoch, split="train", loss=tr_loss, accuracy=tr_acc)]
        if val_eval is not None:
            va_loss, va_acc = val_eval()
            records.append(LossRecord(epoch=epoch, split="val", loss=va_loss, accuracy=va_acc))
        else:
            va_acc = tr_acc
        result.history.extend(records)
        if config.log_path:
            write_jsonl([r.model_dump() for r in records], config.log_path, append=True)
        epochs.set_postfix(loss=f"{tr_loss:.4f}", acc=f"{va_acc:.3f}")
        logger.debug("epoch %d: train loss %.5f acc %.4f, selection acc %.4f", epoch, tr_loss, tr_acc, va_acc)

        result.epochs_run = epoch
        if va_acc > best_acc:
            best_acc, since_best = va_acc, 0
            result.best_epoch = epoch
            best_arrays = model.params.arrays()
            if config.checkpoint_path:
                save_checkpoint(model, config.checkpoint_path,
                                {"epoch": epoch, "val_accuracy": va_acc, "class_labels": result.class_labels})
        else:
            since_best += 1
            if since_best >= config.patience:
                result.stopped_early = True
                logger.info("Early stop at epoch %d (best epoch %d, accuracy %.4f)", epoch, result.best_epoch, best_acc)
                break

    model.params.load_arrays(best_arrays)
    result.best_val_accuracy = max(best_acc, 0.0)
    return result
