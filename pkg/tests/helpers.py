"""Builders shared by the test modules."""

import numpy as np

from app.model.feature_model import FeatureStream, FeatureWindow
from app.model.network_model import ModelConfig
from app.model.recording_model import Recording
from app.services import quaternion_service as quat


def make_recording(
    n: int = 61,
    rate: float = 30.0,
    user: str = "u01",
    app: str = "beat_saber",
    session: str = "s1",
    seed: int = 0,
    pos=None,
    rot=None,
) -> Recording:
    """Random but valid recording sampled at `rate` Hz."""
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64) / rate
    if pos is None:
        pos = rng.normal(size=(n, 3, 3)) * 0.2 + np.array([0.0, 1.6, 0.0])
    if rot is None:
        rot = quat.normalize(rng.normal(size=(n, 3, 4)))
    return Recording(user=user, app=app, session=session, t=t, pos=np.asarray(pos, dtype=np.float64),
                     rot=np.asarray(rot, dtype=np.float64), nominal_rate=rate)


def identity_rot(n: int) -> np.ndarray:
    return np.tile(quat.IDENTITY, (n, 3, 1))


def tiny_slm(**overrides) -> ModelConfig:
    base = dict(d_model=8, n_heads=2, ff_dim=16, gru_hidden=8, embedding_size=8, gru_layers=2,
                window_size=6, frame_step=3, dropout_frames=0.0, dropout_global=0.0, gru_dropout=0.0)
    base.update(overrides)
    return ModelConfig.slm_defaults(**base)


def tiny_clm(n_classes: int = 3, **overrides) -> ModelConfig:
    base = dict(d_model=8, n_heads=2, ff_dim=16, gru_hidden=8, gru_layers=1, n_transformer_layers=1,
                window_size=6, frame_step=3, dropout_frames=0.0, dropout_global=0.0, gru_dropout=0.0,
                class_labels=[f"u{i}" for i in range(n_classes)])
    base.update(overrides)
    return ModelConfig.clm_defaults(n_classes=n_classes, **base)


def make_windows(n: int, W: int = 6, user: str = "u0", app: str = "beat_saber", seed: int = 0, offset: float = 0.0):
    rng = np.random.default_rng(seed)
    return [
        FeatureWindow(frames=(rng.normal(size=(W, 18)) * 0.1 + offset).astype(np.float32),
                      user=user, app=app, start_frame=i * W, session="s1")
        for i in range(n)
    ]


def make_stream(length: int, user: str = "u0", app: str = "beat_saber", session: str = "s1", seed: int = 0) -> FeatureStream:
    rng = np.random.default_rng(seed)
    return FeatureStream(rng.normal(size=(length, 18)).astype(np.float32) * 0.1, user, app, session)
