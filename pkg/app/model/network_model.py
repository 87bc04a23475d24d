from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from app.model.feature_model import N_FEATURES, EncodingConfig

ModelKind = Literal["slm", "clm"]

# Longest window the positional table covers.
MAX_POSITIONS = 600


class ModelConfig(BaseModel):
    """
    Sequence-model hyperparameters. `slm_defaults()` / `clm_defaults()` give the
    final configurations of the similarity and classification models.
    """

    kind: ModelKind = "slm"
    d_model: int = Field(default=320, gt=0)
    n_transformer_layers: int = Field(default=1, ge=1)
    ff_dim: int = Field(default=960, gt=0)
    n_heads: int = Field(default=16, ge=1)
    gru_hidden: int = Field(default=480, gt=0)
    gru_layers: int = Field(default=2, ge=1)
    gru_dropout: float = Field(default=0.1, ge=0.0, lt=1.0)
    dropout_frames: float = Field(default=0.3, ge=0.0, lt=1.0)
    dropout_global: float = Field(default=0.2, ge=0.0, lt=1.0)
    embedding_size: Optional[int] = Field(default=480, gt=0)
    n_classes: Optional[int] = Field(default=None, ge=2)
    class_labels: Optional[List[str]] = None
    window_size: int = Field(default=450, gt=0)
    frame_step: int = Field(default=50, gt=0)
    learning_rate: float = Field(default=0.00098, ge=0.0)
    max_positions: int = Field(default=MAX_POSITIONS, gt=0)
    n_features: int = Field(default=N_FEATURES, gt=0)
    layer_norm_eps: float = Field(default=1e-5, gt=0.0)
    init_seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "ModelConfig":
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.window_size > self.max_positions:
            raise ValueError(f"window_size={self.window_size} exceeds max_positions={self.max_positions}")
        if self.kind == "slm":
            if self.embedding_size is None:
                self.embedding_size = self.gru_hidden
            if self.embedding_size != self.gru_hidden:
                raise ValueError("the similarity model's embedding is the GRU state: embedding_size must equal gru_hidden")
        else:
            if self.n_classes is None:
                raise ValueError("classification model requires n_classes")
            if self.class_labels is not None and len(self.class_labels) != self.n_classes:
                raise ValueError("class_labels must have n_classes entries")
        return self

    @property
    def output_size(self) -> int:
        return int(self.embedding_size if self.kind == "slm" else self.n_classes)

    @property
    def encoding(self) -> EncodingConfig:
        return EncodingConfig(window_size=self.window_size, frame_step=self.frame_step)

    @classmethod
    def slm_defaults(cls, **overrides: Any) -> "ModelConfig":
        base: Dict[str, Any] = dict(
            kind="slm", d_model=320, n_transformer_layers=1, ff_dim=960, n_heads=16,
            gru_hidden=480, gru_layers=2, gru_dropout=0.1, dropout_frames=0.3, dropout_global=0.2,
            embedding_size=480, n_classes=None, window_size=450, frame_step=50, learning_rate=0.00098,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def clm_defaults(cls, n_classes: int, **overrides: Any) -> "ModelConfig":
        base: Dict[str, Any] = dict(
            kind="clm", d_model=704, n_transformer_layers=2, ff_dim=640, n_heads=8,
            gru_hidden=512, gru_layers=1, gru_dropout=0.1, dropout_frames=0.3, dropout_global=0.2,
            embedding_size=None, n_classes=n_classes, window_size=600, frame_step=100, learning_rate=0.0004,
        )
        base.update(overrides)
        return cls(**base)


class TrainConfig(BaseModel):
    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=32, ge=1)        # classification batches
    p_users: int = Field(default=8, ge=2)            # similarity batches: P users x K windows
    k_windows: int = Field(default=4, ge=2)
    seed: int = 0
    margin: float = Field(default=0.3, ge=0.0)
    patience: int = Field(default=10, ge=1)
    learning_rate: Optional[float] = Field(default=None, ge=0.0)  # falls back to ModelConfig.learning_rate
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    # per-epoch accuracy is measured on at most this many windows per split
    eval_max_windows: Optional[int] = Field(default=2048, ge=2)


class LossRecord(BaseModel):
    epoch: int = Field(ge=0)
    split: Literal["train", "val"]
    loss: float
    accuracy: float = Field(ge=0.0, le=1.0)

    @field_validator("loss")
    @classmethod
    def _finite(cls, v: float) -> float:
        if v != v or v in (float("inf"), float("-inf")):
            raise ValueError("loss must be finite")
        return v
