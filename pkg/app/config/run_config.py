"""
Run configuration: one flat JSON file (`--config`) merged with command-line
flags, flags winning. The resolved object is written as `run_config.json` into
every stage's output directory.

Presets:
- desk:  tiny models and short windows, sized for laptop-scale synthetic runs
- full:  the final hyperparameters of both models at full scale
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, Field, ValidationError, model_validator

from app.config.env_config import env
from app.model.evaluation_model import SplitSpec, TEMPORAL_SPLIT_FRACTIONS, USER_SPLIT_WEIGHTS
from app.model.network_model import ModelConfig, TrainConfig
from app.model.recording_model import APP_ORDER
from app.repositories.report_repository import write_json
from app.utils.errors import ConfigError, IoFailure

Preset = Literal["desk", "full"]

RUN_CONFIG_FILENAME = "run_config.json"

DESK_SLM: Dict[str, Any] = dict(
    d_model=16, n_transformer_layers=1, ff_dim=32, n_heads=2, gru_hidden=16, gru_layers=2,
    embedding_size=16, window_size=60, frame_step=30, learning_rate=0.003,
)
DESK_CLM: Dict[str, Any] = dict(
    d_model=16, n_transformer_layers=1, ff_dim=32, n_heads=2, gru_hidden=16, gru_layers=1,
    window_size=90, frame_step=30, learning_rate=0.003,
)
DESK_TRAIN: Dict[str, Any] = dict(epochs=15, patience=5, p_users=4, k_windows=4, batch_size=32, eval_max_windows=512)

# sequence spans, seconds
SPANS: Dict[str, Dict[str, float]] = {
    "desk": {"slm": 30.0, "clm": 30.0},
    "full": {"slm": 600.0, "clm": 150.0},
}


def _validated(factory, **kwargs):
    try:
        return factory(**kwargs)
    except ValidationError as exc:
        err = exc.errors()[0]
        raise ConfigError(f"invalid configuration: {'.'.join(map(str, err['loc']))}: {err['msg']}") from exc


class RunConfig(BaseModel):
    data_dir: str = "data"
    out_dir: str = "out"
    seed: int = 0
    threads: int = Field(default_factory=lambda: env.XRID_THREADS, ge=1)
    preset: Preset = "desk"

    # synthetic data
    synth_users: int = Field(default=5, ge=2)
    synth_minutes: float = Field(default=2.0, gt=0)
    synth_modulation: float = Field(default=1.0, ge=0)
    synth_rate_hz: float = Field(default=60.0, ge=30)
    apps: List[str] = Field(default_factory=lambda: list(APP_ORDER))

    # model / training overrides on top of the preset
    slm: Dict[str, Any] = Field(default_factory=dict)
    clm: Dict[str, Any] = Field(default_factory=dict)
    train: Dict[str, Any] = Field(default_factory=dict)

    user_weights: List[int] = Field(default_factory=lambda: list(USER_SPLIT_WEIGHTS))
    temporal_fractions: List[float] = Field(default_factory=lambda: list(TEMPORAL_SPLIT_FRACTIONS))
    slm_span_seconds: Optional[float] = Field(default=None, gt=0)
    clm_span_seconds: Optional[float] = Field(default=None, gt=0)
    vote_k: int = Field(default=1, ge=1)
    use_cache: bool = True

    @model_validator(mode="after")
    def _check_split(self) -> "RunConfig":
        # surfaces bad split settings at resolve time rather than mid-stage
        try:
            SplitSpec(user_weights=tuple(self.user_weights), temporal_fractions=tuple(self.temporal_fractions))
        except ValidationError as exc:
            raise ValueError(exc.errors()[0]["msg"]) from None
        return self

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def slm_span(self) -> float:
        return self.slm_span_seconds or SPANS[self.preset]["slm"]

    @property
    def clm_span(self) -> float:
        return self.clm_span_seconds or SPANS[self.preset]["clm"]

    def slm_config(self) -> ModelConfig:
        base = dict(DESK_SLM) if self.preset == "desk" else {}
        base.update(self.slm)
        base.setdefault("init_seed", self.seed)
        return _validated(ModelConfig.slm_defaults, **base)

    def clm_config(self, class_labels: List[str]) -> ModelConfig:
        base = dict(DESK_CLM) if self.preset == "desk" else {}
        base.update(self.clm)
        base.setdefault("init_seed", self.seed)
        base["class_labels"] = list(class_labels)
        return _validated(ModelConfig.clm_defaults, n_classes=len(class_labels), **base)

    def train_config(self, **overrides: Any) -> TrainConfig:
        base = dict(DESK_TRAIN) if self.preset == "desk" else {}
        base.update(self.train)
        base["seed"] = self.seed
        base.update(overrides)
        return _validated(TrainConfig, **base)

    def split_spec(self, mode: str, model: ModelConfig) -> SplitSpec:
        return _validated(
            SplitSpec,
            mode=mode,
            user_weights=tuple(self.user_weights),
            temporal_fractions=tuple(self.temporal_fractions),
            frame_step=model.frame_step,
            window_size=model.window_size,
        )

    def write(self, directory: Union[str, Path]) -> Path:
        return write_json(self.model_dump(mode="json"), Path(directory) / RUN_CONFIG_FILENAME)

    @classmethod
    def resolve(cls, config_path: Optional[Union[str, Path]] = None, **flags: Any) -> "RunConfig":
        """File values first, then every flag that was actually given (not None)."""
        values: Dict[str, Any] = {}
        if config_path:
            try:
                values = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except OSError as exc:
                raise IoFailure(f"cannot read config {config_path}: {exc}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {config_path} is not valid JSON: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError(f"config {config_path} must hold a JSON object")
        values.update({k: v for k, v in flags.items() if v is not None})
        try:
            return cls(**values)
        except ValidationError as exc:
            err = exc.errors()[0]
            raise ConfigError(f"invalid run configuration: {'.'.join(map(str, err['loc']))}: {err['msg']}") from exc
