"""
Transformer + GRU sequence model.

    frame dropout -> linear 18->d_model -> + sinusoidal positions -> dropout
    -> encoder layers (MHA, add & norm, ReLU FFN, add & norm) -> dropout
    -> GRU stack -> last hidden state
    -> similarity model: L2-normalized embedding | classification model: linear logits

All tensors are batched: (B, W, F).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.model.feature_model import FeatureWindow, stack_windows
from app.model.network_model import ModelConfig
from app.services import autodiff_service as ad
from app.services.autodiff_service import Tensor
from app.services.optimizer_service import ParamSet
from app.utils.errors import ShapeMismatch, WindowTooLong

# dropout stream ids; layer-indexed ones are offset by the layer number
DROP_FRAMES = 0
DROP_INPUT = 1
DROP_PRE_GRU = 2
DROP_ATTN = 100
DROP_FFN = 200
DROP_GRU = 300


def positional_table(max_positions: int, d_model: int) -> np.ndarray:
    """pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same)."""
    pos = np.arange(max_positions, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((max_positions, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def positional_encode(x: Tensor, table: np.ndarray) -> Tensor:
    W = x.shape[-2]
    if W > table.shape[0]:
        raise WindowTooLong(f"window of {W} frames exceeds the positional table ({table.shape[0]})")
    if x.shape[-1] != table.shape[1]:
        raise ShapeMismatch(f"positional_encode: feature size {x.shape[-1]} != {table.shape[1]}")
    return ad.add(x, ad.constant(table[:W], like=x))


def _linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    return ad.add(ad.matmul(x, W), b)


def _affine_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    return ad.add(ad.mul(ad.layer_norm(x, axis=-1, eps=eps), gamma), beta)


def multi_head_attention(x: Tensor, p: Dict[str, Tensor], n_heads: int) -> Tuple[Tensor, Tensor]:
    """Bidirectional self-attention; returns (output, attention weights (B, h, W, W))."""
    B, W, d = x.shape
    if d % n_heads:
        raise ShapeMismatch(f"d_model={d} not divisible by n_heads={n_heads}")
    dk = d // n_heads

    def heads(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, W, n_heads, dk)), (0, 2, 1, 3))

    q = heads(_linear(x, p["Wq"], p["bq"]))
    k = heads(_linear(x, p["Wk"], p["bk"]))
    v = heads(_linear(x, p["Wv"], p["bv"]))
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    attn = ad.softmax(scores, axis=-1)
    ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (B, W, d))
    return _linear(ctx, p["Wo"], p["bo"]), attn


def transformer_layer(
    x: Tensor,
    p: Dict[str, Tensor],
    n_heads: int,
    eps: float = 1e-5,
    dropout: float = 0.0,
    training: bool = False,
    key: Sequence[int] = (0, 0, 0),
) -> Tuple[Tensor, Tensor]:
    """Post-norm encoder layer. `p` holds the layer's parameters by short name."""
    if x.ndim != 3 or x.shape[-1] != p["Wq"].shape[0]:
        raise ShapeMismatch(f"transformer_layer: input {x.shape} does not match d_model={p['Wq'].shape[0]}")
    seed, layer, step = key
    a, attn = multi_head_attention(x, p, n_heads)
    a = ad.dropout(a, dropout, training, (seed, DROP_ATTN + layer, step))
    y = _affine_norm(ad.add(x, a), p["ln1_g"], p["ln1_b"], eps)
    f = _linear(ad.relu(_linear(y, p["W1"], p["b1"])), p["W2"], p["b2"])
    f = ad.dropout(f, dropout, training, (seed, DROP_FFN + layer, step))
    return _affine_norm(ad.add(y, f), p["ln2_g"], p["ln2_b"], eps), attn


def gru_layer(x: Tensor, p: Dict[str, Tensor], return_sequence: bool = False) -> Tuple[Tensor, Optional[Tensor]]:
    """
    Single GRU layer over (B, W, in); gate order in the stacked weights is
    (reset, update, new):

        r = sig(x Wi_r + bi_r + h Wh_r + bh_r)
        z = sig(x Wi_z + bi_z + h Wh_z + bh_z)
        n = tanh(x Wi_n + bi_n + r * (h Wh_n + bh_n))
        h' = (1 - z) * n + z * h
    """
    B, W, _ = x.shape
    H = p["W_h"].shape[0]
    gi = _linear(x, p["W_i"], p["b_i"])  # (B, W, 3H)
    h = ad.constant(np.zeros((B, H)), like=gi)
    outputs: List[Tensor] = []
    for t in range(W):
        gi_t = ad.reshape(ad.slice(gi, 1, t, t + 1), (B, 3 * H))
        gh = _linear(h, p["W_h"], p["b_h"])
        r = ad.sigmoid(ad.add(ad.slice(gi_t, -1, 0, H), ad.slice(gh, -1, 0, H)))
        z = ad.sigmoid(ad.add(ad.slice(gi_t, -1, H, 2 * H), ad.slice(gh, -1, H, 2 * H)))
        n = ad.tanh(ad.add(ad.slice(gi_t, -1, 2 * H, 3 * H), ad.mul(r, ad.slice(gh, -1, 2 * H, 3 * H))))
        h = ad.add(n, ad.mul(z, ad.sub(h, n)))
        if return_sequence:
            outputs.append(ad.reshape(h, (B, 1, H)))
    seq = ad.concat(outputs, axis=1) if return_sequence else None
    return h, seq


def _uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Every parameter name and shape, in creation order; derivable from the config alone."""
    d, ff, H = config.d_model, config.ff_dim, config.gru_hidden
    shapes: Dict[str, Tuple[int, ...]] = {
        "input.W": (config.n_features, d),
        "input.b": (d,),
    }
    for i in range(config.n_transformer_layers):
        pre = f"encoder.{i}."
        for w in ("Wq", "Wk", "Wv", "Wo"):
            shapes[pre + w] = (d, d)
            shapes[pre + "b" + w[1]] = (d,)
        shapes.update({
            pre + "ln1_g": (d,), pre + "ln1_b": (d,),
            pre + "W1": (d, ff), pre + "b1": (ff,),
            pre + "W2": (ff, d), pre + "b2": (d,),
            pre + "ln2_g": (d,), pre + "ln2_b": (d,),
        })
    for l in range(config.gru_layers):
        n_in = d if l == 0 else H
        pre = f"gru.{l}."
        shapes.update({
            pre + "W_i": (n_in, 3 * H), pre + "b_i": (3 * H,),
            pre + "W_h": (H, 3 * H), pre + "b_h": (3 * H,),
        })
    if config.kind == "clm":
        shapes["head.W"] = (H, int(config.n_classes))
        shapes["head.b"] = (int(config.n_classes),)
    return shapes


def init_params(config: ModelConfig) -> ParamSet:
    """Uniform +-1/sqrt(fan_in) for weights and biases; norms start at gamma=1, beta=0."""
    rng = np.random.default_rng(config.init_seed)
    params = ParamSet()
    fan_in_of: Dict[str, int] = {}
    for name, shape in parameter_shapes(config).items():
        if len(shape) == 2:
            fan_in_of[name] = shape[0]
    for name, shape in parameter_shapes(config).items():
        short = name.rsplit(".", 1)[-1]
        if short.endswith("_g"):
            value = np.ones(shape, dtype=np.float32)
        elif short.startswith("ln"):
            value = np.zeros(shape, dtype=np.float32)
        else:
            # biases share their weight's fan-in
            weight = name.rsplit(".", 1)[0] + "." + {"b": "W", "bq": "Wq", "bk": "Wk", "bv": "Wv", "bo": "Wo",
                                                       "b1": "W1", "b2": "W2", "b_i": "W_i", "b_h": "W_h"}.get(short, short)
            value = _uniform(rng, shape, fan_in_of.get(weight, shape[0]))
        params.add(name, value)
    return params


class SequenceModel:
    def __init__(self, config: ModelConfig, params: Optional[ParamSet] = None):
        self.config = config
        self.params = params if params is not None else init_params(config)
        expected = parameter_shapes(config)
        if self.params.shapes() != expected:
            raise ShapeMismatch("parameter set does not match the model configuration")
        self.pe = positional_table(config.max_positions, config.d_model)

    @property
    def kind(self) -> str:
        return self.config.kind

    def _group(self, prefix: str) -> Dict[str, Tensor]:
        return {name[len(prefix):]: t for name, t in self.params.items() if name.startswith(prefix)}

    def _input(self, windows: Union[Tensor, np.ndarray, Sequence[FeatureWindow]]) -> Tensor:
        if isinstance(windows, Tensor):
            x = windows
        elif isinstance(windows, np.ndarray):
            x = Tensor(windows.astype(np.float32, copy=False))
        else:
            x = Tensor(stack_windows(list(windows)))
        if x.ndim == 2:
            x = Tensor(x.data[None], requires_grad=x.requires_grad)
        if x.ndim != 3 or x.shape[-1] != self.config.n_features:
            raise ShapeMismatch(f"expected (B, W, {self.config.n_features}) input; got {x.shape}")
        if x.shape[1] > self.config.max_positions:
            raise WindowTooLong(f"window of {x.shape[1]} frames exceeds {self.config.max_positions}")
        if x.shape[1] != self.config.window_size:
            raise ShapeMismatch(f"window has {x.shape[1]} frames; model expects {self.config.window_size}")
        return x

    def forward(
        self,
        windows: Union[Tensor, np.ndarray, Sequence[FeatureWindow]],
        training: bool = False,
        seed: int = 0,
        step: int = 0,
    ) -> Tensor:
        """(B, embedding_size) unit embeddings or (B, n_classes) logits."""
        c = self.config
        x = self._input(windows)
        x = ad.dropout(x, c.dropout_frames, training, (seed, DROP_FRAMES, step), shared_axes=(-1,))

        h = _linear(x, self.params["input.W"], self.params["input.b"])
        h = positional_encode(h, self.pe)
        h = ad.dropout(h, c.dropout_global, training, (seed, DROP_INPUT, step))

        for i in range(c.n_transformer_layers):
            h, _ = transformer_layer(
                h, self._group(f"encoder.{i}."), c.n_heads, c.layer_norm_eps,
                c.dropout_global, training, (seed, i, step),
            )
        h = ad.dropout(h, c.dropout_global, training, (seed, DROP_PRE_GRU, step))

        last = None
        for l in range(c.gru_layers):
            more = l < c.gru_layers - 1
            last, seq = gru_layer(h, self._group(f"gru.{l}."), return_sequence=more)
            if more:
                h = ad.dropout(seq, c.gru_dropout, training, (seed, DROP_GRU + l, step))

        if c.kind == "slm":
            return ad.l2_normalize(last, axis=-1)
        return _linear(last, self.params["head.W"], self.params["head.b"])

    def _batched(self, windows, batch_size: int) -> np.ndarray:
        if isinstance(windows, np.ndarray):
            data = windows.astype(np.float32, copy=False)
        else:
            windows = list(windows)
            if not windows:
                return np.zeros((0, self.config.output_size), dtype=np.float32)
            data = stack_windows(windows)
        if data.ndim == 2:
            data = data[None]
        out = [self.forward(data[i:i + batch_size]).data for i in range(0, data.shape[0], batch_size)]
        if not out:
            return np.zeros((0, self.config.output_size), dtype=np.float32)
        return np.concatenate(out, axis=0).astype(np.float32, copy=False)

    def embed(self, windows, batch_size: int = 64) -> np.ndarray:
        """Eval-mode embeddings, (N, embedding_size)."""
        if self.kind != "slm":
            raise ShapeMismatch("embed() needs a similarity model")
        return self._batched(windows, batch_size)

    def predict_logits(self, windows, batch_size: int = 64) -> np.ndarray:
        if self.kind != "clm":
            raise ShapeMismatch("predict_logits() needs a classification model")
        return self._batched(windows, batch_size)
