"""
Minimal reverse-mode automatic differentiation over dense numpy arrays.

Ops run eagerly. While a `Tape` is active on the current thread, every op whose
inputs require gradients appends a record (inputs, output, backward closure).
`backward(tape, loss)` walks the records in exact reverse order.

Broadcasting is limited to "suffix" operands: in add/sub/mul the smaller
operand's shape must equal the trailing dimensions of the larger one (bias-add,
per-feature scale). matmul accepts a 2-D right operand against a batched left
operand, or two operands with identical batch dimensions.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.utils.errors import NonFiniteValue, NonScalarLoss, ShapeMismatch

DEFAULT_DTYPE = np.float32

_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)


def constant(data, like: Optional[Tensor] = None) -> Tensor:
    """Non-differentiable tensor, cast to `like`'s dtype when given."""
    return Tensor(data, requires_grad=False, dtype=like.data.dtype if like is not None else None)


@dataclass
class _Record:
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[object]]]
    op: str


@dataclass
class _SliceGrad:
    """Gradient contribution to a sub-region of an input."""
    index: tuple
    value: np.ndarray


class Tape:
    """
    Ordered operation log for one forward pass. Use as a context manager; tapes
    are thread-local and may not be shared across threads.
    """

    def __init__(self):
        self.records: List[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.records)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{op} produced a non-finite value")


def _emit(op: str, out: np.ndarray, inputs: Tuple[Tensor, ...], backward_fn) -> Tensor:
    _check_finite(out, op)
    needs = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs)
    tape = _active_tape()
    if tape is not None and needs:
        tape.records.append(_Record(inputs=inputs, output=result, backward=backward_fn, op=op))
    return result


def _suffix(big: Tuple[int, ...], small: Tuple[int, ...]) -> bool:
    return len(small) <= len(big) and tuple(big[len(big) - len(small):]) == tuple(small)


def _reduce_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape)


def _binary_shapes(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or _suffix(a.shape, b.shape) or _suffix(b.shape, a.shape):
        return
    raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} are not suffix-compatible")


# --- elementwise binary ---

def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)
    return _emit("add", a.data + b.data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)

    def bw(g):
        return _reduce_to(g, a.shape), -_reduce_to(g, b.shape)
    return _emit("sub", a.data - b.data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)
    return _emit("mul", a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit("scale", a.data * a.data.dtype.type(c), (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _emit("add_scalar", a.data + a.data.dtype.type(c), (a,), lambda g: (g,))


# --- linear algebra ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs operands of rank >= 2; got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if not (b.ndim == 2 or (a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2])):
        raise ShapeMismatch(f"matmul: batch dimensions differ ({a.shape} @ {b.shape})")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2 and a.ndim > 2:
            k, m = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb
    return _emit("matmul", out, (a, b), bw)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(x) for x in axes)
    inv = tuple(np.argsort(axes))
    return _emit("transpose", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeMismatch(f"cannot reshape {a.shape} to {tuple(shape)}") from exc
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


# --- activations ---

def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0).astype(a.data.dtype, copy=False), (a,),
                 lambda g: (g * mask,))


def _axis(a: Tensor, axis: int, op: str) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeMismatch(f"{op}: axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(a, axis, "softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _emit("softmax", y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(a, axis, "log_softmax")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)
    return _emit("log_softmax", y, (a,), bw)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along `axis` (no affine part)."""
    axis = _axis(a, axis, "layer_norm")
    n = a.shape[axis]
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bw(g):
        sg = g.sum(axis=axis, keepdims=True)
        sgx = (g * xhat).sum(axis=axis, keepdims=True)
        return (inv / n * (n * g - sg - xhat * sgx),)
    return _emit("layer_norm", xhat, (a,), bw)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    axis = _axis(a, axis, "l2_normalize")
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    y = a.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,)
    return _emit("l2_normalize", y, (a,), bw)


# --- structure ---

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeMismatch("concat of an empty list")
    axis = _axis(tensors[0], axis, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeMismatch(f"concat: shape {t.shape} incompatible with {ref} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _emit("concat", out, tensors, bw)


def slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001 - op name
    axis = _axis(a, axis, "slice")
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeMismatch(f"slice [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = tuple([np.s_[:]] * axis + [np.s_[start:stop]])
    return _emit("slice", a.data[index], (a,), lambda g: (_SliceGrad(index, g),))


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along axis 0; repeated indices accumulate in backward."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeMismatch(f"take_rows index out of range for {a.shape[0]} rows")

    def bw(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _emit("take_rows", a.data[idx], (a,), bw)


# --- reductions ---

def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001 - op name
    if axis is None:
        return _emit("sum", np.asarray(a.data.sum(), dtype=a.data.dtype), (a,),
                     lambda g: (np.broadcast_to(g, a.shape),))
    axis = _axis(a, axis, "sum")
    return _emit("sum", a.data.sum(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), a.shape),))


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    if axis is None:
        n = a.data.size
        return _emit("mean", np.asarray(a.data.mean(), dtype=a.data.dtype), (a,),
                     lambda g: (np.broadcast_to(g / n, a.shape),))
    axis = _axis(a, axis, "mean")
    n = a.shape[axis]
    return _emit("mean", a.data.mean(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), a.shape),))


def cosine_similarity(a: Tensor, b: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatch(f"cosine_similarity: shapes {a.shape} and {b.shape} differ")
    axis = _axis(a, axis, "cosine_similarity")
    na = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True))
    den = np.maximum(na * nb, eps)
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    cos = dot / den

    def bw(g):
        g = np.expand_dims(g, axis)
        ga = g * (b.data / den - cos * a.data / np.maximum(na * na, eps))
        gb = g * (a.data / den - cos * b.data / np.maximum(nb * nb, eps))
        return ga, gb
    return _emit("cosine_similarity", np.squeeze(cos, axis=axis), (a, b), bw)


# --- regularization ---

def dropout_mask(shape: Tuple[int, ...], p: float, key: Sequence[int], shared_axes: Iterable[int] = ()) -> np.ndarray:
    """
    Keep-mask from a counter-based generator keyed by `key` (seed, layer id,
    step, ...). Axes in `shared_axes` get size 1 so whole rows drop together.
    """
    mshape = list(shape)
    for ax in shared_axes:
        mshape[ax % len(shape)] = 1
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))
    return np.broadcast_to(rng.random(tuple(mshape)) >= p, shape)


def dropout(
    a: Tensor,
    p: float,
    training: bool,
    key: Sequence[int] = (0,),
    shared_axes: Iterable[int] = (),
) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p) in training, identity otherwise."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1); got {p}")
    if not training or p == 0.0:
        return a
    keep = dropout_mask(a.shape, p, key, shared_axes)
    factor = (keep / (1.0 - p)).astype(a.data.dtype)
    return _emit("dropout", a.data * factor, (a,), lambda g: (g * factor,))


# --- reverse pass ---

def backward(tape: Tape, loss: Tensor, params: Optional[Dict[str, Tensor]] = None) -> Dict[str, np.ndarray]:
    """
    Propagate d(loss)/d(.) through the tape in reverse recording order. Sets
    `.grad` on every differentiable tensor reached. Returns gradients for
    `params` (name -> array), zeros for parameters the loss does not reach.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar; got shape {loss.shape}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned = {id(loss)}
    tensors: Dict[int, Tensor] = {id(loss): loss}

    for rec in reversed(tape.records):
        g = grads.get(id(rec.output))
        if g is None:
            continue
        contributions = rec.backward(g)
        for inp, gi in zip(rec.inputs, contributions):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            tensors[key] = inp
            if isinstance(gi, _SliceGrad):
                buf = grads.get(key)
                if buf is None or key not in owned:
                    buf = np.zeros(inp.shape, dtype=np.result_type(inp.data, gi.value)) if buf is None else np.array(buf)
                    grads[key] = buf
                    owned.add(key)
                buf[gi.index] += gi.value
            else:
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
                if prev is None:
                    owned.discard(key)
                else:
                    owned.add(key)

    for key, t in tensors.items():
        t.grad = np.asarray(grads[key])

    out: Dict[str, np.ndarray] = {}
    for name, p in (params or {}).items():
        g = grads.get(id(p))
        out[name] = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.data.dtype).reshape(p.shape)
    return out
