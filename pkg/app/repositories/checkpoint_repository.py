"""
Binary checkpoint files.

    8-byte magic | uint32 LE header length | UTF-8 JSON header | float32 LE payloads

The header lists array names and shapes in payload order plus free-form
metadata (model config, schema version).
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np

from app.model.network_model import ModelConfig
from app.services.optimizer_service import ParamSet
from app.services.sequence_model_service import SequenceModel, parameter_shapes
from app.utils.errors import CheckpointMismatch, IoFailure

CHECKPOINT_MAGIC = b"XRIDCKPT"
CHECKPOINT_SCHEMA_VERSION = 1

PathLike = Union[str, Path]


def write_blob(path: PathLike, magic: bytes, header: Dict[str, Any], arrays: List[Tuple[str, np.ndarray]]) -> Path:
    path = Path(path)
    header = dict(header)
    header["arrays"] = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    raw_header = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(magic)
            fh.write(struct.pack("<I", len(raw_header)))
            fh.write(raw_header)
            for _, a in arrays:
                fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def read_blob(path: PathLike, magic: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if data[:len(magic)] != magic:
        raise CheckpointMismatch(f"{path} is not a {magic.decode()} file")
    offset = len(magic)
    (n,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset:offset + n].decode("utf-8"))
    offset += n
    arrays: Dict[str, np.ndarray] = {}
    for spec in header.get("arrays", []):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(data):
            raise CheckpointMismatch(f"{path} is truncated at array '{spec['name']}'")
        arrays[spec["name"]] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset = end
    if offset != len(data):
        raise CheckpointMismatch(f"{path} has {len(data) - offset} trailing bytes")
    return header, arrays


def save_checkpoint(model: SequenceModel, path: PathLike, extra: Dict[str, Any] = None) -> Path:
    header = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "config": model.config.model_dump(mode="json"),
        "meta": extra or {},
    }
    arrays = [(name, t.data) for name, t in model.params.items()]
    return write_blob(path, CHECKPOINT_MAGIC, header, arrays)


def load_checkpoint(path: PathLike) -> Tuple[SequenceModel, Dict[str, Any]]:
    """Rebuild a model; the stored arrays must match the shapes its config implies."""
    header, arrays = read_blob(path, CHECKPOINT_MAGIC)
    if header.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise CheckpointMismatch(f"unsupported checkpoint schema_version {header.get('schema_version')}")
    config = ModelConfig.model_validate(header["config"])
    expected = parameter_shapes(config)
    stored = {name: tuple(a.shape) for name, a in arrays.items()}
    if stored != expected:
        missing = sorted(set(expected) - set(stored))
        odd = sorted(k for k in expected if k in stored and stored[k] != expected[k])
        raise CheckpointMismatch(f"checkpoint {path} does not match its config (missing={missing}, shape={odd})")
    params = ParamSet()
    for name in expected:
        params.add(name, arrays[name])
    return SequenceModel(config, params), header.get("meta", {})


def save_model_config(config: ModelConfig, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path


def load_model_config(path: PathLike) -> ModelConfig:
    try:
        return ModelConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
