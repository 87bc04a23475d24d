import hashlib
import json
from pathlib import Path
from typing import Any, Iterable, Union


def file_digest(path: Union[str, Path], chunk_size: int = 1 << 20) -> str:
    """sha256 hex digest of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(chunk_size), b""):
            h.update(chunk)
    return h.hexdigest()


def content_key(parts: Iterable[Any]) -> str:
    """
    Stable key for a sequence of JSON-serializable parts (digests, configs, ranges).
    Dict keys are sorted so field order never changes the key.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(json.dumps(part, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\x1f")
    return h.hexdigest()
