from pathlib import Path
from typing import Union

import numpy as np

from app.model.identification_model import ReferenceStore
from app.repositories.checkpoint_repository import read_blob, write_blob
from app.utils.errors import CheckpointMismatch

STORE_MAGIC = b"XRIDREFS"


def save_reference_store(store: ReferenceStore, path: Union[str, Path]) -> Path:
    header = {
        "schema_version": 1,
        "users": store.enrolled_users,
        "apps": store.app_set,
        "count": len(store),
        "rows": [
            {"user": u, "app": a, "session": s, "window_start": int(w)}
            for u, a, s, w in store.keys
        ],
    }
    return write_blob(path, STORE_MAGIC, header, [("embeddings", store.embeddings)])


def load_reference_store(path: Union[str, Path]) -> ReferenceStore:
    header, arrays = read_blob(path, STORE_MAGIC)
    rows = header.get("rows", [])
    emb = arrays.get("embeddings")
    if emb is None or emb.shape[0] != len(rows) or header.get("count") != len(rows):
        raise CheckpointMismatch(f"reference store {path} is inconsistent")
    return ReferenceStore(
        embeddings=emb,
        users=np.asarray([r["user"] for r in rows], dtype=object),
        apps=np.asarray([r["app"] for r in rows], dtype=object),
        window_starts=np.asarray([r["window_start"] for r in rows], dtype=np.int64),
        sessions=np.asarray([r["session"] for r in rows], dtype=object),
    )
