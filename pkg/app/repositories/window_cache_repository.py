"""
Content-addressed cache of preprocessed BRV streams, persisted with joblib.

Key = sha256 over (recording file digest, EncodingConfig, frame range, encoder
version). Windows are cut from the cached stream on load, so one stream serves
every window size sharing the same target rate.
"""

import threading
from pathlib import Path
from typing import Optional, Tuple, Union

import joblib

from app.config.env_config import env
from app.model.feature_model import EncodingConfig, FeatureStream
from app.model.recording_model import ManifestEntry
from app.utils.hash_utils import content_key, file_digest
from app.utils.logger_util import logger

ENCODER_VERSION = 1


class WindowCache:
    def __init__(self, cache_dir: Union[str, Path, None] = None, enabled: bool = True):
        self.cache_dir = Path(cache_dir or env.XRID_CACHE_DIR)
        self.enabled = enabled
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def key(self, entry: ManifestEntry, encoding: EncodingConfig) -> str:
        frame_range: Optional[Tuple[int, int]] = tuple(entry.frame_range) if entry.frame_range else None
        return content_key([
            file_digest(entry.path),
            encoding.model_dump(mode="json"),
            list(frame_range) if frame_range else None,
            ENCODER_VERSION,
        ])

    def _path(self, key: str) -> Path:
        return self.cache_dir / key[:2] / f"{key}.joblib"

    def load(self, key: str) -> Optional[FeatureStream]:
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.is_file():
            with self._lock:
                self.misses += 1
            return None
        try:
            stream = joblib.load(path)
        except Exception:
            logger.exception("Discarding unreadable cache file %s", path)
            with self._lock:
                self.misses += 1
            return None
        with self._lock:
            self.hits += 1
        return stream

    def store(self, key: str, stream: FeatureStream) -> None:
        if not self.enabled:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        joblib.dump(stream, tmp)
        tmp.replace(path)
