import json
from pathlib import Path
from typing import Union

from pydantic import ValidationError

from app.model.recording_model import MANIFEST_SCHEMA_VERSION, DatasetManifest, ManifestEntry
from app.utils.errors import IoFailure, ManifestError

MANIFEST_FILENAME = "manifest.json"


def resolve_entry_path(manifest_path: Union[str, Path], entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """
    Read and validate a dataset manifest. Relative entry paths are resolved
    against the manifest's directory and rewritten as absolute paths.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise IoFailure(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc

    try:
        manifest = DatasetManifest.model_validate(raw)
    except ValidationError as exc:
        raise ManifestError(f"manifest {path} failed validation: {exc.errors()[0]['msg']}") from exc

    if manifest.schema_version != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(f"unsupported manifest schema_version {manifest.schema_version}")

    entries = []
    for e in manifest.entries:
        resolved = resolve_entry_path(path, e)
        if check_files and not resolved.is_file():
            raise ManifestError(f"manifest entry {e.key} references missing file {resolved}")
        entries.append(e.model_copy(update={"path": str(resolved)}))
    return DatasetManifest(schema_version=manifest.schema_version, entries=entries)


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    """Write with entry paths relative to the manifest directory where possible."""
    path = Path(path)
    base = path.parent.resolve()
    entries = []
    for e in manifest.entries:
        p = Path(e.path)
        try:
            rel = p.resolve().relative_to(base).as_posix() if p.is_absolute() else p.as_posix()
        except ValueError:
            rel = str(p)
        entries.append(e.model_copy(update={"path": rel}))
    payload = DatasetManifest(schema_version=manifest.schema_version, entries=entries)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(payload.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoFailure(f"cannot write manifest {path}: {exc}") from exc
    return path
