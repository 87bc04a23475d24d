import asyncio
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from app.config.run_config import RunConfig
from app.model.feature_model import EncodingConfig, FeatureStream, FeatureWindow
from app.model.recording_model import DatasetManifest, ManifestEntry
from app.repositories.checkpoint_repository import load_checkpoint, save_checkpoint, save_model_config
from app.repositories.manifest_repository import MANIFEST_FILENAME, load_manifest, save_manifest
from app.repositories.recording_repository import identity_from_filename, parse_recording, recording_filename, write_recording
from app.repositories.reference_store_repository import save_reference_store
from app.repositories.report_repository import (
    dump_windows_csv,
    export_heatmap,
    export_ranked_candidates,
    write_anova_table,
    write_csv,
    write_json,
    write_metrics_report,
    write_per_user_csv,
    write_posthoc_table,
    write_stats_table,
)
from app.repositories.window_cache_repository import WindowCache
from app.services.dataset_stats_service import analyze_dataset
from app.services.evaluation_service import (
    build_reference_store,
    eval_classifier,
    eval_cross_app,
    eval_overall,
    split_users,
)
from app.services.identification_service import sequence_identify
from app.services.kinematics_service import encode_feature_stream, windows_from_stream
from app.services.sequence_model_service import SequenceModel
from app.services.synthetic_service import generate_synthetic_dataset
from app.services.training_service import TrainResult, train
from app.utils.errors import InsufficientSpan, ManifestError, StageFailed, TooShort
from app.utils.logger_util import logger


EVAL_MODES = ("overall", "cross-app", "sequence", "top3", "classifier")
_MATRIX_METRIC = {"cross-app": "nn_accuracy", "sequence": "sequence_accuracy", "top3": "top3_sequence_accuracy"}


class PipelineController:
    """
    Runs pipeline stages against one resolved RunConfig. Every stage writes into
    `<out>/<stage>/` together with a copy of the resolved configuration.
    """

    def __init__(self, config: RunConfig, cache: Optional[WindowCache] = None):
        self.config = config
        self.cache = cache or WindowCache(enabled=config.use_cache)

    # --- paths ---

    @property
    def manifest_path(self) -> Path:
        return self.config.data_path / MANIFEST_FILENAME

    def stage_dir(self, stage: str) -> Path:
        d = self.config.out_path / stage
        d.mkdir(parents=True, exist_ok=True)
        self.config.write(d)
        return d

    @property
    def slm_checkpoint(self) -> Path:
        return self.config.out_path / "train_slm" / "slm.ckpt"

    @property
    def clm_checkpoint(self) -> Path:
        return self.config.out_path / "train_clm" / "clm.ckpt"

    # --- data ---

    def synth(self) -> DatasetManifest:
        c = self.config
        manifest, _ = generate_synthetic_dataset(
            n_users=c.synth_users, apps=c.apps, minutes_per_app=c.synth_minutes, seed=c.seed,
            out_dir=c.data_path, modulation=c.synth_modulation, rate_hz=c.synth_rate_hz,
        )
        c.write(c.data_path)
        return manifest

    def ingest(self, source_dir: str) -> DatasetManifest:
        """Validate a folder of `<user>__<app>__<session>.csv` files into the data directory."""
        src = Path(source_dir)
        files = sorted(src.glob("*.csv"))
        if not files:
            raise ManifestError(f"no recording CSV files in {src}")
        entries: List[ManifestEntry] = []
        for path in files:
            try:
                user, app, session = identity_from_filename(path)
            except ValueError as exc:
                raise ManifestError(str(exc)) from exc
            rec = parse_recording(path, user=user, app=app, session=session)
            if rec.nominal_rate < 30.0:
                logger.warning("Skipping %s: capture rate %.1f Hz is below 30 Hz", path.name, rec.nominal_rate)
                continue
            name = recording_filename(rec.user, rec.app, rec.session)
            write_recording(rec, self.config.data_path / "recordings" / name)
            entries.append(ManifestEntry(user=rec.user, app=rec.app, session=rec.session,
                                         path=f"recordings/{name}", duration_s=rec.duration))
        save_manifest(DatasetManifest(entries=entries), self.manifest_path)
        self.config.write(self.config.data_path)
        logger.info("Ingested %d of %d recordings from %s", len(entries), len(files), src)
        return load_manifest(self.manifest_path)

    def manifest(self) -> DatasetManifest:
        return load_manifest(self.manifest_path)

    def _stream(self, entry: ManifestEntry, encoding: EncodingConfig) -> FeatureStream:
        # streams depend on the frame rate only; both models share one cache entry
        key = self.cache.key(entry, EncodingConfig(target_fps=encoding.target_fps))
        cached = self.cache.load(key)
        if cached is not None:
            return cached
        rec = parse_recording(entry.path, user=entry.user, app=entry.app, session=entry.session)
        stream = encode_feature_stream(rec, entry.frame_range, target_fps=encoding.target_fps)
        self.cache.store(key, stream)
        return stream

    async def _load_streams_async(self, entries: Sequence[ManifestEntry], encoding: EncodingConfig) -> List[FeatureStream]:
        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            tasks = [loop.run_in_executor(pool, self._stream, e, encoding) for e in entries]
            return list(await asyncio.gather(*tasks))

    def load_streams(self, manifest: DatasetManifest, encoding: EncodingConfig) -> List[FeatureStream]:
        """BRV streams for every manifest entry, in manifest order."""
        if not manifest.entries:
            return []
        streams = asyncio.run(self._load_streams_async(manifest.entries, encoding))
        logger.info("Loaded %d streams (cache hits %d, misses %d)", len(streams), self.cache.hits, self.cache.misses)
        return streams

    def windows(self, manifest: DatasetManifest, encoding: EncodingConfig) -> List[FeatureWindow]:
        out: List[FeatureWindow] = []
        for s in self.load_streams(manifest, encoding):
            try:
                out.extend(windows_from_stream(s, encoding))
            except TooShort:
                logger.warning("Stream %s/%s/%s shorter than one %d-frame window; skipped",
                               s.user, s.app, s.session, encoding.window_size)
        return out

    def preprocess(self, dump_csv: bool = False) -> Dict[str, int]:
        """Warm the stream cache for both model encodings; optionally dump SLM windows as CSV."""
        out = self.stage_dir("preprocess")
        manifest = self.manifest()
        hits_before = self.cache.hits
        slm = self.config.slm_config()
        counts: Dict[str, int] = {}
        slm_windows = self.windows(manifest, slm.encoding)
        counts["slm_windows"] = len(slm_windows)
        counts["clm_windows"] = len(self.windows(manifest, self.config.clm_config(manifest.users).encoding))
        counts["cache_hits"] = self.cache.hits - hits_before
        counts["recordings"] = len(manifest.entries)
        if counts["cache_hits"] >= 2 * len(manifest.entries):
            logger.info("Preprocessing cache hit for all %d recordings; nothing recomputed", len(manifest.entries))
        if dump_csv:
            dump_windows_csv(slm_windows, out / "windows.csv")
        write_json(counts, out / "summary.json")
        return counts

    # --- training ---

    def train_slm(self) -> TrainResult:
        out = self.stage_dir("train_slm")
        mcfg = self.config.slm_config()
        split = split_users(self.manifest(), self.config.split_spec("user", mcfg))
        write_json(split.to_dict(), out / "split.json")
        train_w = self.windows(split.train, mcfg.encoding)
        val_w = self.windows(split.val, mcfg.encoding)
        model = SequenceModel(mcfg)
        tcfg = self.config.train_config(checkpoint_path=str(self.slm_checkpoint), log_path=str(out / "history.jsonl"))
        result = train(model, train_w, tcfg, val_w)
        save_checkpoint(model, self.slm_checkpoint, {"best_epoch": result.best_epoch, "val_accuracy": result.best_val_accuracy})
        save_model_config(mcfg, out / "model_config.json")
        write_json(result.to_dict(), out / "train_result.json")
        return result

    def train_clm(self) -> TrainResult:
        out = self.stage_dir("train_clm")
        manifest = self.manifest()
        labels = manifest.users
        mcfg = self.config.clm_config(labels)
        split = split_users(manifest, self.config.split_spec("temporal", mcfg))
        write_json(split.to_dict(), out / "split.json")
        train_w = self.windows(split.train, mcfg.encoding)
        val_w = self.windows(split.val, mcfg.encoding)
        model = SequenceModel(mcfg)
        tcfg = self.config.train_config(checkpoint_path=str(self.clm_checkpoint), log_path=str(out / "history.jsonl"))
        result = train(model, train_w, tcfg, val_w)
        save_checkpoint(model, self.clm_checkpoint, {"best_epoch": result.best_epoch, "val_accuracy": result.best_val_accuracy})
        save_model_config(mcfg, out / "model_config.json")
        write_json(result.to_dict(), out / "train_result.json")
        return result

    # --- evaluation ---

    def _slm_test(self) -> Tuple[SequenceModel, List[FeatureStream]]:
        model, _ = load_checkpoint(self.slm_checkpoint)
        split = split_users(self.manifest(), self.config.split_spec("user", model.config))
        return model, self.load_streams(split.test, model.config.encoding)

    def evaluate(self, mode: str) -> object:
        if mode not in EVAL_MODES:
            raise ValueError(f"unknown evaluation mode '{mode}'")
        out = self.stage_dir(f"evaluate_{mode.replace('-', '_')}")

        if mode == "classifier":
            model, _ = load_checkpoint(self.clm_checkpoint)
            split = split_users(self.manifest(), self.config.split_spec("temporal", model.config))
            streams = self.load_streams(split.test, model.config.encoding)
            report = eval_classifier(model, streams, self.config.clm_span)
            write_metrics_report(report, out / "metrics.json")
            write_per_user_csv(report, out / "per_user_accuracy.csv")
            return report

        model, streams = self._slm_test()
        if mode == "overall":
            store = build_reference_store(model, streams)
            save_reference_store(store, out / "references.xrs")
            report = eval_overall(model, streams, self.config.slm_span, store=store)
            write_metrics_report(report, out / "metrics.json")
            write_per_user_csv(report, out / "per_user_accuracy.csv")
            self._export_decisions(model, store, streams, out / "ranked")
            return report

        metric = _MATRIX_METRIC[mode]
        span = None if metric == "nn_accuracy" else self.config.slm_span
        matrix = eval_cross_app(model, streams, metric, span, self.config.apps)
        export_heatmap(matrix, out / f"heatmap_{metric}.csv")
        write_json(matrix.to_dict(), out / f"matrix_{metric}.json")
        return matrix

    def _export_decisions(self, model: SequenceModel, store, streams: Sequence[FeatureStream], out_dir: Path) -> None:
        """Ranked candidates of the first span of every test stream."""
        rows = []
        for s in streams:
            try:
                decision = sequence_identify(store, model, s, self.config.slm_span)
            except InsufficientSpan:
                continue
            name = f"{s.user}__{s.app}__{s.session}.csv"
            export_ranked_candidates(decision.ranked, out_dir / name)
            rows.append({"user": s.user, "app": s.app, "session": s.session,
                         "decision": decision.final_user, "windows": decision.n_windows})
        write_csv(pd.DataFrame(rows, columns=["user", "app", "session", "decision", "windows"]),
                  out_dir / "decisions.csv")

    # --- statistics ---

    def stats(self):
        out = self.stage_dir("stats")
        manifest = self.manifest()
        recordings = [parse_recording(e.path, user=e.user, app=e.app, session=e.session) for e in manifest.entries]
        analysis = analyze_dataset(recordings)
        write_stats_table(analysis.movement, analysis.pitch, out / "table3.csv")
        write_anova_table(analysis.anova, out / "anova.csv")
        write_posthoc_table(analysis.posthoc, out / "posthoc.csv")
        write_csv(pd.DataFrame([m.to_dict() for m in analysis.movement]), out / "movement_per_user.csv")
        write_csv(pd.DataFrame([p.to_dict() for p in analysis.pitch]), out / "pitch_per_user.csv")
        return analysis

    # --- everything ---

    def run_all(self) -> Dict[str, object]:
        """synth (when no dataset exists) -> preprocess -> train -> evaluate -> stats; fails fast."""
        stages = []
        if not self.manifest_path.is_file():
            stages.append(("synth", self.synth))
        stages += [
            ("preprocess", self.preprocess),
            ("train_slm", self.train_slm),
            ("train_clm", self.train_clm),
        ]
        stages += [(f"evaluate_{m}", (lambda m=m: self.evaluate(m))) for m in EVAL_MODES]
        stages.append(("stats", self.stats))

        results: Dict[str, object] = {}
        for name, fn in stages:
            logger.info("Stage %s", name)
            try:
                results[name] = fn()
            except Exception as exc:
                logger.exception("Stage %s failed", name)
                raise StageFailed(name, exc) from exc
        return results
