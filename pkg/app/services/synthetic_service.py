"""
Desk-scale synthetic motion generator.

Each user gets a signature (arm length, rest height, oscillation frequency,
phase, head bob, jitter, handedness); each app an archetype modulation.
Controllers follow user-signature sinusoids around a body anchor, the head sways
and looks around, and every recording is placed at a random world position and
heading. `modulation` interpolates geometrically between app-independent motion
(0), the default archetypes (1) and exaggerated contrasts (>1).
"""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.model.recording_model import (
    APP_ORDER,
    AppLabel,
    AppModulation,
    DatasetManifest,
    ManifestEntry,
    Recording,
    SynthProfile,
    UserSignature,
)
from app.repositories.manifest_repository import MANIFEST_FILENAME, load_manifest, save_manifest
from app.repositories.recording_repository import recording_filename, write_recording
from app.repositories.report_repository import write_json
from app.services import quaternion_service as quat
from app.utils.logger_util import logger

# rhythm: large controller amplitude; shooter: large head travel; social: low amplitude
ARCHETYPE_MODULATION: Dict[str, AppModulation] = {
    "synth_riders": AppModulation(amplitude_scale=1.6, head_travel_scale=1.0, pitch_bias_deg=1.1, tempo_scale=1.0),
    "superhot_vr": AppModulation(amplitude_scale=1.1, head_travel_scale=2.2, pitch_bias_deg=9.1, tempo_scale=0.8),
    "beat_saber": AppModulation(amplitude_scale=1.9, head_travel_scale=0.9, pitch_bias_deg=6.7, tempo_scale=1.2),
    "half_life_alyx": AppModulation(amplitude_scale=0.9, head_travel_scale=1.8, pitch_bias_deg=17.2, tempo_scale=0.7),
    "social_vr": AppModulation(amplitude_scale=0.35, head_travel_scale=0.5, pitch_bias_deg=2.7, tempo_scale=0.6),
}
NEUTRAL_MODULATION = AppModulation(amplitude_scale=1.0, head_travel_scale=1.0, pitch_bias_deg=0.0, tempo_scale=1.0)

# (low, high) ranges the per-user signature is drawn from
SIGNATURE_RANGES: Dict[str, Tuple[float, float]] = {
    "arm_length": (0.55, 0.75),
    "rest_height": (1.55, 1.90),
    "osc_freq": (0.6, 1.4),
    "phase": (0.0, 2.0 * np.pi),
    "head_bob_amp": (0.02, 0.05),
    "jitter_sigma": (0.001, 0.003),
    "handedness": (-0.3, 0.3),
}

_X = np.array([1.0, 0.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])

# left = -1, right = +1
SIDES = (-1.0, 1.0)


def modulate(base: AppModulation, level: float) -> AppModulation:
    """Geometric interpolation from neutral (level 0) through `base` (level 1)."""
    if level < 0:
        raise ValueError("modulation level must be >= 0")
    return AppModulation(
        amplitude_scale=float(base.amplitude_scale ** level),
        head_travel_scale=float(base.head_travel_scale ** level),
        pitch_bias_deg=float(base.pitch_bias_deg * level),
        tempo_scale=float(base.tempo_scale ** level),
    )


def draw_signature(rng: np.random.Generator) -> UserSignature:
    return UserSignature(**{k: float(rng.uniform(lo, hi)) for k, (lo, hi) in SIGNATURE_RANGES.items()})


def draw_profiles(n_users: int, apps: Sequence[str], seed: int, modulation: float = 1.0) -> List[SynthProfile]:
    rng = np.random.default_rng(seed)
    profiles = []
    for i in range(n_users):
        sig = draw_signature(rng)
        mods = {
            app: modulate(ARCHETYPE_MODULATION.get(app, NEUTRAL_MODULATION), modulation)
            for app in apps
        }
        profiles.append(SynthProfile(user=f"u{i:03d}", signature=sig, apps=mods))
    return profiles


def controller_local_path(sig: UserSignature, mod: AppModulation, t: np.ndarray, side: float) -> np.ndarray:
    """Controller position in the body frame (before world placement), (N, 3)."""
    amp = 0.5 * sig.arm_length * mod.amplitude_scale * (1.0 + side * sig.handedness)
    omega = 2.0 * np.pi * sig.osc_freq * mod.tempo_scale
    ph = omega * t + sig.phase
    offset = np.array([side * 0.25, sig.rest_height - 0.45, -0.35])
    wave = np.stack([
        0.6 * np.sin(ph + side * 0.5),
        0.8 * np.sin(ph),
        0.4 * np.sin(ph + side * np.pi / 2.0),
    ], axis=-1)
    return offset + amp * wave


def head_local_path(sig: UserSignature, mod: AppModulation, t: np.ndarray) -> np.ndarray:
    h = sig.head_bob_amp * mod.head_travel_scale
    omega = 2.0 * np.pi * 0.3 * sig.osc_freq * mod.tempo_scale
    return np.stack([
        h * np.sin(omega * t),
        sig.rest_height + 0.3 * h * np.sin(2.0 * omega * t + sig.phase),
        0.6 * h * np.cos(omega * t),
    ], axis=-1)


def place_in_world(local: np.ndarray, yaw0: float, origin: np.ndarray) -> np.ndarray:
    return quat.rotate_vec(quat.yaw_quat(yaw0), local) + origin


def synthesize_recording(
    profile: SynthProfile,
    app: str,
    minutes: float,
    rate_hz: float,
    rng: np.random.Generator,
    session: str = "s1",
) -> Recording:
    if minutes <= 0:
        raise ValueError("minutes_per_app must be > 0")
    app = AppLabel.normalize(app)
    sig = profile.signature
    mod = profile.apps.get(app, NEUTRAL_MODULATION)

    n = int(round(minutes * 60.0 * rate_hz)) + 1
    t = np.arange(n, dtype=np.float64) / rate_hz

    yaw0 = float(rng.uniform(-np.pi, np.pi))
    origin = np.array([rng.uniform(-2.0, 2.0), 0.0, rng.uniform(-2.0, 2.0)])
    heading = quat.yaw_quat(yaw0)

    omega = 2.0 * np.pi * sig.osc_freq * mod.tempo_scale
    omega_h = 2.0 * np.pi * 0.3 * sig.osc_freq * mod.tempo_scale

    pos = np.empty((n, 3, 3))
    rot = np.empty((n, 3, 4))

    pos[:, 0] = place_in_world(head_local_path(sig, mod, t), yaw0, origin)
    look_yaw = 0.3 * mod.head_travel_scale * np.sin(0.5 * omega_h * t + sig.phase)
    look_pitch = np.deg2rad(mod.pitch_bias_deg + 4.0 * np.sin(omega_h * t))
    rot[:, 0] = quat.multiply(
        heading, quat.multiply(quat.yaw_quat(look_yaw), quat.from_axis_angle(_X, look_pitch))
    )

    for d, side in zip((1, 2), SIDES):
        pos[:, d] = place_in_world(controller_local_path(sig, mod, t, side), yaw0, origin)
        wrist = quat.multiply(
            quat.from_axis_angle(_X, 0.5 * np.sin(omega * t + sig.phase)),
            quat.from_axis_angle(_Z, np.full_like(t, side * 0.3)),
        )
        rot[:, d] = quat.multiply(heading, wrist)

    if sig.jitter_sigma > 0:
        pos = pos + rng.normal(0.0, sig.jitter_sigma, size=pos.shape)

    return Recording(
        user=profile.user,
        app=app,
        session=session,
        t=t,
        pos=pos,
        rot=quat.canonicalize(rot),
        nominal_rate=float(rate_hz),
    )


def generate_synthetic_dataset(
    n_users: int,
    apps: Optional[Sequence[str]],
    minutes_per_app: float,
    seed: int,
    out_dir: Union[str, Path],
    modulation: float = 1.0,
    rate_hz: float = 60.0,
) -> Tuple[DatasetManifest, List[SynthProfile]]:
    """
    Write one recording per (user, app) plus `manifest.json` and `profiles.json`
    under `out_dir`. Deterministic for fixed arguments.
    """
    if n_users < 2:
        raise ValueError("n_users must be >= 2")
    if minutes_per_app <= 0:
        raise ValueError("minutes_per_app must be > 0")
    if rate_hz < 30:
        raise ValueError("rate_hz must be >= 30")
    apps = [AppLabel.normalize(a) for a in (apps or APP_ORDER)]

    out_dir = Path(out_dir)
    rec_dir = out_dir / "recordings"
    profiles = draw_profiles(n_users, apps, seed, modulation)

    entries: List[ManifestEntry] = []
    for ui, profile in enumerate(profiles):
        for ai, app in enumerate(apps):
            rng = np.random.default_rng([seed, ui, ai])
            rec = synthesize_recording(profile, app, minutes_per_app, rate_hz, rng)
            name = recording_filename(rec.user, rec.app, rec.session)
            write_recording(rec, rec_dir / name)
            entries.append(ManifestEntry(
                user=rec.user, app=rec.app, session=rec.session,
                path=f"recordings/{name}", duration_s=rec.duration,
            ))

    manifest_path = save_manifest(DatasetManifest(entries=entries), out_dir / MANIFEST_FILENAME)
    write_json({"seed": seed, "modulation": modulation, "rate_hz": rate_hz,
                "profiles": [p.to_dict() for p in profiles]}, out_dir / "profiles.json")
    logger.info("Generated %d synthetic recordings (%d users x %d apps) in %s",
                len(entries), n_users, len(apps), out_dir)
    return load_manifest(manifest_path), profiles
