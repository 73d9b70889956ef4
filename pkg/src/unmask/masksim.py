"""Mask-corruption simulator.

Face coverings mostly behave as gentle low-pass filters on speech, so a
masked corpus is synthesized from clean recordings with a parameterized
transfer function per mask type: an FIR low-pass, a spectral tilt above
1 kHz, and an optional noise floor.  The default profile values are
simulator knobs, not measurements.
"""

from __future__ import annotations

import logging
import os
import zlib
from dataclasses import dataclass

import numpy as np
import scipy.signal

from .datastore import CorpusManifest, ManifestEntry
from .errors import InvalidInputError
from .signal import SAMPLE_RATE, Waveform, read_wav, write_wav

log = logging.getLogger(__name__)

MASK_NAMES = ("n95", "cotton", "plastic")
FIR_TAPS = 255  # odd length keeps the group delay integral
TILT_PIVOT_HZ = 1000.0


@dataclass(frozen=True)
class MaskProfile:
    name: str
    cutoff_hz: float
    stopband_atten_db: float
    tilt_db_per_octave: float = 0.0
    noise_floor_db: float | None = None

    def __post_init__(self):
        if self.name not in MASK_NAMES:
            raise InvalidInputError(f"profile name {self.name!r} not in {MASK_NAMES}")
        if not 1000.0 <= self.cutoff_hz <= 8000.0:
            raise InvalidInputError("cutoff_hz must lie in [1000, 8000]")
        if self.stopband_atten_db <= 0:
            raise InvalidInputError("stopband_atten_db must be positive")


DEFAULT_PROFILES = (
    MaskProfile("n95", cutoff_hz=7000.0, stopband_atten_db=20.0, tilt_db_per_octave=-1.0),
    MaskProfile("cotton", cutoff_hz=5000.0, stopband_atten_db=25.0, tilt_db_per_octave=-2.0),
    MaskProfile("plastic", cutoff_hz=6000.0, stopband_atten_db=15.0,
                tilt_db_per_octave=-1.0, noise_floor_db=-35.0),
)


def profiles_from_config(path):
    """Load profiles from a key=value file, one ``[name]`` section per mask."""
    sections = {}
    current = None
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections[current] = {}
            elif "=" in line and current is not None:
                k, v = (s.strip() for s in line.split("=", 1))
                sections[current][k] = v
    out = []
    for name, kv in sections.items():
        noise = kv.get("noise_floor_db")
        out.append(MaskProfile(
            name=name,
            cutoff_hz=float(kv["cutoff_hz"]),
            stopband_atten_db=float(kv["stopband_atten_db"]),
            tilt_db_per_octave=float(kv.get("tilt_db_per_octave", 0.0)),
            noise_floor_db=None if noise in (None, "", "none") else float(noise),
        ))
    return tuple(out)


def _lowpass_taps(profile: MaskProfile):
    nyquist = SAMPLE_RATE / 2.0
    if profile.cutoff_hz >= nyquist:
        return None
    # fixed tap count, so push the passband edge down until the designed
    # stopband starts at the nominal cutoff with ~12 dB of margin
    target_db = profile.stopband_atten_db + 12.0
    beta = scipy.signal.kaiser_beta(target_db)
    width_rad = (target_db - 7.95) / (2.285 * (FIR_TAPS - 1))
    width_hz = width_rad * SAMPLE_RATE / (2 * np.pi)
    edge = max(profile.cutoff_hz - width_hz, 500.0)
    return scipy.signal.firwin(FIR_TAPS, edge, window=("kaiser", beta), fs=SAMPLE_RATE)


def _tilt_gain(n, tilt_db_per_octave):
    freqs = np.fft.rfftfreq(n, d=1.0 / SAMPLE_RATE)
    octaves = np.zeros_like(freqs)
    above = freqs > TILT_PIVOT_HZ
    octaves[above] = np.log2(freqs[above] / TILT_PIVOT_HZ)
    return 10.0 ** (tilt_db_per_octave * octaves / 20.0)


def apply_mask(w: Waveform, profile: MaskProfile, seed: int) -> Waveform:
    """Corrupt a clean waveform according to one mask profile.

    Deterministic for fixed ``(w, profile, seed)``; output length equals
    input length.
    """
    x = w.samples
    taps = _lowpass_taps(profile)
    if taps is not None:
        x = scipy.signal.fftconvolve(x, taps, mode="same")
    if profile.tilt_db_per_octave != 0.0:
        x = np.fft.irfft(np.fft.rfft(x) * _tilt_gain(len(x), profile.tilt_db_per_octave), n=len(x))
    if profile.noise_floor_db is not None and np.isfinite(profile.noise_floor_db):
        rms = np.sqrt(np.mean(w.samples ** 2))
        level = rms * 10.0 ** (profile.noise_floor_db / 20.0)
        noise = np.random.default_rng(seed).standard_normal(len(x)) * level
        x = x + noise
    return Waveform(samples=x)


def _file_seed(seed, utterance_id, profile_name):
    return (seed * 1000003 + zlib.crc32(f"{utterance_id}|{profile_name}".encode())) % 2 ** 31


def synthesize_corpus(manifest: CorpusManifest, profiles, seed, out_root) -> CorpusManifest:
    """Emit one masked WAV per (clean utterance, profile) plus clean copies.

    Unreadable sources are logged and skipped; the run continues.  The
    returned manifest follows the ``<root>/<condition>/<speaker>/<utt>.wav``
    layout with split labels carried over from the input entries.
    """
    out_root = os.path.abspath(out_root)
    result = CorpusManifest()
    for entry in manifest.entries:
        if entry.condition != "clean":
            continue
        try:
            clean = read_wav(entry.path)
        except Exception as exc:
            log.warning("synthesis skipping unreadable %s: %s", entry.path, exc)
            continue
        stem = os.path.splitext(os.path.basename(entry.path))[0]
        targets = [("clean", clean)]
        for profile in profiles:
            masked = apply_mask(clean, profile, _file_seed(seed, entry.utterance_id, profile.name))
            targets.append((profile.name, masked))
        for condition, wav in targets:
            d = os.path.join(out_root, condition, entry.speaker_id)
            os.makedirs(d, exist_ok=True)
            path = os.path.join(d, stem + ".wav")
            write_wav(path, wav)
            result.add(ManifestEntry(
                utterance_id=f"{condition}/{entry.speaker_id}/{stem}",
                path=path,
                speaker_id=entry.speaker_id,
                condition=condition,
                split=entry.split,
                duration_s=len(wav) / SAMPLE_RATE,
            ))
    return result


def band_power_db(samples, lo_hz, hi_hz):
    """Mean power in a band, in dB; the direct-spectrum oracle for tests."""
    spec = np.fft.rfft(samples)
    freqs = np.fft.rfftfreq(len(samples), d=1.0 / SAMPLE_RATE)
    sel = (freqs >= lo_hz) & (freqs < hi_hz)
    power = np.mean(np.abs(spec[sel]) ** 2)
    return 10.0 * np.log10(power + 1e-30)


def synthetic_rater(w: Waveform, rng=None) -> int:
    """Desk-scale stand-in for a human listener.

    Scores the 1..5 scale from the high-frequency energy fraction: full-band
    speech reads as clean, low-passed speech as mask-damped.  An optional rng
    adds +/-1 jitter so multiple simulated raters disagree a little.
    """
    total = np.mean(w.samples ** 2) + 1e-20
    spec = np.abs(np.fft.rfft(w.samples)) ** 2
    freqs = np.fft.rfftfreq(len(w.samples), d=1.0 / SAMPLE_RATE)
    hf = spec[freqs >= 3500.0].sum() / (spec.sum() + 1e-20)
    # hf fraction of roughly 0.25+ reads as clean for the synthetic corpora
    score = 1.0 + 4.0 * min(hf / 0.25, 1.0)
    if rng is not None:
        score += rng.integers(-1, 2)
    return int(np.clip(round(score), 1, 5))
