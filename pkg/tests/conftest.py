"""Shared corpus builders for trainer and acceptance tests."""

import os

import numpy as np
import pytest

from unmask import masksim
from unmask.datastore import CorpusManifest, ManifestEntry
from unmask.signal import SAMPLE_RATE, Waveform, write_wav


def synth_clean_waveform(rng, n_samples):
    """Broadband speech-shaped stand-in: enveloped noise plus harmonics."""
    x = rng.standard_normal(n_samples)
    t = np.arange(n_samples) / SAMPLE_RATE
    env = 0.25 + 0.75 * np.abs(np.sin(2 * np.pi * 2.7 * t))
    voiced = sum(np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
                 for f in (140.0, 280.0, 420.0, 1200.0, 2400.0))
    return Waveform((0.6 * x + 0.4 * voiced / 5.0) * env * 0.1)


def build_masked_corpus(root, n_utts=2, n_samples=22400, seed=0, speakers=("s0",)):
    """Clean utterances through the mask simulator: 4-condition manifest."""
    rng = np.random.default_rng(seed)
    entries = []
    for speaker in speakers:
        d = os.path.join(root, "clean", speaker)
        os.makedirs(d, exist_ok=True)
        for i in range(n_utts):
            w = synth_clean_waveform(rng, n_samples)
            path = os.path.join(d, f"u{i}.wav")
            write_wav(path, w)
            entries.append(ManifestEntry(
                utterance_id=f"clean/{speaker}/u{i}", path=path, speaker_id=speaker,
                condition="clean", split="train", duration_s=n_samples / SAMPLE_RATE))
    manifest = CorpusManifest(entries=entries)
    return masksim.synthesize_corpus(manifest, masksim.DEFAULT_PROFILES, seed=seed,
                                     out_root=os.path.join(root, "corpus"))


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """One short utterance per condition; enough for wiring tests."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return build_masked_corpus(str(root), n_utts=1, n_samples=8000, seed=7)


def tiny_train_config(**kw):
    from unmask.trainer import TrainConfig

    base = dict(
        seed=0,
        crop_frames=24,
        iterations_per_phase=4,
        gen_config={"enc_channels": (4, 6, 8), "bottleneck_blocks": 2,
                    "dec_channels": (6, 4), "attn_channels": (4, 4, 1)},
        critic_config={"channels": (4, 4, 6, 6)},
        quality_config={"blstm_hidden": 32, "dense_hidden": 16},
    )
    base.update(kw)
    return TrainConfig(**base)
