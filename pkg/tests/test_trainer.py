"""Training protocol mechanics at toy scale."""

import numpy as np
import pytest

from conftest import build_masked_corpus, tiny_train_config
from unmask.datastore import Rating, load_checkpoint, save_checkpoint
from unmask.errors import ConfigurationError
from unmask.generator import GeneratorConfig, GeneratorNet
from unmask.quality import ConstantPredictor
from unmask.signal import Waveform, read_wav
from unmask.trainer import (
    Enhancer,
    build_rated_pairs,
    enhance,
    load_enhancer,
    load_quality,
    mean_ratings,
    run_protocol,
    train_phase1,
    train_phase2,
    train_phase3,
    write_log,
)

RNG = np.random.default_rng(55)


def test_zero_iterations_checkpoint_equals_init(tiny_corpus):
    cfg = tiny_train_config()
    res = train_phase1(tiny_corpus, cfg, iterations=0)
    fresh = cfg.build_generator()
    for k, v in fresh.params().items():
        np.testing.assert_array_equal(res.generator.params[k], v)
    assert res.generator.provenance["iteration"] == 0


def test_phase1_deterministic(tiny_corpus):
    cfg = tiny_train_config()
    a = train_phase1(tiny_corpus, cfg, iterations=5)
    b = train_phase1(tiny_corpus, cfg, iterations=5)
    assert [r.as_row() for r in a.log] == [r.as_row() for r in b.log]


def test_phase1_missing_condition(tmp_path):
    import os

    from unmask.datastore import CorpusManifest, ManifestEntry
    from unmask.signal import write_wav

    d = tmp_path / "clean" / "s0"
    d.mkdir(parents=True)
    p = d / "u0.wav"
    write_wav(p, Waveform(RNG.standard_normal(4000) * 0.1))
    manifest = CorpusManifest(entries=[ManifestEntry("clean/s0/u0", str(p), "s0",
                                                     "clean", "train", 0.25)])
    with pytest.raises(ConfigurationError):
        train_phase1(manifest, tiny_train_config(), iterations=1)


def test_checkpoint_resume_bitcompat(tiny_corpus, tmp_path):
    # save -> load -> continue must equal the uninterrupted run at 64-bit
    cfg = tiny_train_config(dtype="float64")
    full = train_phase1(tiny_corpus, cfg, iterations=8)
    half = train_phase1(tiny_corpus, cfg, iterations=4)
    save_checkpoint(tmp_path / "g.npz", half.generator)
    save_checkpoint(tmp_path / "c.npz", half.critic)
    resumed = train_phase1(tiny_corpus, cfg,
                           resume=(load_checkpoint(tmp_path / "g.npz"),
                                   load_checkpoint(tmp_path / "c.npz")),
                           iterations=8)
    full_rows = [r.as_row() for r in full.log[4:]]
    res_rows = [r.as_row() for r in resumed.log]
    assert full_rows == res_rows
    for k, v in full.generator.params.items():
        np.testing.assert_array_equal(resumed.generator.params[k], v)


def test_mean_ratings():
    rs = [Rating("u", "a", 3), Rating("u", "b", 4), Rating("u", "c", 5)]
    assert mean_ratings(rs)["u"] == pytest.approx(4.0)


def test_phase2_validations(tiny_corpus):
    cfg = tiny_train_config()
    with pytest.raises(ConfigurationError):
        train_phase2([], None, cfg, tiny_corpus)
    with pytest.raises(ConfigurationError):
        train_phase2([Rating("ghost/utt/x", "r", 3)], None, cfg, tiny_corpus)


def test_phase2_constant_labels_converge(tmp_path):
    # utterances exactly one crop long, so training covers the whole signal
    cfg = tiny_train_config(iterations_per_phase=250, crop_frames=24, seed=3)
    corpus = build_masked_corpus(str(tmp_path), n_utts=1, n_samples=23 * 80 + 512, seed=11)
    ratings = [Rating(e.utterance_id, "r", 4) for e in corpus.entries]
    res = train_phase2(ratings, None, cfg, corpus)
    assert res.final_l1 < 0.05


def test_phase3_reduces_to_phase1_when_predictor_is_max(tiny_corpus):
    cfg = tiny_train_config()
    p1 = train_phase1(tiny_corpus, cfg, iterations=2)
    res = train_phase3(p1.generator, p1.critic, ConstantPredictor(5.0), cfg,
                       tiny_corpus, iterations=3)
    for r in res.log:
        assert r.mos == 0.0
        assert abs(r.total_hl - r.total_g) < 1e-9


def test_phase3_constant_one_adds_four(tiny_corpus):
    cfg = tiny_train_config()
    p1 = train_phase1(tiny_corpus, cfg, iterations=2)
    res = train_phase3(p1.generator, p1.critic, ConstantPredictor(1.0), cfg,
                       tiny_corpus, iterations=3)
    for r in res.log:
        assert abs(r.total_hl - (r.total_g + 4.0)) < 1e-9


def test_phase3_requires_predictor_unless_noM(tiny_corpus):
    cfg = tiny_train_config()
    p1 = train_phase1(tiny_corpus, cfg, iterations=1)
    with pytest.raises(ConfigurationError):
        train_phase3(p1.generator, p1.critic, None, cfg, tiny_corpus, iterations=1)
    cfg_nom = tiny_train_config(variant="noM")
    res = train_phase3(p1.generator, p1.critic, None, cfg_nom, tiny_corpus, iterations=1)
    assert res.quality is None


def test_phase3_metric_gradient_reaches_generator(tiny_corpus):
    # same seed and data; the only difference is the metric term's gradient
    cfg = tiny_train_config(crop_frames=16)
    p1 = train_phase1(tiny_corpus, cfg, iterations=1)
    frozen = train_phase3(p1.generator, p1.critic, ConstantPredictor(1.0), cfg,
                          tiny_corpus, iterations=1)
    live = train_phase3(p1.generator, p1.critic, cfg.build_quality(), cfg,
                        tiny_corpus, iterations=1)
    diffs = [np.max(np.abs(frozen.generator.params[k] - live.generator.params[k]))
             for k in frozen.generator.params if not k.startswith("feat.")]
    assert max(diffs) > 0.0


def test_enhance_length_and_determinism(tiny_corpus, tmp_path):
    cfg = tiny_train_config()
    res = train_phase1(tiny_corpus, cfg, iterations=2)
    w = read_wav(tiny_corpus.by_condition("cotton")[0].path)
    out1 = enhance(res.generator, w)
    out2 = enhance(res.generator, w)
    assert abs(len(out1) - len(w)) <= 80
    np.testing.assert_array_equal(out1.samples, out2.samples)


def test_rated_pairs_enhanced_prefix(tiny_corpus):
    cfg = tiny_train_config()
    res = train_phase1(tiny_corpus, cfg, iterations=1)
    enh = load_enhancer(res.generator)
    masked_id = tiny_corpus.by_condition("n95")[0].utterance_id
    ratings = [Rating("enhanced/" + masked_id, "r", 4),
               Rating(tiny_corpus.by_condition("clean")[0].utterance_id, "r", 5)]
    pairs = build_rated_pairs(tiny_corpus, ratings, enh)
    assert len(pairs) == 2
    with pytest.raises(ConfigurationError):
        build_rated_pairs(tiny_corpus, [Rating("enhanced/" + masked_id, "r", 4)], None)


def test_run_protocol_sequence_and_resume(tiny_corpus, tmp_path):
    cfg = tiny_train_config(iterations_per_phase=2, rounds=2)
    ratings = [Rating(e.utterance_id, "r", 4) for e in tiny_corpus.entries]
    out = run_protocol(tiny_corpus, ratings, cfg, tmp_path / "run")
    assert out["phase_sequence"] == [1, 2, 3, 2, 3]
    assert out["generator"].provenance["phase_sequence"] == [1, 2, 3, 2, 3]
    # rerun: everything completed, so nothing recomputes and the result reloads
    again = run_protocol(tiny_corpus, ratings, cfg, tmp_path / "run")
    assert again["phase_sequence"] == [1, 2, 3, 2, 3]
    for k, v in out["generator"].params.items():
        np.testing.assert_array_equal(again["generator"].params[k], v)


def test_run_protocol_noM_stops_after_phase1(tiny_corpus, tmp_path):
    cfg = tiny_train_config(variant="noM")
    ratings = []
    out = run_protocol(tiny_corpus, ratings, cfg, tmp_path / "run_nom")
    assert out["phase_sequence"] == [1]
    assert out["quality"] is None


def test_run_protocol_noMA_smaller_generator(tiny_corpus, tmp_path):
    from unmask.evaluation import count_parameters

    cfg_full = tiny_train_config()
    cfg_noma = tiny_train_config(variant="noMA")
    full = train_phase1(tiny_corpus, cfg_full, iterations=1)
    noma = train_phase1(tiny_corpus, cfg_noma, iterations=1)
    assert count_parameters(noma.generator) < count_parameters(full.generator)
    assert noma.generator.config["generator"]["use_attention"] is False


def test_write_log_roundtrip(tiny_corpus, tmp_path):
    cfg = tiny_train_config()
    res = train_phase1(tiny_corpus, cfg, iterations=3)
    path = tmp_path / "log.tsv"
    write_log(path, res.log)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 4
    header = lines[0].split("\t")
    assert "total_g" in header
    row = dict(zip(header, lines[-1].split("\t")))
    assert float(row["total_g"]) == pytest.approx(res.log[-1].total_g)
