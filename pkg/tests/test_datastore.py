"""Manifest ingestion, rating store durability, checkpoint fidelity."""

import threading

import numpy as np
import pytest

from unmask import datastore
from unmask.datastore import (
    Checkpoint,
    CorpusManifest,
    ManifestEntry,
    Rating,
    RatingStore,
    ingest,
    load_checkpoint,
    save_checkpoint,
)
from unmask.errors import ConflictError, InvalidInputError
from unmask.signal import Waveform, write_wav

RNG = np.random.default_rng(3)


def make_corpus(root, conditions=("clean", "n95", "cotton", "plastic"),
                speakers=("s0", "s1"), n=5, samples=1200):
    for c in conditions:
        for s in speakers:
            d = root / c / s
            d.mkdir(parents=True, exist_ok=True)
            for i in range(n):
                write_wav(d / f"u{i}.wav", Waveform(RNG.standard_normal(samples) * 0.1))


def test_ingest_counts(tmp_path):
    make_corpus(tmp_path)
    m = ingest(tmp_path, seed=0)
    assert len(m.entries) == 40
    assert m.conditions() == ["clean", "cotton", "n95", "plastic"]


def test_ingest_rejects_unknown_condition(tmp_path, caplog):
    import logging

    make_corpus(tmp_path, conditions=("clean",), n=2)
    make_corpus(tmp_path, conditions=("balaclava",), n=2)
    with caplog.at_level(logging.WARNING):
        m = ingest(tmp_path, seed=0)
    assert len(m.entries) == 4
    assert any("UnknownConditionError" in r.message for r in caplog.records)


def test_ingest_split_deterministic_and_grouped(tmp_path):
    make_corpus(tmp_path, n=10)
    a = ingest(tmp_path, seed=5)
    b = ingest(tmp_path, seed=5)
    assert [e.split for e in a.entries] == [e.split for e in b.entries]
    # all conditions of one recording share a split
    by_key = {}
    for e in a.entries:
        key = (e.speaker_id, e.utterance_id.split("/")[-1])
        by_key.setdefault(key, set()).add(e.split)
    assert all(len(v) == 1 for v in by_key.values())


def test_ingest_skips_malformed(tmp_path, caplog):
    import logging

    make_corpus(tmp_path, conditions=("clean",), n=2)
    bad = tmp_path / "clean" / "s0" / "broken.wav"
    bad.write_bytes(b"RIFFgarbage")
    with caplog.at_level(logging.WARNING):
        m = ingest(tmp_path, seed=0)
    assert all("broken" not in e.utterance_id for e in m.entries)


def test_manifest_roundtrip(tmp_path):
    make_corpus(tmp_path, n=3)
    m = ingest(tmp_path, seed=1)
    p = tmp_path / "manifest.jsonl"
    m.save(p)
    m2 = CorpusManifest.load(p)
    assert m.entries == m2.entries


def test_manifest_rejects_duplicates():
    e = ManifestEntry("clean/s/u", "/tmp/u.wav", "s", "clean", "train", 1.0)
    with pytest.raises(InvalidInputError):
        CorpusManifest(entries=[e, e])


def test_rating_validation(tmp_path):
    with pytest.raises(InvalidInputError):
        Rating("u", "r", 6)
    with pytest.raises(InvalidInputError):
        Rating("u", "r", 0)


def test_rating_store_mean_and_absent(tmp_path):
    store = RatingStore(tmp_path / "ratings.jsonl")
    for i, s in enumerate((3, 4, 5)):
        store.record(Rating("utt1", f"r{i}", s))
    assert store.mean_mos("utt1") == pytest.approx(4.0)
    assert store.mean_mos("nothing") is None


def test_rating_store_rejects_duplicates(tmp_path):
    store = RatingStore(tmp_path / "ratings.jsonl")
    store.record(Rating("u", "r", 3, session_id="s1"))
    with pytest.raises(ConflictError):
        store.record(Rating("u", "r", 4, session_id="s1"))
    store.record(Rating("u", "r", 4, session_id="s2"))
    assert len(store) == 2


def test_rating_store_concurrent_writers(tmp_path):
    # count-reconciliation oracle: every write lands exactly once
    store = RatingStore(tmp_path / "ratings.jsonl")
    n_threads, per_thread = 8, 25

    def work(tid):
        for i in range(per_thread):
            store.record(Rating(f"u{i}", f"rater{tid}", 1 + (i + tid) % 5))

    threads = [threading.Thread(target=work, args=(t,)) for t in range(n_threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    rows = store.load_ratings()
    assert len(rows) == n_threads * per_thread
    keys = {(r.utterance_id, r.rater_id, r.session_id) for r in rows}
    assert len(keys) == n_threads * per_thread


def test_rating_store_append_only(tmp_path):
    store = RatingStore(tmp_path / "r.jsonl")
    assert not hasattr(store, "delete")
    store.record(Rating("u", "r", 2))
    text_before = (tmp_path / "r.jsonl").read_text()
    store.record(Rating("u2", "r", 3))
    assert (tmp_path / "r.jsonl").read_text().startswith(text_before)


def test_checkpoint_bitwise_roundtrip(tmp_path):
    params = {"a.w": RNG.standard_normal((4, 5)), "b.w": RNG.standard_normal(7).astype(np.float32)}
    opt = {"t": 3, "m": {k: np.zeros_like(v) for k, v in params.items()},
           "v": {k: np.ones_like(v) for k, v in params.items()}}
    ck = Checkpoint(kind="generator", config={"depth": 2, "dtype": "float64"},
                    params=params, opt_state=opt,
                    provenance={"phase": 1, "iteration": 10, "seed": 0})
    p = tmp_path / "ck.npz"
    save_checkpoint(p, ck)
    back = load_checkpoint(p)
    assert back.kind == "generator"
    assert back.config == ck.config
    for k, v in params.items():
        np.testing.assert_array_equal(back.params[k], v)
        assert back.params[k].dtype == v.dtype
    assert back.opt_state["t"] == 3
    np.testing.assert_array_equal(back.opt_state["v"]["a.w"], opt["v"]["a.w"])
    assert back.provenance["phase"] == 1


def test_checkpoint_hash_guard(tmp_path):
    ck = Checkpoint(kind="critic", config={"k": 1}, params={"w": np.zeros(3)})
    p = tmp_path / "ck.npz"
    save_checkpoint(p, ck)
    import json

    import numpy as np2

    with np2.load(p, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    meta["config"]["k"] = 2  # tamper without refreshing the hash
    arrays["__meta__"] = np2.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np2.uint8)
    np2.savez(p, **arrays)
    with pytest.raises(InvalidInputError):
        load_checkpoint(p)
