"""Durable state: corpus manifests, the append-only rating store, checkpoints.

Manifests and ratings are line-delimited JSON so they stay hand-inspectable
and append-friendly; checkpoints are a single ``.npz`` with a JSON metadata
record next to the named parameter arrays.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import wave
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConflictError, InvalidInputError

log = logging.getLogger(__name__)

CONDITIONS = ("clean", "n95", "cotton", "plastic")
SPLITS = ("train", "validation", "test")


class UnknownConditionError(InvalidInputError):
    """Directory name outside the four-condition taxonomy."""


@dataclass
class ManifestEntry:
    utterance_id: str
    path: str
    speaker_id: str
    condition: str
    split: str
    duration_s: float

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise UnknownConditionError(f"condition {self.condition!r} not in {CONDITIONS}")
        if self.split not in SPLITS:
            raise InvalidInputError(f"split {self.split!r} not in {SPLITS}")


@dataclass
class CorpusManifest:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        ids = [e.utterance_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise InvalidInputError("duplicate utterance_ids in manifest")

    def add(self, entry: ManifestEntry):
        if any(e.utterance_id == entry.utterance_id for e in self.entries):
            raise InvalidInputError(f"duplicate utterance_id {entry.utterance_id}")
        self.entries.append(entry)

    def by_condition(self, condition):
        return [e for e in self.entries if e.condition == condition]

    def by_split(self, split):
        return [e for e in self.entries if e.split == split]

    def get(self, utterance_id):
        for e in self.entries:
            if e.utterance_id == utterance_id:
                return e
        return None

    def conditions(self):
        return sorted({e.condition for e in self.entries})

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                f.write(json.dumps(asdict(e), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        entries = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    entries.append(ManifestEntry(**json.loads(line)))
        return cls(entries=entries)


def _wav_duration(path):
    with wave.open(str(path), "rb") as f:
        rate = f.getframerate()
        if f.getnchannels() != 1:
            raise InvalidInputError("expected mono audio")
        if rate not in (16000, 48000):
            raise InvalidInputError(f"unsupported sample rate {rate}")
        return f.getnframes() / rate, rate


def ingest(root, split_fractions=(0.8, 0.1, 0.1), seed=0) -> CorpusManifest:
    """Walk ``<root>/<condition>/<speaker>/<utt>.wav`` into a manifest.

    Split assignment is per (speaker, utterance-stem) group so all four
    conditions of one recording land in the same split; the assignment is a
    deterministic shuffle under ``seed``.  Malformed files and directories
    outside the condition taxonomy are skipped and logged.
    """
    root = os.path.abspath(root)
    found = {}
    for condition in sorted(os.listdir(root)):
        cdir = os.path.join(root, condition)
        if not os.path.isdir(cdir):
            continue
        if condition not in CONDITIONS:
            log.warning("UnknownConditionError: rejecting directory %r", condition)
            continue
        for speaker in sorted(os.listdir(cdir)):
            sdir = os.path.join(cdir, speaker)
            if not os.path.isdir(sdir):
                continue
            for name in sorted(os.listdir(sdir)):
                if not name.lower().endswith(".wav"):
                    continue
                path = os.path.join(sdir, name)
                try:
                    duration, rate = _wav_duration(path)
                except Exception as exc:
                    log.warning("skipping malformed wav %s: %s", path, exc)
                    continue
                if rate != 16000:
                    log.info("flagged for resampling on read: %s (%d Hz)", path, rate)
                stem = name[:-4]
                found.setdefault((speaker, stem), []).append((condition, path, duration))

    groups = sorted(found)
    order = np.random.default_rng(seed).permutation(len(groups))
    n = len(groups)
    n_train = int(round(split_fractions[0] * n))
    n_val = int(round(split_fractions[1] * n))
    split_of = {}
    for rank, gi in enumerate(order):
        if rank < n_train:
            split_of[groups[gi]] = "train"
        elif rank < n_train + n_val:
            split_of[groups[gi]] = "validation"
        else:
            split_of[groups[gi]] = "test"

    manifest = CorpusManifest()
    for key in groups:
        speaker, stem = key
        for condition, path, duration in sorted(found[key]):
            manifest.add(ManifestEntry(
                utterance_id=f"{condition}/{speaker}/{stem}",
                path=path,
                speaker_id=speaker,
                condition=condition,
                split=split_of[key],
                duration_s=duration,
            ))
    return manifest


@dataclass
class Rating:
    utterance_id: str
    rater_id: str
    score: int
    timestamp: float = 0.0
    session_id: str = "default"

    def __post_init__(self):
        if not isinstance(self.score, int) or not 1 <= self.score <= 5:
            raise InvalidInputError(f"score must be an integer in 1..5, got {self.score!r}")
        if self.timestamp == 0.0:
            self.timestamp = time.time()


class RatingStore:
    """Append-only rating log with (utterance, rater, session) uniqueness.

    Each record is one JSON line written with a single O_APPEND write, so
    concurrent writers interleave without losing or splitting records.
    """

    def __init__(self, path):
        self.path = str(path)
        self._lock = threading.Lock()
        self._keys = set()
        if os.path.exists(self.path):
            for r in self._read_all():
                self._keys.add((r.utterance_id, r.rater_id, r.session_id))

    def _read_all(self):
        out = []
        if not os.path.exists(self.path):
            return out
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    out.append(Rating(**json.loads(line)))
        return out

    def record(self, rating: Rating) -> str:
        key = (rating.utterance_id, rating.rater_id, rating.session_id)
        payload = (json.dumps(asdict(rating), sort_keys=True) + "\n").encode("utf-8")
        with self._lock:
            if key in self._keys:
                raise ConflictError(f"duplicate rating {key}")
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, payload)
            finally:
                os.close(fd)
            self._keys.add(key)
        return "|".join(key)

    def load_ratings(self, utterance_id=None, rater_id=None):
        out = self._read_all()
        if utterance_id is not None:
            out = [r for r in out if r.utterance_id == utterance_id]
        if rater_id is not None:
            out = [r for r in out if r.rater_id == rater_id]
        return out

    def mean_mos(self, utterance_id):
        scores = [r.score for r in self.load_ratings(utterance_id=utterance_id)]
        if not scores:
            return None
        return float(np.mean(scores))

    def __len__(self):
        return len(self._read_all())


class AppendLog:
    """Generic append-only JSON-lines store with optional unique keys."""

    def __init__(self, path, key_fields=()):
        self.path = str(path)
        self.key_fields = tuple(key_fields)
        self._lock = threading.Lock()
        self._keys = {self._key(rec) for rec in self.load()} if self.key_fields else set()

    def _key(self, rec):
        return tuple(rec[k] for k in self.key_fields)

    def load(self):
        out = []
        if not os.path.exists(self.path):
            return out
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    def append(self, rec: dict):
        payload = (json.dumps(rec, sort_keys=True) + "\n").encode("utf-8")
        with self._lock:
            if self.key_fields:
                key = self._key(rec)
                if key in self._keys:
                    raise ConflictError(f"duplicate record {key}")
            fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            try:
                os.write(fd, payload)
            finally:
                os.close(fd)
            if self.key_fields:
                self._keys.add(key)


@dataclass
class Checkpoint:
    kind: str
    config: dict
    params: dict
    opt_state: dict | None = None
    provenance: dict = field(default_factory=dict)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, ckpt: Checkpoint):
    meta = {
        "kind": ckpt.kind,
        "config": ckpt.config,
        "provenance": dict(ckpt.provenance, config_hash=config_hash(ckpt.config)),
        "param_names": sorted(ckpt.params),
        "opt_t": None if ckpt.opt_state is None else int(ckpt.opt_state["t"]),
    }
    arrays = {"p/" + k: v for k, v in ckpt.params.items()}
    if ckpt.opt_state is not None:
        arrays.update({"m/" + k: v for k, v in ckpt.opt_state["m"].items()})
        arrays.update({"v/" + k: v for k, v in ckpt.opt_state["v"].items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        stored = meta["provenance"].get("config_hash")
        if stored != config_hash(meta["config"]):
            raise InvalidInputError("checkpoint config hash mismatch")
        params = {k: z["p/" + k].copy() for k in meta["param_names"]}
        opt_state = None
        if meta["opt_t"] is not None:
            # moments exist only for trainable arrays, not for data riders
            opt_keys = [k[2:] for k in z.files if k.startswith("m/")]
            opt_state = {
                "t": meta["opt_t"],
                "m": {k: z["m/" + k].copy() for k in opt_keys},
                "v": {k: z["v/" + k].copy() for k in opt_keys},
            }
    return Checkpoint(kind=meta["kind"], config=meta["config"], params=params,
                      opt_state=opt_state, provenance=meta["provenance"])
