"""HTTP rating service backing the listening-test client.

Serves utterances to rate on the 1..5 scale and paired-comparison trials,
collects the responses into the datastore, and reports live campaign
status.  Payloads never carry condition labels or the hidden pair truth:
audio items travel under opaque aliases and correctness is judged
server-side.  Rater identities are anonymous server-issued tokens.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field, asdict

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse
from pydantic import BaseModel, Field

from .datastore import AppendLog, CorpusManifest, Rating, RatingStore
from .errors import ConflictError, InvalidInputError
from .evaluation import PAIR_ANSWERS, PairResponse, overall_accuracy, paired_accuracy


@dataclass
class MosItem:
    item_id: str       # opaque alias used in payloads and audio urls
    utterance_id: str  # internal id the rating is stored under
    path: str


@dataclass
class PairItem:
    pair_id: str
    clean_path: str
    other_path: str
    other_utterance_id: str
    mask_type: str     # hidden truth, never serialized to clients
    pair_kind: str     # Mask | Enhanced


@dataclass
class Campaign:
    name: str
    seed: int
    mos_items: list
    pair_items: list
    ratings_path: str
    responses_path: str

    def save(self, path):
        doc = {
            "name": self.name,
            "seed": self.seed,
            "mos_items": [asdict(m) for m in self.mos_items],
            "pair_items": [asdict(p) for p in self.pair_items],
            "ratings_path": self.ratings_path,
            "responses_path": self.responses_path,
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(doc, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        return cls(
            name=doc["name"],
            seed=doc["seed"],
            mos_items=[MosItem(**m) for m in doc["mos_items"]],
            pair_items=[PairItem(**p) for p in doc["pair_items"]],
            ratings_path=doc["ratings_path"],
            responses_path=doc["responses_path"],
        )


def build_campaign(manifest: CorpusManifest, out_dir, enhancer=None, name="campaign",
                   seed=0, rate_enhanced=True, rate_masked=True, rate_clean=True,
                   max_items=None, max_pairs=None) -> Campaign:
    """Assemble rating and pair tasks from a manifest.

    Masked utterances may be rated raw and, when an enhancer is given, in
    their enhanced form (written under ``out_dir``).  Pairs couple a clean
    recording with a masked or enhanced one from a different speaker and
    sentence, as the hidden truth the listener must spot.
    """
    from .signal import read_wav, write_wav
    from .trainer import ENHANCED_PREFIX

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    rated = []  # (internal_id, path, condition, kind)
    for e in manifest.entries:
        if e.condition == "clean":
            if rate_clean:
                rated.append((e.utterance_id, e.path, "clean", "Clean"))
            continue
        if rate_masked:
            rated.append((e.utterance_id, e.path, e.condition, "Mask"))
        if rate_enhanced and enhancer is not None:
            alias_path = os.path.join(out_dir, "enhanced", e.condition, e.speaker_id)
            os.makedirs(alias_path, exist_ok=True)
            path = os.path.join(alias_path, os.path.basename(e.path))
            write_wav(path, enhancer.enhance(read_wav(e.path)))
            rated.append((ENHANCED_PREFIX + e.utterance_id, path, e.condition, "Enhanced"))

    order = rng.permutation(len(rated))
    if max_items is not None:
        order = order[:max_items]
    mos_items = [MosItem(item_id=f"m{k:04d}", utterance_id=rated[i][0], path=rated[i][1])
                 for k, i in enumerate(order)]

    clean_pool = [e for e in manifest.entries if e.condition == "clean"]
    pair_items = []
    k = 0
    pool = [r for r in rated if r[3] in ("Mask", "Enhanced")]
    for utt_id, path, condition, kind in pool:
        speaker = utt_id.split("/")[-2]
        stem = utt_id.split("/")[-1]
        partners = [c for c in clean_pool
                    if c.speaker_id != speaker and not c.utterance_id.endswith("/" + stem)]
        if not partners:
            continue
        partner = partners[int(rng.integers(len(partners)))]
        pair_items.append(PairItem(
            pair_id=f"p{k:04d}", clean_path=partner.path, other_path=path,
            other_utterance_id=utt_id, mask_type=condition, pair_kind=kind))
        k += 1
        if max_pairs is not None and k >= max_pairs:
            break

    return Campaign(
        name=name, seed=seed, mos_items=mos_items, pair_items=pair_items,
        ratings_path=os.path.join(out_dir, "ratings.jsonl"),
        responses_path=os.path.join(out_dir, "pair_responses.jsonl"),
    )


class RatingIn(BaseModel):
    rater_id: str
    task_id: str
    score: int = Field(ge=1, le=5)
    play_count: int | None = None


class PairIn(BaseModel):
    rater_id: str
    pair_id: str
    answer: str


class _RaterState:
    def __init__(self, rater_id, campaign: Campaign):
        import zlib

        rng = np.random.default_rng(
            (campaign.seed * 2654435761 + zlib.crc32(rater_id.encode())) % 2 ** 32)
        self.mos_order = list(rng.permutation(len(campaign.mos_items)))
        self.pair_order = list(rng.permutation(len(campaign.pair_items)))
        # independent per-(rater, pair) coin for the presentation order
        self.pair_flip = {i: bool(rng.integers(2)) for i in self.pair_order}
        self.mos_done = set()
        self.pair_done = set()


def create_app(campaign: Campaign, static_dir=None) -> FastAPI:
    app = FastAPI(title="listening-test rating service")
    ratings = RatingStore(campaign.ratings_path)
    responses = AppendLog(campaign.responses_path, key_fields=("pair_id", "rater_id"))
    raters: dict[str, _RaterState] = {}
    lock = threading.Lock()

    mos_by_task = {m.item_id: m for m in campaign.mos_items}
    pair_by_id = {p.pair_id: p for p in campaign.pair_items}
    mos_index = {m.item_id: i for i, m in enumerate(campaign.mos_items)}
    pair_index = {p.pair_id: i for i, p in enumerate(campaign.pair_items)}
    item_of_utterance = {m.utterance_id: m.item_id for m in campaign.mos_items}
    audio_paths = {}
    for m in campaign.mos_items:
        audio_paths[m.item_id] = m.path
    for p in campaign.pair_items:
        audio_paths[p.pair_id + "c"] = p.clean_path
        audio_paths[p.pair_id + "o"] = p.other_path

    def rater(rater_id) -> _RaterState:
        with lock:
            if rater_id not in raters:
                raise HTTPException(status_code=404, detail="unknown rater")
            return raters[rater_id]

    @app.post("/api/session")
    def new_session():
        rater_id = "r-" + uuid.uuid4().hex[:12]
        with lock:
            raters[rater_id] = _RaterState(rater_id, campaign)
        return {"rater_id": rater_id, "mos_total": len(campaign.mos_items),
                "pair_total": len(campaign.pair_items)}

    @app.get("/api/task")
    def next_task(rater_id: str):
        st = rater(rater_id)
        total = len(campaign.mos_items)
        done = len(st.mos_done)
        for idx in st.mos_order:
            if idx in st.mos_done:
                continue
            item = campaign.mos_items[idx]
            return {"task_id": item.item_id, "utterance": item.item_id,
                    "audio_url": f"/audio/{item.item_id}",
                    "progress": {"done": done, "total": total}}
        return {"done": True, "progress": {"done": done, "total": total}}

    @app.post("/api/rating")
    def submit_rating(body: RatingIn):
        st = rater(body.rater_id)
        item = mos_by_task.get(body.task_id)
        if item is None:
            raise HTTPException(status_code=404, detail="unknown task")
        idx = mos_index[body.task_id]
        if idx in st.mos_done:
            raise HTTPException(status_code=409, detail="task already answered")
        try:
            ratings.record(Rating(utterance_id=item.utterance_id, rater_id=body.rater_id,
                                  score=body.score, session_id=campaign.name))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        st.mos_done.add(idx)
        return {"ok": True,
                "progress": {"done": len(st.mos_done), "total": len(campaign.mos_items)}}

    @app.get("/api/pair")
    def next_pair(rater_id: str):
        st = rater(rater_id)
        total = len(campaign.pair_items)
        done = len(st.pair_done)
        for idx in st.pair_order:
            if idx in st.pair_done:
                continue
            p = campaign.pair_items[idx]
            flip = st.pair_flip[idx]
            first, second = (p.pair_id + "o", p.pair_id + "c") if flip else \
                            (p.pair_id + "c", p.pair_id + "o")
            return {"pair_id": p.pair_id,
                    "first_url": f"/audio/{first}", "second_url": f"/audio/{second}",
                    "progress": {"done": done, "total": total}}
        return {"done": True, "progress": {"done": done, "total": total}}

    @app.post("/api/pair-response")
    def submit_pair(body: PairIn):
        st = rater(body.rater_id)
        if body.answer not in PAIR_ANSWERS:
            raise HTTPException(status_code=422, detail=f"answer must be one of {PAIR_ANSWERS}")
        p = pair_by_id.get(body.pair_id)
        if p is None:
            raise HTTPException(status_code=404, detail="unknown pair")
        idx = pair_index[body.pair_id]
        if idx in st.pair_done:
            raise HTTPException(status_code=409, detail="pair already answered")
        truth = "first" if st.pair_flip[idx] else "second"  # position of the non-clean clip
        correct = body.answer == truth
        try:
            responses.append({"pair_id": p.pair_id, "rater_id": body.rater_id,
                              "mask_type": p.mask_type, "pair_kind": p.pair_kind,
                              "answer": body.answer, "correct": correct})
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        st.pair_done.add(idx)
        return {"ok": True,
                "progress": {"done": len(st.pair_done), "total": len(campaign.pair_items)}}

    @app.get("/api/status")
    def status():
        # operator-facing aggregate view: per-item means use the opaque item
        # aliases and the accuracy table is keyed by aggregate cell, so no
        # rater-visible payload ever links one task to its condition
        rows = ratings.load_ratings()
        mean_mos = {}
        for r in rows:
            key = item_of_utterance.get(r.utterance_id, r.utterance_id)
            mean_mos.setdefault(key, []).append(r.score)
        mean_mos = {k: float(np.mean(v)) for k, v in mean_mos.items()}
        resp = [PairResponse(pair_id=d["pair_id"], mask_type=d["mask_type"],
                             pair_kind=d["pair_kind"], subject_id=d["rater_id"],
                             answer=d["answer"], correct=d["correct"])
                for d in responses.load()]
        table = paired_accuracy(resp)
        cells = {f"{k[0]}|{k[1]}": v for k, v in table.items()}
        return {"ratings": len(rows), "mean_mos": mean_mos,
                "pair_responses": len(resp), "pair_cells": cells,
                "overall_pair_accuracy": overall_accuracy(table),
                "raters": len(raters)}

    @app.get("/audio/{token}")
    def audio(token: str):
        path = audio_paths.get(token)
        if path is None or not os.path.exists(path):
            raise HTTPException(status_code=404, detail="unknown audio")
        return FileResponse(path, media_type="audio/wav")

    if static_dir and os.path.isdir(static_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def serve(campaign_path, host="127.0.0.1", port=8000, static_dir=None):
    import uvicorn

    campaign = Campaign.load(campaign_path)
    app = create_app(campaign, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
