"""Three-phase training protocol and inference-time enhancement.

Phase 1 trains generator and critic adversarially without the quality
predictor; Phase 2 fits the quality predictor to collected listener ratings
of enhanced and clean speech; Phase 3 trains everything jointly, steering
the generator toward the maximum rating through the predictor.  Phases 2
and 3 alternate for a configurable number of rounds.

Features are z-scored per frequency bin with statistics taken from the
training split; the statistics ride along in the generator checkpoint so
enhancement undoes them.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses as L
from . import nn
from . import quality as Q
from . import signal as sig
from .critic import CriticConfig, CriticNet
from .datastore import Checkpoint, CorpusManifest, Rating, RatingStore
from .errors import ConfigurationError, InvalidInputError
from .generator import CONDITIONS, GeneratorConfig, GeneratorNet
from .losses import LossReport, LossWeights
from .quality import QualityConfig, QualityPredictor
from .signal import SpectralFrames, Waveform, istft, istft_vjp, read_wav, stft

log = logging.getLogger(__name__)

STD_FLOOR = 1e-3


@dataclass
class TrainConfig:
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 2
    iterations_per_phase: int = 5000
    rounds: int = 2
    weights: LossWeights = field(default_factory=LossWeights)
    variant: str = "full"  # full | noM | noMA
    seed: int = 0
    crop_frames: int = 96
    dtype: str = "float32"
    adv_mode: str = "ratio"
    gen_config: dict = field(default_factory=dict)
    critic_config: dict = field(default_factory=dict)
    quality_config: dict = field(default_factory=dict)
    log_path: str | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.iterations_per_phase < 0:
            raise ConfigurationError("lr, batch size and iteration counts must be positive")
        if self.variant not in ("full", "noM", "noMA"):
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    def build_generator(self, seed=None) -> GeneratorNet:
        kw = dict(self.gen_config)
        kw.setdefault("dtype", self.dtype)
        if self.variant == "noMA":
            kw["use_attention"] = False
        return GeneratorNet(GeneratorConfig(**kw), self.seed if seed is None else seed)

    def build_critic(self, seed=None) -> CriticNet:
        kw = dict(self.critic_config)
        kw.setdefault("dtype", self.dtype)
        return CriticNet(CriticConfig(**kw), (self.seed if seed is None else seed) + 1)

    def build_quality(self, seed=None) -> QualityPredictor:
        kw = dict(self.quality_config)
        kw.setdefault("dtype", self.dtype)
        return QualityPredictor(QualityConfig(**kw), (self.seed if seed is None else seed) + 2)


# ---------------------------------------------------------------------------
# corpus access


class _Corpus:
    """In-memory spectral cache of the training split, grouped by condition."""

    def __init__(self, manifest: CorpusManifest, split="train"):
        self.items = []
        entries = manifest.by_split(split) or manifest.entries
        for e in entries:
            w = read_wav(e.path)
            if len(w) < sig.WINDOW:
                log.warning("skipping too-short utterance %s", e.utterance_id)
                continue
            s = stft(w)
            self.items.append({
                "entry": e,
                "spec": s,
                "cond": CONDITIONS.index(e.condition),
            })
        self.by_cond = {c: [it for it in self.items if it["cond"] == c]
                        for c in range(len(CONDITIONS))}

    def conditions_present(self):
        return [c for c, its in self.by_cond.items() if its]

    def feature_stats(self):
        all_lps = np.concatenate([it["spec"].lps for it in self.items], axis=0)
        mean = all_lps.mean(axis=0)
        std = np.maximum(all_lps.std(axis=0), STD_FLOOR)
        return mean, std


def _crop_spec(spec: SpectralFrames, crop, rng):
    t = spec.frames
    if t >= crop:
        start = int(rng.integers(0, t - crop + 1))
        return spec.lps[start : start + crop], spec.phase[start : start + crop]
    reps = -(-crop // t)
    lps = np.tile(spec.lps, (reps, 1))[:crop]
    phase = np.tile(spec.phase, (reps, 1))[:crop]
    return lps, phase


def _one_hot(indices):
    out = np.zeros((len(indices), len(CONDITIONS)))
    out[np.arange(len(indices)), indices] = 1.0
    return out


# ---------------------------------------------------------------------------
# checkpoint plumbing


def _rng_state(rng):
    return json.loads(json.dumps(rng.bit_generator.state))


def _make_rng(seed, state=None):
    rng = np.random.default_rng(seed)
    if state is not None:
        rng.bit_generator.state = state
    return rng


@dataclass
class Enhancer:
    """Generator plus the feature statistics needed to run it on audio."""

    net: GeneratorNet
    feat_mean: np.ndarray
    feat_std: np.ndarray

    def normalize(self, lps):
        return (lps - self.feat_mean) / self.feat_std

    def denormalize(self, lps):
        return lps * self.feat_std + self.feat_mean

    def enhance(self, w: Waveform) -> Waveform:
        s = stft(w)
        yn = self.normalize(s.lps)
        code = _one_hot([CONDITIONS.index("clean")])
        out, _ = self.net.forward(yn[None], code)
        lps_out = self.denormalize(out[0].astype(np.float64))
        return istft(SpectralFrames(lps=lps_out, phase=s.phase))


def generator_checkpoint(enh: Enhancer, cfg: TrainConfig, opt, provenance) -> Checkpoint:
    params = {k: v.copy() for k, v in enh.net.params().items()}
    params["feat.mean"] = enh.feat_mean.copy()
    params["feat.std"] = enh.feat_std.copy()
    return Checkpoint(
        kind="generator",
        config={"generator": enh.net.config.to_dict(), "train": cfg.to_dict()},
        params=params,
        opt_state=None if opt is None else opt.state(),
        provenance=provenance,
    )


def load_enhancer(ckpt: Checkpoint) -> Enhancer:
    if ckpt.kind != "generator":
        raise InvalidInputError(f"expected a generator checkpoint, got {ckpt.kind!r}")
    gcfg = GeneratorConfig.from_dict(ckpt.config["generator"])
    net = GeneratorNet(gcfg, ckpt.provenance.get("seed", 0))
    params = dict(ckpt.params)
    feat_mean = params.pop("feat.mean")
    feat_std = params.pop("feat.std")
    net.load_params(params)
    return Enhancer(net=net, feat_mean=feat_mean, feat_std=feat_std)


def model_checkpoint(net, cfg: TrainConfig, opt, provenance) -> Checkpoint:
    return Checkpoint(
        kind=net.kind,
        config={net.kind: net.config.to_dict(), "train": cfg.to_dict()},
        params={k: v.copy() for k, v in net.params().items()},
        opt_state=None if opt is None else opt.state(),
        provenance=provenance,
    )


def load_critic(ckpt: Checkpoint) -> CriticNet:
    net = CriticNet(CriticConfig.from_dict(ckpt.config["critic"]), ckpt.provenance.get("seed", 1))
    net.load_params(ckpt.params)
    return net


def load_quality(ckpt: Checkpoint) -> QualityPredictor:
    net = QualityPredictor(QualityConfig.from_dict(ckpt.config["quality"]),
                           ckpt.provenance.get("seed", 2))
    net.load_params(ckpt.params)
    return net


def _adam(net, cfg: TrainConfig, state=None):
    opt = nn.Adam(net.params(), lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2)
    if state is not None:
        opt.load_state(state)
    return opt


def write_log(path, rows):
    """Loss log as tab-delimited text, one row per iteration."""
    if not rows:
        return
    keys = list(rows[0].as_row())
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(["iteration"] + keys) + "\n")
        for i, r in enumerate(rows):
            vals = r.as_row()
            f.write("\t".join([str(i)] + [repr(vals[k]) for k in keys]) + "\n")


# ---------------------------------------------------------------------------
# phase 1


@dataclass
class Phase1Result:
    generator: Checkpoint
    critic: Checkpoint
    log: list


def _adversarial_iteration(gen, critic, gen_opt, critic_opt, corpus, enh, cfg, rng,
                           quality_term=None, t_clean_only=False):
    """One critic step followed by one generator step; returns the LossReport."""
    dt = np.dtype(cfg.dtype)
    b = cfg.batch_size
    present = corpus.conditions_present()
    clean_idx = CONDITIONS.index("clean")

    srcs, tgts, reals = [], [], []
    for _ in range(b):
        pool = corpus.items
        if t_clean_only:
            masked = [it for it in corpus.items if it["cond"] != clean_idx]
            if masked:
                pool = masked
        src = pool[int(rng.integers(len(pool)))]
        tgt_cond = clean_idx if t_clean_only else int(present[int(rng.integers(len(present)))])
        real = corpus.by_cond[tgt_cond][int(rng.integers(len(corpus.by_cond[tgt_cond])))]
        srcs.append(src)
        tgts.append(tgt_cond)
        reals.append(real)

    y_lps, y_phase = [], []
    for it in srcs:
        lps, ph = _crop_spec(it["spec"], cfg.crop_frames, rng)
        y_lps.append(enh.normalize(lps))
        y_phase.append(ph)
    y = np.stack(y_lps).astype(dt)
    x_real = np.stack([enh.normalize(_crop_spec(it["spec"], cfg.crop_frames, rng)[0])
                       for it in reals]).astype(dt)
    t_codes = _one_hot(tgts).astype(dt)
    s_codes = _one_hot([it["cond"] for it in srcs]).astype(dt)
    t_labels = np.asarray(tgts)

    rep = LossReport()

    # critic step: discriminate real/fake, classify real conditions
    fake, fake_cache = gen.forward(y, t_codes)
    critic.zero_grads()
    _, pooled_r, real_r, cache_r = critic.forward(x_real)
    _, _, real_f, cache_f = critic.forward(fake)
    probs_r = nn.softmax(pooled_r)
    rep.adv_d, _ = L.adv_losses(real_r, real_f, cfg.adv_mode)
    rep.cls_c = L.cls_loss(probs_r, t_labels)
    g_r, g_f = L.adv_d_grads(real_r, real_f, cfg.adv_mode)
    g_pooled = cfg.weights.lambda1 * L.cls_grad_wrt_logits(probs_r, t_labels)
    critic.backward(cache_r, g_cls_pooled=g_pooled.astype(dt), g_realness=g_r.astype(dt))
    critic.backward(cache_f, g_realness=g_f.astype(dt))
    critic_opt.step(critic.grads())

    # generator step against the just-updated critic
    gen.zero_grads()
    critic.zero_grads()
    _, pooled_f, real_f2, cache_f2 = critic.forward(fake)
    probs_f = nn.softmax(pooled_f)
    # the generator-side adversarial loss only involves the fake scores
    _, rep.adv_g = L.adv_losses(real_f2, real_f2, cfg.adv_mode)
    rep.cls_g = L.cls_loss(probs_f, t_labels)

    cyc_out, cyc_cache = gen.forward(fake, s_codes)
    rep.cyc = L.l1_loss(cyc_out, y)
    idm_out, idm_cache = gen.forward(y, s_codes)
    rep.idm = L.l1_loss(idm_out, y)

    g_fake = critic.backward(
        cache_f2,
        g_cls_pooled=(cfg.weights.lambda3 * L.cls_grad_wrt_logits(probs_f, t_labels)).astype(dt),
        g_realness=L.adv_g_grad(real_f2).astype(dt),
    )
    g_fake = g_fake + gen.backward(cyc_cache, (cfg.weights.lambda2 * L.l1_grad(cyc_out, y)).astype(dt))
    gen.backward(idm_cache, (cfg.weights.lambda4 * L.l1_grad(idm_out, y)).astype(dt))

    if quality_term is not None:
        rep.mos, g_fake_mos = quality_term(fake, y_phase)
        g_fake = g_fake + g_fake_mos
    gen.backward(fake_cache, g_fake.astype(dt))
    gen_opt.step(gen.grads())

    L.compose(rep, cfg.weights, with_mos=quality_term is not None)
    return rep


def train_phase1(manifest: CorpusManifest, cfg: TrainConfig, resume=None,
                 iterations=None) -> Phase1Result:
    """Adversarial training without the quality predictor."""
    corpus = _Corpus(manifest)
    if len(corpus.conditions_present()) < len(CONDITIONS):
        missing = [CONDITIONS[c] for c in range(len(CONDITIONS))
                   if c not in corpus.conditions_present()]
        raise ConfigurationError(f"missing conditions in training data: {missing}")

    if resume is None:
        gen = cfg.build_generator()
        critic = cfg.build_critic()
        feat_mean, feat_std = corpus.feature_stats()
        enh = Enhancer(net=gen, feat_mean=feat_mean, feat_std=feat_std)
        gen_opt = _adam(gen, cfg)
        critic_opt = _adam(critic, cfg)
        rng = _make_rng(cfg.seed)
        start = 0
    else:
        gen_ckpt, critic_ckpt = resume
        enh = load_enhancer(gen_ckpt)
        gen = enh.net
        critic = load_critic(critic_ckpt)
        gen_opt = _adam(gen, cfg, _gen_opt_state(gen_ckpt))
        critic_opt = _adam(critic, cfg, critic_ckpt.opt_state)
        rng = _make_rng(cfg.seed, gen_ckpt.provenance["rng_state"])
        start = gen_ckpt.provenance["iteration"]

    rows = []
    total = cfg.iterations_per_phase if iterations is None else iterations
    for _ in range(start, total):
        rows.append(_adversarial_iteration(gen, critic, gen_opt, critic_opt,
                                           corpus, enh, cfg, rng))

    prov = {"phase": 1, "iteration": total, "seed": cfg.seed,
            "rng_state": _rng_state(rng), "variant": cfg.variant}
    result = Phase1Result(
        generator=generator_checkpoint(enh, cfg, gen_opt, prov),
        critic=model_checkpoint(critic, cfg, critic_opt, dict(prov, seed=cfg.seed + 1)),
        log=rows,
    )
    if cfg.log_path:
        write_log(cfg.log_path, rows)
    return result


def _gen_opt_state(gen_ckpt):
    # the generator checkpoint stores feat stats alongside params; the
    # optimizer state only covers the trainable arrays
    if gen_ckpt.opt_state is None:
        return None
    st = gen_ckpt.opt_state
    keep = {k for k in st["m"] if not k.startswith("feat.")}
    return {"t": st["t"], "m": {k: st["m"][k] for k in keep},
            "v": {k: st["v"][k] for k in keep}}


# ---------------------------------------------------------------------------
# phase 2


def mean_ratings(ratings) -> dict:
    """utterance_id -> mean score over its ratings."""
    if isinstance(ratings, RatingStore):
        ratings = ratings.load_ratings()
    acc = {}
    for r in ratings:
        acc.setdefault(r.utterance_id, []).append(r.score)
    return {k: float(np.mean(v)) for k, v in acc.items()}


ENHANCED_PREFIX = "enhanced/"


def build_rated_pairs(manifest: CorpusManifest, ratings, enh: Enhancer | None):
    """(waveform, target) training pairs for the quality predictor.

    Each label stays attached to the audio that was actually rated: plain
    manifest ids load the stored file, while ``enhanced/<id>`` items are
    regenerated deterministically through the generator checkpoint.
    """
    targets = mean_ratings(ratings)
    if not targets:
        raise ConfigurationError("empty rating set")
    pairs = []
    for utt_id, target in sorted(targets.items()):
        base_id = utt_id
        enhanced = utt_id.startswith(ENHANCED_PREFIX)
        if enhanced:
            base_id = utt_id[len(ENHANCED_PREFIX):]
        entry = manifest.get(base_id)
        if entry is None:
            raise ConfigurationError(f"rating references unknown utterance {utt_id!r}")
        w = read_wav(entry.path)
        if enhanced:
            if enh is None:
                raise ConfigurationError(
                    f"rated item {utt_id!r} needs a generator checkpoint to reproduce")
            w = enh.enhance(w)
        pairs.append((w, target))
    return pairs


@dataclass
class Phase2Result:
    quality: Checkpoint
    log: list
    final_l1: float


def train_phase2(ratings, gen_ckpt: Checkpoint | None, cfg: TrainConfig,
                 manifest: CorpusManifest, resume=None, iterations=None,
                 pairs=None) -> Phase2Result:
    """Fit the quality predictor to utterance-level mean ratings."""
    if pairs is None:
        enh = load_enhancer(gen_ckpt) if gen_ckpt is not None else None
        pairs = build_rated_pairs(manifest, ratings, enh)

    if resume is None:
        qnet = cfg.build_quality()
        opt = _adam(qnet, cfg)
        rng = _make_rng(cfg.seed + 1000)
        start = 0
    else:
        qnet = load_quality(resume)
        opt = _adam(qnet, cfg, resume.opt_state)
        rng = _make_rng(cfg.seed + 1000, resume.provenance["rng_state"])
        start = resume.provenance["iteration"]

    crop_samples = (cfg.crop_frames - 1) * sig.HOP + sig.WINDOW
    rows = []
    total = cfg.iterations_per_phase if iterations is None else iterations
    for _ in range(start, total):
        batch = [pairs[int(rng.integers(len(pairs)))] for _ in range(cfg.batch_size)]
        qnet.zero_grads()
        rep = LossReport()
        scores, tgts = [], []
        caches = []
        for w, target in batch:
            x = w.samples
            if len(x) > crop_samples:
                s0 = int(rng.integers(0, len(x) - crop_samples + 1))
                x = x[s0 : s0 + crop_samples]
            wv = Waveform(x)
            sc, cache = qnet.score_with_cache(wv)
            scores.append(float(np.mean(sc)))
            tgts.append(target)
            caches.append((sc, cache))
        rep.mos = L.mos_loss(scores, tgts)
        g_utts = L.mos_grad(scores, tgts)
        for g_u, (sc, cache) in zip(g_utts, caches):
            qnet.backward_to_waveform(cache, np.full(sc.shape, g_u / sc.size))
        opt.step(qnet.grads())
        rows.append(rep)

    final = float(L.mos_loss(
        [qnet.predict_mos(w).utterance_score for w, _ in pairs],
        [t for _, t in pairs]))
    prov = {"phase": 2, "iteration": total, "seed": cfg.seed + 2,
            "rng_state": _rng_state(rng), "variant": cfg.variant}
    return Phase2Result(
        quality=model_checkpoint(qnet, cfg, opt, prov), log=rows, final_l1=final)


# ---------------------------------------------------------------------------
# phase 3


@dataclass
class Phase3Result:
    generator: Checkpoint
    critic: Checkpoint
    quality: Checkpoint | None
    log: list


def train_phase3(gen_ckpt: Checkpoint, critic_ckpt: Checkpoint, quality_model,
                 cfg: TrainConfig, manifest: CorpusManifest, ratings=None,
                 iterations=None) -> Phase3Result:
    """Joint training: the generator also minimizes the predictor's distance
    from the maximum rating on enhanced audio, with the clean condition as
    the fixed target attribute."""
    if quality_model is None:
        if cfg.variant != "noM":
            raise ConfigurationError(
                "phase 3 requires a quality predictor unless variant='noM' is explicit")
        quality_model = None

    corpus = _Corpus(manifest)
    if len(corpus.conditions_present()) < len(CONDITIONS):
        raise ConfigurationError("phase 3 needs all four conditions in the training data")

    enh = load_enhancer(gen_ckpt)
    gen = enh.net
    critic = load_critic(critic_ckpt)
    gen_opt = _adam(gen, cfg, _gen_opt_state(gen_ckpt))
    critic_opt = _adam(critic, cfg, critic_ckpt.opt_state)
    rng = _make_rng(cfg.seed + 3000)

    trainable_q = quality_model is not None and hasattr(quality_model, "params")
    q_ckpt = quality_model if isinstance(quality_model, Checkpoint) else None
    if q_ckpt is not None:
        quality_model = load_quality(q_ckpt)
        trainable_q = True
    q_opt = None
    q_pairs = None
    if trainable_q:
        q_opt = _adam(quality_model, cfg, q_ckpt.opt_state if q_ckpt else None)
        if ratings is not None:
            q_pairs = build_rated_pairs(manifest, ratings, enh)

    dt = np.dtype(cfg.dtype)
    target_top = 5.0

    def quality_term(fake, y_phase):
        """Mean |M(reconstruction) - 5.0| plus its gradient w.r.t. fake."""
        if quality_model is None:
            return 0.0, np.zeros_like(fake)
        if trainable_q:
            quality_model.zero_grads()
        vals = []
        g_fake = np.zeros_like(fake, dtype=np.float64)
        b = fake.shape[0]
        for i in range(b):
            raw = enh.denormalize(fake[i].astype(np.float64))
            # keep exp(lps/2) finite if the generator wanders early on
            lps_out = np.clip(raw, -60.0, 20.0)
            in_range = (raw > -60.0) & (raw < 20.0)
            spec = SpectralFrames(lps=lps_out, phase=y_phase[i])
            wave = istft(spec)
            if hasattr(quality_model, "score_with_cache"):
                sc, cache = quality_model.score_with_cache(wave)
                score = float(np.mean(sc))
                g_score = np.sign(score - target_top) / (b * sc.size)
                g_wave = quality_model.backward_to_waveform(cache, np.full(sc.shape, g_score))
                g_lps = istft_vjp(spec, g_wave) * in_range
                g_fake[i] = g_lps * enh.feat_std
            else:
                score = quality_model.predict_mos(wave).utterance_score
            vals.append(abs(score - target_top))
        if trainable_q:
            quality_model.zero_grads()  # generator step must not move the predictor
        return float(np.mean(vals)), g_fake.astype(dt)

    rows = []
    total = cfg.iterations_per_phase if iterations is None else iterations
    crop_samples = (cfg.crop_frames - 1) * sig.HOP + sig.WINDOW
    for _ in range(total):
        rep = _adversarial_iteration(gen, critic, gen_opt, critic_opt, corpus, enh,
                                     cfg, rng, quality_term=quality_term, t_clean_only=True)
        # predictor refresh on the latest rated pairs
        if trainable_q and q_pairs:
            quality_model.zero_grads()
            batch = [q_pairs[int(rng.integers(len(q_pairs)))] for _ in range(cfg.batch_size)]
            scores, tgts, caches = [], [], []
            for w, target in batch:
                x = w.samples
                if len(x) > crop_samples:
                    s0 = int(rng.integers(0, len(x) - crop_samples + 1))
                    x = x[s0 : s0 + crop_samples]
                sc, cache = quality_model.score_with_cache(Waveform(x))
                scores.append(float(np.mean(sc)))
                tgts.append(target)
                caches.append((sc, cache))
            for g_u, (sc, cache) in zip(L.mos_grad(scores, tgts), caches):
                quality_model.backward_to_waveform(cache, np.full(sc.shape, g_u / sc.size))
            q_opt.step(quality_model.grads())
        rows.append(rep)

    prov = {"phase": 3, "iteration": total, "seed": cfg.seed,
            "rng_state": _rng_state(rng), "variant": cfg.variant}
    q_out = None
    if trainable_q:
        q_out = model_checkpoint(quality_model, cfg, q_opt, dict(prov, seed=cfg.seed + 2))
    result = Phase3Result(
        generator=generator_checkpoint(enh, cfg, gen_opt, prov),
        critic=model_checkpoint(critic, cfg, critic_opt, dict(prov, seed=cfg.seed + 1)),
        quality=q_out,
        log=rows,
    )
    if cfg.log_path:
        write_log(cfg.log_path, rows)
    return result


# ---------------------------------------------------------------------------
# full protocol


def run_protocol(manifest: CorpusManifest, ratings_source, cfg: TrainConfig,
                 workdir) -> dict:
    """Phase 1 once, then `rounds` alternations of Phases 2 and 3.

    Emits a checkpoint per phase boundary under ``workdir`` and records the
    phase sequence; an interrupted run resumes from the last completed
    boundary.  ``ratings_source`` is a RatingStore, a ratings file path, or a
    list of Rating records; it is re-read at each Phase 2 so freshly
    collected ratings enter the next round.
    """
    os.makedirs(workdir, exist_ok=True)
    state_path = os.path.join(workdir, "protocol_state.json")
    state = {"completed": [], "phase_sequence": []}
    if os.path.exists(state_path):
        with open(state_path, encoding="utf-8") as f:
            state = json.load(f)

    from .datastore import load_checkpoint, save_checkpoint

    def done(tag):
        return tag in state["completed"]

    def finish(tag, phase_no, ckpts):
        for name, ck in ckpts.items():
            ck.provenance["phase_sequence"] = state["phase_sequence"] + [phase_no]
            save_checkpoint(os.path.join(workdir, f"{name}_{tag}.npz"), ck)
        state["completed"].append(tag)
        state["phase_sequence"].append(phase_no)
        with open(state_path, "w", encoding="utf-8") as f:
            json.dump(state, f)

    def load(tag, name):
        return load_checkpoint(os.path.join(workdir, f"{name}_{tag}.npz"))

    def ratings():
        if isinstance(ratings_source, RatingStore):
            return ratings_source.load_ratings()
        if isinstance(ratings_source, (str, os.PathLike)):
            return RatingStore(ratings_source).load_ratings()
        return ratings_source

    if not done("phase1"):
        res = train_phase1(manifest, cfg)
        finish("phase1", 1, {"generator": res.generator, "critic": res.critic})
    gen_ck, critic_ck = load("phase1", "generator"), load("phase1", "critic")

    if cfg.variant in ("noM", "noMA"):
        return {"generator": gen_ck, "critic": critic_ck, "quality": None,
                "phase_sequence": state["phase_sequence"]}

    q_ck = None
    for rnd in range(1, cfg.rounds + 1):
        tag2 = f"phase2_r{rnd}"
        if not done(tag2):
            res2 = train_phase2(ratings(), gen_ck, cfg, manifest)
            finish(tag2, 2, {"quality": res2.quality})
        q_ck = load(tag2, "quality")

        tag3 = f"phase3_r{rnd}"
        if not done(tag3):
            res3 = train_phase3(gen_ck, critic_ck, q_ck, cfg, manifest, ratings=ratings())
            out = {"generator": res3.generator, "critic": res3.critic}
            if res3.quality is not None:
                out["quality"] = res3.quality
            finish(tag3, 3, out)
        gen_ck, critic_ck = load(tag3, "generator"), load(tag3, "critic")
        if os.path.exists(os.path.join(workdir, f"quality_{tag3}.npz")):
            q_ck = load(tag3, "quality")

    return {"generator": gen_ck, "critic": critic_ck, "quality": q_ck,
            "phase_sequence": state["phase_sequence"]}


def enhance(gen_ckpt: Checkpoint, w: Waveform) -> Waveform:
    """Run the trained generator on one utterance with the clean target code."""
    return load_enhancer(gen_ckpt).enhance(w)
