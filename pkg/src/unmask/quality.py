"""Learned perceptual-quality predictor for masked and enhanced speech.

Two 9-layer convolutional stacks digest complementary views of the input:
one runs over wavelet-scattering coefficients, the other over the raw
windowed waveform frames.  Each stack's per-frame output is projected to
448 features and the pair concatenated into an 896-dim representation per
frame, which a bidirectional LSTM (256 units per direction) and two dense
layers turn into a per-frame score sequence; the utterance score is the
sequence mean.  Any object exposing ``predict_mos`` can stand in for this
model, so alternative predictors plug into the training loop unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from . import signal as sig
from .errors import InvalidInputError
from .signal import Waveform

# (channels, kernel, stride) per hidden layer of both conv blocks
CB_TABLE = (
    (16, 3, (1, 1)),
    (16, 3, (1, 1)),
    (16, 3, (1, 3)),
    (32, 3, (1, 1)),
    (32, 3, (1, 3)),
    (64, 3, (1, 1)),
    (64, 3, (1, 3)),
    (128, 3, (1, 1)),
    (128, 3, (1, 3)),
)

FUSED_WIDTH = 896
PATH_WIDTH = FUSED_WIDTH // 2


def reduced_width(width, table=CB_TABLE):
    """Stepwise ceil arithmetic for the stride-reduced axis of a conv block."""
    for _, _, (_, sw) in table:
        width = -(-width // sw)
    return width


@dataclass(frozen=True)
class QualityConfig:
    cb_table: tuple = CB_TABLE
    blstm_hidden: int = 256        # per direction; concatenated output is 512
    dense_hidden: int = 128
    scatter_j: int = sig.SCATTER_J
    scatter_q: int = sig.SCATTER_Q
    dtype: str = "float64"

    def to_dict(self):
        d = asdict(self)
        d["cb_table"] = [[c, k, list(s)] for c, k, s in self.cb_table]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cb_table"] = tuple((c, k, (s[0], s[1])) for c, k, s in d["cb_table"])
        return cls(**d)


@dataclass
class MosEstimate:
    frame_scores: np.ndarray
    utterance_score: float

    def __post_init__(self):
        self.frame_scores = np.asarray(self.frame_scores, dtype=np.float64)
        mean = float(np.mean(self.frame_scores))
        if abs(mean - self.utterance_score) > 1e-9:
            raise InvalidInputError("utterance_score must be the mean of frame_scores")


class ConstantPredictor:
    """Fixed-output stand-in used for wiring and reduction tests."""

    def __init__(self, value: float):
        self.value = float(value)

    def predict_mos(self, w: Waveform) -> MosEstimate:
        t = sig.frame_count(len(w))
        return MosEstimate(frame_scores=np.full(t, self.value), utterance_score=self.value)


class _ConvBlock:
    """Nine conv+ReLU layers on a (1, 1, T, W) input; time axis preserved."""

    def __init__(self, table, rng, dtype):
        self.layers = []
        in_ch = 1
        for ch, k, stride in table:
            self.layers.append(nn.Conv2d(in_ch, ch, (k, k), stride=stride, rng=rng, dtype=dtype))
            in_ch = ch
        self.out_channels = in_ch

    def forward(self, x):
        tape = []
        for conv in self.layers:
            x, c_conv = conv.forward(x)
            x, c_act = nn.relu(x)
            tape.append((c_conv, c_act))
        return x, tape

    def backward(self, tape, g):
        for conv, (c_conv, c_act) in zip(reversed(self.layers), reversed(tape)):
            g = nn.relu_backward(c_act, g)
            g = conv.backward(c_conv, g)
        return g

    def named_layers(self, prefix):
        return [(f"{prefix}{i}.conv", c) for i, c in enumerate(self.layers)]


def _resample_rows(x, t_out):
    """Linear interpolation of (T_in, K) rows onto t_out uniformly spaced rows."""
    t_in = x.shape[0]
    if t_in == t_out:
        return x.copy(), (t_in, None, None, None)
    pos = np.linspace(0.0, t_in - 1.0, t_out)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, t_in - 1)
    frac = (pos - lo)[:, None]
    return x[lo] * (1.0 - frac) + x[hi] * frac, (t_in, lo, hi, frac)


def _resample_rows_vjp(cache, g):
    t_in, lo, hi, frac = cache
    if lo is None:
        return g.copy()
    out = np.zeros((t_in, g.shape[1]), dtype=g.dtype)
    np.add.at(out, lo, g * (1.0 - frac))
    np.add.at(out, hi, g * frac)
    return out


class QualityPredictor:
    kind = "quality"

    def __init__(self, config: QualityConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        self.cb1 = _ConvBlock(config.cb_table, rng, dt)
        self.cb2 = _ConvBlock(config.cb_table, rng, dt)
        k = config.scatter_j * config.scatter_q
        self._cb1_flat = self.cb1.out_channels * reduced_width(k, config.cb_table)
        self._cb2_flat = self.cb2.out_channels * reduced_width(sig.WINDOW, config.cb_table)
        self.proj1 = nn.Dense(self._cb1_flat, PATH_WIDTH, rng=rng, dtype=dt)
        self.proj2 = nn.Dense(self._cb2_flat, PATH_WIDTH, rng=rng, dtype=dt)
        self.blstm = nn.BiLSTM(FUSED_WIDTH, config.blstm_hidden, rng=rng, dtype=dt)
        self.dense1 = nn.Dense(2 * config.blstm_hidden, config.dense_hidden, rng=rng, dtype=dt)
        # head bias starts mid-scale so early training is not spent climbing to 1..5
        self.dense2 = nn.Dense(config.dense_hidden, 1, rng=rng, dtype=dt, b_init=3.0)

    def named_layers(self):
        out = self.cb1.named_layers("cb1.") + self.cb2.named_layers("cb2.")
        out += [("proj1", self.proj1), ("proj2", self.proj2), ("blstm", self.blstm),
                ("dense1", self.dense1), ("dense2", self.dense2)]
        return out

    def params(self):
        return nn.collect_params(self.named_layers())

    def grads(self):
        return nn.collect_grads(self.named_layers())

    def zero_grads(self):
        for _, layer in self.named_layers():
            layer.zero_grads()

    def param_count(self):
        return int(sum(v.size for v in self.params().values()))

    def load_params(self, params):
        own = self.params()
        if set(own) != set(params):
            raise InvalidInputError("parameter name mismatch for quality checkpoint")
        for name, arr in params.items():
            own[name][...] = arr

    # ------------------------------------------------------------------

    def forward_features(self, scatter_rows, frames):
        """Score from prepared features: (T, K) scattering rows, (T, 512) frames."""
        dt = np.dtype(self.config.dtype)
        t = frames.shape[0]
        x1 = np.asarray(scatter_rows, dtype=dt)[None, None]
        x2 = np.asarray(frames, dtype=dt)[None, None]
        h1, tape1 = self.cb1.forward(x1)
        h2, tape2 = self.cb2.forward(x2)
        f1 = h1[0].transpose(1, 0, 2).reshape(t, self._cb1_flat)
        f2 = h2[0].transpose(1, 0, 2).reshape(t, self._cb2_flat)
        p1, c_p1 = self.proj1.forward(f1)
        p2, c_p2 = self.proj2.forward(f2)
        fused = np.concatenate([p1, p2], axis=1)   # (T, 896)
        hb, c_b = self.blstm.forward(fused)
        d1, c_d1 = self.dense1.forward(hb)
        d1r, c_r = nn.relu(d1)
        scores, c_d2 = self.dense2.forward(d1r)
        cache = (tape1, tape2, h1.shape, h2.shape, c_p1, c_p2, c_b, c_d1, c_r, c_d2, t)
        return scores[:, 0], cache

    def backward_features(self, cache, g_scores):
        """Backprop to the two feature inputs; accumulates parameter grads."""
        tape1, tape2, s1, s2, c_p1, c_p2, c_b, c_d1, c_r, c_d2, t = cache
        g = self.dense2.backward(c_d2, np.asarray(g_scores)[:, None])
        g = nn.relu_backward(c_r, g)
        g = self.dense1.backward(c_d1, g)
        g = self.blstm.backward(c_b, g)
        g1 = self.proj1.backward(c_p1, g[:, :PATH_WIDTH])
        g2 = self.proj2.backward(c_p2, g[:, PATH_WIDTH:])
        gh1 = g1.reshape(t, s1[1], s1[3]).transpose(1, 0, 2)[None]
        gh2 = g2.reshape(t, s2[1], s2[3]).transpose(1, 0, 2)[None]
        gx1 = self.cb1.backward(tape1, gh1)[0, 0]
        gx2 = self.cb2.backward(tape2, gh2)[0, 0]
        return gx1, gx2

    def prepare_features(self, w: Waveform):
        """Scattering rows resampled onto the frame grid, plus windowed frames."""
        t = sig.frame_count(len(w))
        coeffs = sig.scattering(w, self.config.scatter_j, self.config.scatter_q).coeffs
        rows, rs_cache = _resample_rows(coeffs, t)
        frames = sig.frame_waveform(w).frames
        return rows, frames, rs_cache

    def predict_mos(self, w: Waveform) -> MosEstimate:
        """Quality estimate for one waveform (deterministic in inference)."""
        rows, frames, _ = self.prepare_features(w)
        scores, _ = self.forward_features(rows, frames)
        scores = np.asarray(scores, dtype=np.float64)
        return MosEstimate(frame_scores=scores, utterance_score=float(scores.mean()))

    def score_with_cache(self, w: Waveform):
        rows, frames, rs_cache = self.prepare_features(w)
        scores, cache = self.forward_features(rows, frames)
        return scores, (cache, rs_cache, w)

    def backward_to_waveform(self, full_cache, g_scores):
        """Gradient of the score sequence w.r.t. the input samples."""
        cache, rs_cache, w = full_cache
        g_rows, g_frames = self.backward_features(cache, g_scores)
        g_coeffs = _resample_rows_vjp(rs_cache, np.asarray(g_rows, dtype=np.float64))
        g_wave = sig.scattering_vjp(w, g_coeffs, self.config.scatter_j, self.config.scatter_q)
        g_wave += sig.frame_waveform_vjp(w, np.asarray(g_frames, dtype=np.float64))
        return g_wave


def predict_mos(w: Waveform, net) -> MosEstimate:
    """Module-level entry point; works with any predictor object."""
    if len(w) < sig.WINDOW:
        raise InvalidInputError("waveform shorter than one analysis window")
    return net.predict_mos(w)
