"""Shared-trunk multitask critic.

A four-layer convolutional trunk feeds two heads: a 4-way condition
classifier and a real/fake discriminator.  The discriminator head yields a
per-frame logit sequence (frequency axis averaged out) whose sigmoid values
are averaged over frames into one realness scalar per utterance; classifier
logits are likewise frame-resolved and mean-pooled over time before the
softmax.

The trunk input carries a fixed frequency-coordinate channel next to the
spectrum: the heads pool over frequency, and without absolute position the
conditions' different roll-off edges would look alike to the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import nn
from .errors import InvalidInputError
from .generator import N_CONDITIONS

LEAK = 0.2


@dataclass(frozen=True)
class CriticConfig:
    # desk-sized default; `large` carries the wider table
    channels: tuple = (16, 16, 32, 32)
    kernel: int = 3
    strides: tuple = ((1, 1), (2, 2), (1, 1), (2, 2))
    head_kernel: int = 3
    dtype: str = "float64"

    @classmethod
    def large(cls, **kw):
        return cls(channels=(32, 32, 64, 64), **kw)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["strides"] = tuple(tuple(s) for s in d["strides"])
        return cls(**d)


@dataclass
class CriticOutput:
    class_logits: np.ndarray  # (T', 4) frame-resolved classifier logits
    realness: float           # mean over frames of per-frame sigmoid

    def __post_init__(self):
        if not 0.0 < self.realness < 1.0:
            raise InvalidInputError("realness must lie strictly in (0, 1)")


class CriticNet:
    kind = "critic"

    def __init__(self, config: CriticConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        k = config.kernel
        self.trunk = []
        in_ch = 2  # spectrum plus the frequency-coordinate channel
        for ch, stride in zip(config.channels, config.strides):
            self.trunk.append(nn.Conv2d(in_ch, ch, (k, k), stride=stride, rng=rng, dtype=dt))
            in_ch = ch
        hk = config.head_kernel
        self.cls_head = nn.Conv2d(in_ch, N_CONDITIONS, (hk, hk), rng=rng, dtype=dt, w_scale=0.5)
        self.disc_head = nn.Conv2d(in_ch, 1, (hk, hk), rng=rng, dtype=dt, w_scale=0.5)

    def named_layers(self):
        out = [(f"trunk{i}.conv", c) for i, c in enumerate(self.trunk)]
        out += [("cls.conv", self.cls_head), ("disc.conv", self.disc_head)]
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
            raise InvalidInputError("parameter name mismatch for critic checkpoint")
        for name, arr in params.items():
            own[name][...] = arr

    def forward(self, z):
        """(N, T, F) batch -> per-item frame logits, pooled logits, realness.

        Returns (cls_frames (N,T',4), cls_pooled (N,4), realness (N,)) plus
        the backward cache.
        """
        dt = np.dtype(self.config.dtype)
        z = np.asarray(z, dtype=dt)
        if z.ndim == 2:
            z = z[None]
        n, t, f = z.shape
        ramp = np.broadcast_to(np.linspace(-1.0, 1.0, f, dtype=dt), (n, 1, t, f))
        h = np.concatenate([z[:, None], ramp], axis=1)
        tape = []
        for conv in self.trunk:
            h, c_conv = conv.forward(h)
            h, c_act = nn.leaky_relu(h, LEAK)
            tape.append((c_conv, c_act))
        cls_map, c_cls = self.cls_head.forward(h)       # (N, 4, T', F')
        disc_map, c_disc = self.disc_head.forward(h)    # (N, 1, T', F')
        cls_frames = cls_map.mean(axis=3).transpose(0, 2, 1)      # (N, T', 4)
        cls_pooled = cls_frames.mean(axis=1)                      # (N, 4)
        frame_logits = disc_map.mean(axis=3)[:, 0]                # (N, T')
        frame_sig, c_sig = nn.sigmoid(frame_logits)
        realness = frame_sig.mean(axis=1)                         # (N,)
        cache = (tape, c_cls, c_disc, c_sig, cls_map.shape, disc_map.shape)
        return cls_frames, cls_pooled, realness, cache

    def backward(self, cache, g_cls_pooled=None, g_realness=None):
        """Backprop from pooled logits and/or realness down to the input."""
        tape, c_cls, c_disc, c_sig, cls_shape, disc_shape = cache
        n, _, tp, fp = cls_shape
        dt = self.cls_head.w.dtype
        gh = None
        if g_cls_pooled is not None:
            g_frames = np.broadcast_to(
                np.asarray(g_cls_pooled, dtype=dt)[:, None, :] / tp, (n, tp, N_CONDITIONS))
            g_map = np.broadcast_to(
                g_frames.transpose(0, 2, 1)[:, :, :, None] / fp, cls_shape).astype(dt)
            gh = self.cls_head.backward(c_cls, g_map)
        if g_realness is not None:
            g_sig = np.broadcast_to(
                np.asarray(g_realness, dtype=dt)[:, None] / tp, (n, tp)).astype(dt)
            g_logits = nn.sigmoid_backward(c_sig, g_sig)
            g_map = np.broadcast_to(
                g_logits[:, None, :, None] / disc_shape[3], disc_shape).astype(dt)
            gd = self.disc_head.backward(c_disc, g_map)
            gh = gd if gh is None else gh + gd
        g = gh
        for conv, (c_conv, c_act) in zip(reversed(self.trunk), reversed(tape)):
            g = nn.leaky_relu_backward(c_act, g)
            g = conv.backward(c_conv, g)
        return g[:, 0]


def _check_lps(z):
    from .generator import _check_lps as check

    return check(z)


def critic_forward(z, net: CriticNet) -> CriticOutput:
    """Single-utterance evaluation of a (T, 257) lps matrix."""
    cls_frames, _, realness, _ = net.forward(_check_lps(z)[None])
    return CriticOutput(class_logits=cls_frames[0], realness=float(realness[0]))


def classify_condition(z, net: CriticNet):
    """Softmax over time-pooled class logits: a length-4 simplex vector."""
    _, pooled, _, _ = net.forward(_check_lps(z)[None])
    return nn.softmax(pooled[0])
