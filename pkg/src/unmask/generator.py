"""Attention-filtered enhancement network.

Maps a (T, 257) log-power spectrum plus a 4-dim one-hot target-condition
code to a same-shape spectrum.  Two paths: an encoder/bottleneck/decoder
trunk produces a multi-channel draft, a parallel attention stack on the raw
input produces a sigmoid filter in (0, 1); the draft is multiplied
element-wise by the filter and reduced to one channel by a final
convolution.  The per-layer channel table is configuration data, not code.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .errors import InvalidInputError
from .signal import N_BINS

CONDITIONS = ("clean", "n95", "cotton", "plastic")
N_CONDITIONS = 4


def _check_lps(y):
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] != N_BINS:
        raise InvalidInputError(f"expected a (T, {N_BINS}) lps matrix, got {y.shape}")
    return y


@dataclass(frozen=True)
class AttributeVector:
    """One-hot target-condition code; index order follows CONDITIONS."""

    condition: str

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise InvalidInputError(f"unknown condition {self.condition!r}")

    @property
    def code(self):
        v = np.zeros(N_CONDITIONS)
        v[CONDITIONS.index(self.condition)] = 1.0
        return v


def validate_attribute(code):
    code = np.asarray(code, dtype=np.float64)
    if code.shape != (N_CONDITIONS,):
        raise InvalidInputError(f"attribute must be length {N_CONDITIONS}")
    if not (np.sum(code == 1.0) == 1 and np.sum(code == 0.0) == N_CONDITIONS - 1):
        raise InvalidInputError("attribute must be one-hot")
    return code


@dataclass(frozen=True)
class GeneratorConfig:
    """Channel/kernel/stride table.

    The default widths are sized for single-core desk runs; the ``large``
    preset carries the wider table for real hardware.
    """

    enc_channels: tuple = (8, 16, 32)
    enc_kernel: int = 5
    bottleneck_blocks: int = 4
    bottleneck_kernel: int = 3
    dec_channels: tuple = (16, 8)
    dec_kernel: int = 5
    attn_channels: tuple = (16, 16, 1)
    attn_kernel: int = 3
    out_kernel: int = 3
    use_attention: bool = True
    dtype: str = "float64"

    @classmethod
    def large(cls, **kw):
        return cls(enc_channels=(32, 64, 128), dec_channels=(64, 32), **kw)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("enc_channels", "dec_channels", "attn_channels"):
            d[key] = tuple(d[key])
        return cls(**d)


class GeneratorNet:
    """Parameter container plus explicit forward/backward graph."""

    kind = "generator"

    def __init__(self, config: GeneratorConfig, seed: int):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        dt = np.dtype(config.dtype)
        c1, c2, c3 = config.enc_channels
        k = config.enc_kernel
        self.enc = []
        in_ch = 1 + N_CONDITIONS
        for ch, stride in zip((c1, c2, c3), ((1, 1), (2, 2), (2, 2))):
            conv = nn.Conv2d(in_ch, 2 * ch, (k, k), stride=stride, rng=rng, dtype=dt)
            norm = nn.InstanceNorm2d(2 * ch, dtype=dt)
            self.enc.append((conv, norm))
            in_ch = ch
        kb = config.bottleneck_kernel
        self.bottleneck = []
        for i in range(config.bottleneck_blocks):
            cin = c3 + (N_CONDITIONS if i == 0 else 0)
            conv = nn.Conv2d(cin, 2 * c3, (kb, kb), rng=rng, dtype=dt)
            norm = nn.ConditionalInstanceNorm2d(2 * c3, N_CONDITIONS, dtype=dt)
            self.bottleneck.append((conv, norm))
        d1, d2 = config.dec_channels
        kd = config.dec_kernel
        self.dec = []
        in_ch = c3
        for ch in (d1, d2):
            conv = nn.ConvTranspose2d(in_ch, 2 * ch, (kd, kd), stride=(2, 2),
                                      output_padding=(1, 1), rng=rng, dtype=dt)
            norm = nn.ConditionalInstanceNorm2d(2 * ch, N_CONDITIONS, dtype=dt)
            self.dec.append((conv, norm))
            in_ch = ch
        self.attn = []
        if config.use_attention:
            ka = config.attn_kernel
            in_ch = 1
            for ch in config.attn_channels:
                self.attn.append(nn.Conv2d(in_ch, ch, (ka, ka), rng=rng, dtype=dt))
                in_ch = ch
        self.out_conv = nn.Conv2d(d2, 1, (config.out_kernel, config.out_kernel),
                                  rng=rng, dtype=dt, w_scale=0.5)

    def named_layers(self):
        out = []
        for i, (conv, norm) in enumerate(self.enc):
            out += [(f"enc{i}.conv", conv), (f"enc{i}.norm", norm)]
        for i, (conv, norm) in enumerate(self.bottleneck):
            out += [(f"res{i}.conv", conv), (f"res{i}.norm", norm)]
        for i, (conv, norm) in enumerate(self.dec):
            out += [(f"dec{i}.conv", conv), (f"dec{i}.norm", norm)]
        for i, conv in enumerate(self.attn):
            out.append((f"attn{i}.conv", conv))
        out.append(("out.conv", self.out_conv))
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
            raise InvalidInputError("parameter name mismatch for generator checkpoint")
        for name, arr in params.items():
            own[name][...] = arr

    # forward / backward -------------------------------------------------

    def _attr_maps(self, t_batch, n, h, w, dt):
        t = np.asarray(t_batch, dtype=dt)
        return np.broadcast_to(t[:, :, None, None], (n, N_CONDITIONS, h, w)).astype(dt, copy=True)

    def forward(self, y, t, attn_mode="normal"):
        """Run a (N, T, F) batch with per-item one-hot codes (N, 4).

        ``attn_mode`` is "normal", or "ones" to force the filter to 1,
        which reduces the output to the plain trunk-plus-output-conv path.
        """
        dt = np.dtype(self.config.dtype)
        y = np.asarray(y, dtype=dt)
        if y.ndim == 2:
            y = y[None]
        n, h, w = y.shape
        x = y[:, None, :, :]
        tape = []
        x_in = np.concatenate([x, self._attr_maps(t, n, h, w, dt)], axis=1)
        cur = x_in
        sizes = [(h, w)]
        for conv, norm in self.enc:
            z, c_conv = conv.forward(cur)
            z, c_norm = norm.forward(z)
            cur, c_glu = nn.glu(z)
            tape.append((c_conv, c_norm, c_glu))
            sizes.append(cur.shape[2:])
        code = np.asarray(t, dtype=dt)
        bott_in_maps = self._attr_maps(t, n, cur.shape[2], cur.shape[3], dt)
        res_tape = []
        for i, (conv, norm) in enumerate(self.bottleneck):
            block_in = np.concatenate([cur, bott_in_maps], axis=1) if i == 0 else cur
            z, c_conv = conv.forward(block_in)
            z, c_norm = norm.forward(z, code)
            gated, c_glu = nn.glu(z)
            res_tape.append((c_conv, c_norm, c_glu))
            cur = cur + gated
        dec_tape = []
        targets = [sizes[2], sizes[1]]
        for (conv, norm), tgt in zip(self.dec, targets):
            z, c_conv = conv.forward(cur)
            crop = z.shape[2:]
            z = z[:, :, : tgt[0], : tgt[1]]
            z, c_norm = norm.forward(z, code)
            cur, c_glu = nn.glu(z)
            dec_tape.append((c_conv, crop, c_norm, c_glu))
        draft = cur  # (N, d2, T, F)

        attn_tape = []
        if self.config.use_attention and attn_mode == "normal":
            a = x
            for i, conv in enumerate(self.attn):
                a, c_conv = conv.forward(a)
                if i < len(self.attn) - 1:
                    a, c_act = nn.leaky_relu(a)
                else:
                    a, c_act = nn.sigmoid(a)
                attn_tape.append((c_conv, c_act))
            filt = a  # (N, 1, T, F)
        else:
            filt = None

        filtered = draft * filt if filt is not None else draft
        out, c_out = self.out_conv.forward(filtered)
        cache = (tape, res_tape, dec_tape, attn_tape, draft, filt, c_out, y.shape)
        return out[:, 0], cache

    def attention_filter(self, y):
        """The (T, F) filter in (0, 1) produced by the attention path."""
        if not self.config.use_attention:
            raise InvalidInputError("this generator was built without an attention path")
        dt = np.dtype(self.config.dtype)
        y = np.asarray(y, dtype=dt)
        squeeze = y.ndim == 2
        if squeeze:
            y = y[None]
        a = y[:, None, :, :]
        for i, conv in enumerate(self.attn):
            a, _ = conv.forward(a)
            a = nn.leaky_relu(a)[0] if i < len(self.attn) - 1 else nn.sigmoid(a)[0]
        return a[0, 0] if squeeze else a[:, 0]

    def backward(self, cache, g_out):
        """Accumulate parameter grads; returns gradient w.r.t. the input lps."""
        tape, res_tape, dec_tape, attn_tape, draft, filt, c_out, y_shape = cache
        if g_out.ndim == 2:
            g_out = g_out[None]
        g = self.out_conv.backward(c_out, g_out[:, None])
        if filt is not None:
            g_draft = g * filt
            g_filt = (g * draft).sum(axis=1, keepdims=True)
        else:
            g_draft = g
            g_filt = None

        g = g_draft
        for (conv, norm), (c_conv, crop, c_norm, c_glu) in zip(reversed(self.dec),
                                                               reversed(dec_tape)):
            g = nn.glu_backward(c_glu, g)
            g = norm.backward(c_norm, g)
            full = np.zeros((g.shape[0], g.shape[1], crop[0], crop[1]), dtype=g.dtype)
            full[:, :, : g.shape[2], : g.shape[3]] = g
            g = conv.backward(c_conv, full)

        for i, ((conv, norm), (c_conv, c_norm, c_glu)) in enumerate(
                zip(reversed(self.bottleneck), reversed(res_tape))):
            gated_g = nn.glu_backward(c_glu, g)
            gated_g = norm.backward(c_norm, gated_g)
            gated_g = conv.backward(c_conv, gated_g)
            if i == len(self.bottleneck) - 1:  # first block: drop attr channels
                g = g + gated_g[:, : g.shape[1]]
            else:
                g = g + gated_g

        for (conv, norm), (c_conv, c_norm, c_glu) in zip(reversed(self.enc), reversed(tape)):
            g = nn.glu_backward(c_glu, g)
            g = norm.backward(c_norm, g)
            g = conv.backward(c_conv, g)
        g_y = g[:, 0]  # drop attribute channels of the encoder input

        if g_filt is not None:
            ga = g_filt
            for conv, (c_conv, c_act) in zip(reversed(self.attn), reversed(attn_tape)):
                if conv is self.attn[-1]:
                    ga = nn.sigmoid_backward(c_act, ga)
                else:
                    ga = nn.leaky_relu_backward(c_act, ga)
                ga = conv.backward(c_conv, ga)
            g_y = g_y + ga[:, 0]
        return g_y


def init_generator(seed, config: GeneratorConfig | None = None) -> GeneratorNet:
    """Deterministic construction for a fixed seed."""
    return GeneratorNet(config or GeneratorConfig(), seed)


def generate(y, t, net: GeneratorNet, attn_mode="normal"):
    """Single-utterance forward: (T, 257) lps + one-hot code -> (T, 257)."""
    y = _check_lps(y)
    code = validate_attribute(t.code if isinstance(t, AttributeVector) else t)
    out, _ = net.forward(y[None], code[None], attn_mode=attn_mode)
    return out[0]


def attention(y, net: GeneratorNet):
    """Attention filter for a (T, 257) lps matrix; entries lie in (0, 1)."""
    return net.attention_filter(_check_lps(y))
