"""Minimal layer library with hand-written backward passes.

Layers hold parameters and accumulated gradients; ``forward`` returns
``(output, cache)`` and ``backward(cache, grad_out)`` returns the input
gradient while adding parameter gradients in place.  The functional cache
lets one parameter set appear at several points of a computation graph
(the enhancer is applied up to three times per training step).

Convolution is im2col + BLAS matmul; the im2col/col2im inner loops live in
:mod:`unmask.kernels`.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def _rng_normal(rng, shape, std, dtype):
    return (rng.standard_normal(shape) * std).astype(dtype)


class Layer:
    """Base: parameter/gradient registry keyed by attribute name."""

    param_names: tuple = ()

    def params(self):
        return {k: getattr(self, k) for k in self.param_names}

    def grads(self):
        return {k: getattr(self, "g_" + k) for k in self.param_names}

    def zero_grads(self):
        for k in self.param_names:
            getattr(self, "g_" + k)[...] = 0.0


def _same_pad(size, k, s):
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return total // 2, total - total // 2


class Conv2d(Layer):
    """2-D convolution over (N, C, H, W) with 'same' or explicit padding."""

    param_names = ("w", "b")

    def __init__(self, c_in, c_out, kernel, stride=(1, 1), padding="same", rng=None,
                 dtype=np.float64, w_scale=1.0):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.kh, self.kw = kh, kw
        self.sh, self.sw = stride
        self.padding = padding
        self.c_in, self.c_out = c_in, c_out
        std = w_scale * np.sqrt(2.0 / (c_in * kh * kw))
        self.w = _rng_normal(rng, (c_out, c_in * kh * kw), std, dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.g_w = np.zeros_like(self.w)
        self.g_b = np.zeros_like(self.b)

    def _pads(self, h, w):
        if self.padding == "same":
            return _same_pad(h, self.kh, self.sh), _same_pad(w, self.kw, self.sw)
        p = self.padding
        return (p, p), (p, p)

    def forward(self, x):
        n, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        (pt, pb), (pl, pr) = self._pads(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        cols = kernels.im2col(xp, self.kh, self.kw, self.sh, self.sw)
        y = np.matmul(self.w, cols) + self.b[:, None]
        hp, wp = h + pt + pb, w + pl + pr
        ho = (hp - self.kh) // self.sh + 1
        wo = (wp - self.kw) // self.sw + 1
        cache = (x.shape, (pt, pb, pl, pr), cols)
        return y.reshape(n, self.c_out, ho, wo), cache

    def backward(self, cache, gy):
        (n, c, h, w), (pt, pb, pl, pr), cols = cache
        gy_flat = np.ascontiguousarray(gy.reshape(n, self.c_out, -1))
        for i in range(n):  # per-item GEMM avoids tensordot's transposed copies
            self.g_w += gy_flat[i] @ cols[i].T
        self.g_b += gy_flat.sum(axis=(0, 2))
        gcols = np.matmul(np.ascontiguousarray(self.w.T), gy_flat)
        gxp = kernels.col2im(gcols, n, c, h + pt + pb, w + pl + pr,
                             self.kh, self.kw, self.sh, self.sw)
        return gxp[:, :, pt : pt + h, pl : pl + w]


class ConvTranspose2d(Layer):
    """Transposed 2-D convolution (stride-s upsampling), per-axis output padding."""

    param_names = ("w", "b")

    def __init__(self, c_in, c_out, kernel, stride=(2, 2), output_padding=(1, 0),
                 rng=None, dtype=np.float64, w_scale=1.0):
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        self.kh, self.kw = kh, kw
        self.sh, self.sw = stride
        self.ph, self.pw = (kh - 1) // 2, (kw - 1) // 2
        self.oph, self.opw = output_padding
        self.c_in, self.c_out = c_in, c_out
        std = w_scale * np.sqrt(2.0 / (c_in * kh * kw))
        self.w = _rng_normal(rng, (c_in, c_out * kh * kw), std, dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self.g_w = np.zeros_like(self.w)
        self.g_b = np.zeros_like(self.b)

    def out_size(self, hi, wi):
        ho = (hi - 1) * self.sh - 2 * self.ph + self.kh + self.oph
        wo = (wi - 1) * self.sw - 2 * self.pw + self.kw + self.opw
        return ho, wo

    def forward(self, x):
        n, c, hi, wi = x.shape
        if c != self.c_in:
            raise ValueError(f"expected {self.c_in} input channels, got {c}")
        hp = (hi - 1) * self.sh + self.kh
        wp = (wi - 1) * self.sw + self.kw
        x_flat = x.reshape(n, c, -1)
        # contiguous transpose keeps matmul on the BLAS fast path
        cols = np.matmul(np.ascontiguousarray(self.w.T), x_flat)
        yp = kernels.col2im(cols, n, self.c_out, hp, wp,
                            self.kh, self.kw, self.sh, self.sw)
        ho, wo = self.out_size(hi, wi)
        y = yp[:, :, self.ph : self.ph + ho, self.pw : self.pw + wo]
        y = y + self.b[None, :, None, None]
        return y, (x, (hi, wi), (hp, wp))

    def backward(self, cache, gy):
        x, (hi, wi), (hp, wp) = cache
        n = x.shape[0]
        ho, wo = self.out_size(hi, wi)
        gyp = np.zeros((n, self.c_out, hp, wp), dtype=gy.dtype)
        gyp[:, :, self.ph : self.ph + ho, self.pw : self.pw + wo] = gy
        gcols = kernels.im2col(gyp, self.kh, self.kw, self.sh, self.sw)
        x_flat = np.ascontiguousarray(x.reshape(n, self.c_in, -1))
        for i in range(n):
            self.g_w += x_flat[i] @ gcols[i].T
        self.g_b += gy.sum(axis=(0, 2, 3))
        gx = np.matmul(self.w, gcols)
        return gx.reshape(x.shape)


class InstanceNorm2d(Layer):
    """Per-sample, per-channel normalization over (H, W) with affine params."""

    param_names = ("gamma", "beta")

    def __init__(self, channels, dtype=np.float64, eps=1e-5):
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.g_gamma = np.zeros_like(self.gamma)
        self.g_beta = np.zeros_like(self.beta)

    def forward(self, x):
        n, c, h, w = x.shape
        mu = x.mean(axis=(2, 3), keepdims=True)
        xm = x - mu
        var = (np.einsum("nchw,nchw->nc", xm, xm) / (h * w)).reshape(n, c, 1, 1)
        sinv = 1.0 / np.sqrt(var + self.eps)
        xm *= sinv  # xm becomes xhat in place
        y = self.gamma[None, :, None, None] * xm + self.beta[None, :, None, None]
        return y, (xm, sinv)

    def backward(self, cache, gy):
        xhat, sinv = cache
        self.g_gamma += (gy * xhat).sum(axis=(0, 2, 3))
        self.g_beta += gy.sum(axis=(0, 2, 3))
        g = gy * self.gamma[None, :, None, None]
        m1 = g.mean(axis=(2, 3), keepdims=True)
        m2 = (g * xhat).mean(axis=(2, 3), keepdims=True)
        return sinv * (g - m1 - xhat * m2)


class ConditionalInstanceNorm2d(Layer):
    """Instance norm whose affine parameters are selected by a one-hot code.

    A constant channel concatenated before a convolution is cancelled by the
    following normalization (its contribution is a per-channel mean shift),
    so conditioning must enter through the post-normalization affine instead.
    """

    param_names = ("gamma", "beta")

    def __init__(self, channels, n_classes, dtype=np.float64, eps=1e-5):
        self.eps = eps
        self.gamma = np.ones((n_classes, channels), dtype=dtype)
        self.beta = np.zeros((n_classes, channels), dtype=dtype)
        self.g_gamma = np.zeros_like(self.gamma)
        self.g_beta = np.zeros_like(self.beta)

    def forward(self, x, code):
        n, c, h, w = x.shape
        mu = x.mean(axis=(2, 3), keepdims=True)
        xm = x - mu
        var = (np.einsum("nchw,nchw->nc", xm, xm) / (h * w)).reshape(n, c, 1, 1)
        sinv = 1.0 / np.sqrt(var + self.eps)
        xm *= sinv
        g = code @ self.gamma  # (N, C)
        b = code @ self.beta
        y = g[:, :, None, None] * xm + b[:, :, None, None]
        return y, (xm, sinv, code, g)

    def backward(self, cache, gy):
        xhat, sinv, code, g = cache
        per_gamma = np.einsum("nchw,nchw->nc", gy, xhat)
        per_beta = gy.sum(axis=(2, 3))
        self.g_gamma += code.T @ per_gamma
        self.g_beta += code.T @ per_beta
        gg = gy * g[:, :, None, None]
        m1 = gg.mean(axis=(2, 3), keepdims=True)
        m2 = (gg * xhat).mean(axis=(2, 3), keepdims=True)
        return sinv * (gg - m1 - xhat * m2)


class Dense(Layer):
    """Affine map on the last axis."""

    param_names = ("w", "b")

    def __init__(self, d_in, d_out, rng=None, dtype=np.float64, w_scale=1.0,
                 b_init=0.0):
        std = w_scale * np.sqrt(1.0 / d_in)
        self.w = _rng_normal(rng, (d_in, d_out), std, dtype)
        self.b = np.full(d_out, b_init, dtype=dtype)
        self.g_w = np.zeros_like(self.w)
        self.g_b = np.zeros_like(self.b)

    def forward(self, x):
        return x @ self.w + self.b, x

    def backward(self, cache, gy):
        x = cache
        self.g_w += x.reshape(-1, x.shape[-1]).T @ gy.reshape(-1, gy.shape[-1])
        self.g_b += gy.reshape(-1, gy.shape[-1]).sum(axis=0)
        return gy @ self.w.T


class LSTM(Layer):
    """Single-direction LSTM over a (T, D) sequence; returns (T, H)."""

    param_names = ("wx", "wh", "b")

    def __init__(self, d_in, hidden, rng=None, dtype=np.float64):
        k = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.wx = (rng.uniform(-k, k, (d_in, 4 * hidden))).astype(dtype)
        self.wh = (rng.uniform(-k, k, (hidden, 4 * hidden))).astype(dtype)
        self.b = np.zeros(4 * hidden, dtype=dtype)
        self.g_wx = np.zeros_like(self.wx)
        self.g_wh = np.zeros_like(self.wh)
        self.g_b = np.zeros_like(self.b)

    def forward(self, x, reverse=False):
        t_len = x.shape[0]
        hdim = self.hidden
        order = range(t_len - 1, -1, -1) if reverse else range(t_len)
        pre = x @ self.wx + self.b
        h = np.zeros(hdim, dtype=x.dtype)
        c = np.zeros(hdim, dtype=x.dtype)
        hs = np.zeros((t_len, hdim), dtype=x.dtype)
        gates = np.zeros((t_len, 4 * hdim), dtype=x.dtype)
        cs = np.zeros((t_len, hdim), dtype=x.dtype)
        hprev = np.zeros((t_len, hdim), dtype=x.dtype)
        cprev = np.zeros((t_len, hdim), dtype=x.dtype)
        for t in order:
            hprev[t] = h
            cprev[t] = c
            z = pre[t] + h @ self.wh
            i = _sigmoid(z[:hdim])
            f = _sigmoid(z[hdim : 2 * hdim])
            g = np.tanh(z[2 * hdim : 3 * hdim])
            o = _sigmoid(z[3 * hdim :])
            c = f * cprev[t] + i * g
            h = o * np.tanh(c)
            gates[t, :hdim] = i
            gates[t, hdim : 2 * hdim] = f
            gates[t, 2 * hdim : 3 * hdim] = g
            gates[t, 3 * hdim :] = o
            cs[t] = c
            hs[t] = h
        return hs, (x, gates, cs, hprev, cprev, reverse)

    def backward(self, cache, ghs):
        x, gates, cs, hprev, cprev, reverse = cache
        t_len, hdim = cs.shape
        order = range(t_len) if reverse else range(t_len - 1, -1, -1)
        gz_all = np.zeros((t_len, 4 * hdim), dtype=x.dtype)
        gh = np.zeros(hdim, dtype=x.dtype)
        gc = np.zeros(hdim, dtype=x.dtype)
        for t in order:
            i = gates[t, :hdim]
            f = gates[t, hdim : 2 * hdim]
            g = gates[t, 2 * hdim : 3 * hdim]
            o = gates[t, 3 * hdim :]
            tc = np.tanh(cs[t])
            gh = gh + ghs[t]
            gc = gc + gh * o * (1.0 - tc * tc)
            gz = np.empty(4 * hdim, dtype=x.dtype)
            gz[:hdim] = gc * g * i * (1.0 - i)
            gz[hdim : 2 * hdim] = gc * cprev[t] * f * (1.0 - f)
            gz[2 * hdim : 3 * hdim] = gc * i * (1.0 - g * g)
            gz[3 * hdim :] = gh * tc * o * (1.0 - o)
            gz_all[t] = gz
            gh = gz @ self.wh.T
            gc = gc * f
        self.g_wx += x.T @ gz_all
        self.g_b += gz_all.sum(axis=0)
        self.g_wh += hprev.T @ gz_all
        return gz_all @ self.wx.T


class BiLSTM(Layer):
    """Bidirectional LSTM; output is the (T, 2H) concat of both directions."""

    param_names = ()

    def __init__(self, d_in, hidden, rng=None, dtype=np.float64):
        self.fwd = LSTM(d_in, hidden, rng=rng, dtype=dtype)
        self.bwd = LSTM(d_in, hidden, rng=rng, dtype=dtype)
        self.hidden = hidden

    def params(self):
        out = {}
        out.update({"fwd." + k: v for k, v in self.fwd.params().items()})
        out.update({"bwd." + k: v for k, v in self.bwd.params().items()})
        return out

    def grads(self):
        out = {}
        out.update({"fwd." + k: v for k, v in self.fwd.grads().items()})
        out.update({"bwd." + k: v for k, v in self.bwd.grads().items()})
        return out

    def zero_grads(self):
        self.fwd.zero_grads()
        self.bwd.zero_grads()

    def forward(self, x):
        hf, cf = self.fwd.forward(x, reverse=False)
        hb, cb = self.bwd.forward(x, reverse=True)
        return np.concatenate([hf, hb], axis=1), (cf, cb)

    def backward(self, cache, gy):
        cf, cb = cache
        h = self.hidden
        gx = self.fwd.backward(cf, gy[:, :h])
        gx = gx + self.bwd.backward(cb, gy[:, h:])
        return gx


def _sigmoid(x):
    # branch-free stable form: s = 1/(1+exp(-|x|)) is the value for x >= 0
    # and 1-s the value for x < 0
    s = 1.0 / (1.0 + np.exp(-np.abs(x)))
    out = np.where(x >= 0, s, 1.0 - s)
    # keep the open interval (0, 1) even where the exp saturates in float
    fi = np.finfo(out.dtype)
    return np.clip(out, fi.tiny, 1.0 - fi.eps)


def sigmoid(x):
    y = _sigmoid(x)
    return y, y


def sigmoid_backward(cache, gy):
    y = cache
    return gy * y * (1.0 - y)


def glu(x):
    """Gated linear unit over the channel axis: first half gated by second."""
    c = x.shape[1] // 2
    a, b = x[:, :c], x[:, c:]
    sb = _sigmoid(b)
    return a * sb, (a, sb)


def glu_backward(cache, gy):
    a, sb = cache
    ga = gy * sb
    gb = gy * a * sb * (1.0 - sb)
    return np.concatenate([ga, gb], axis=1)


def leaky_relu(x, slope=0.2):
    mask = x >= 0
    return np.where(mask, x, slope * x), (mask, slope)


def leaky_relu_backward(cache, gy):
    mask, slope = cache
    return np.where(mask, gy, slope * gy)


def relu(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(cache, gy):
    return gy * cache


def softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Adam:
    """Adam over a flat name->array parameter dict, updating in place."""

    def __init__(self, params, lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.params = params
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= (self.lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)

    def state(self):
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state(self, state):
        self.t = int(state["t"])
        for k in self.m:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]


def collect_params(named_layers):
    """Flatten [(prefix, layer), ...] into a name->array dict."""
    out = {}
    for prefix, layer in named_layers:
        for k, v in layer.params().items():
            out[f"{prefix}.{k}"] = v
    return out


def collect_grads(named_layers):
    out = {}
    for prefix, layer in named_layers:
        for k, v in layer.grads().items():
            out[f"{prefix}.{k}"] = v
    return out
