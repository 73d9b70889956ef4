"""Audio <-> feature conversions.

All model-facing features derive from a fixed 16 kHz mono front end:
512-point analysis windows with an 80-sample hop giving 257 frequency bins,
a first-order wavelet modulus transform for the quality predictor, and the
matching waveform framing.  Every operation here is pure; the adjoint
(``*_vjp``) functions back-propagate through reconstruction and feature
extraction during joint training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft
import scipy.io.wavfile
import scipy.signal

from . import kernels
from .errors import InvalidInputError

SAMPLE_RATE = 16000
WINDOW = 512
HOP = 80
N_BINS = WINDOW // 2 + 1
LOG_EPS = 1e-10

SCATTER_J = 6
SCATTER_Q = 8
SCATTER_HOP = 2 ** SCATTER_J


@dataclass
class Waveform:
    """Mono waveform at 16 kHz; the unit every pipeline stage consumes."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInputError("waveform must be 1-D mono")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidInputError("waveform contains non-finite samples")
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidInputError(
                f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}; resample on ingestion"
            )

    def __len__(self):
        return len(self.samples)


@dataclass
class SpectralFrames:
    """Log-power spectrum plus retained phase for one utterance."""

    lps: np.ndarray
    phase: np.ndarray
    hop: int = HOP
    window: int = WINDOW

    def __post_init__(self):
        self.lps = np.asarray(self.lps, dtype=np.float64)
        self.phase = np.asarray(self.phase, dtype=np.float64)
        if self.lps.shape != self.phase.shape:
            raise InvalidInputError("lps and phase shapes differ")
        if self.lps.ndim != 2 or self.lps.shape[1] != N_BINS:
            raise InvalidInputError(f"expected T x {N_BINS} frames, got {self.lps.shape}")
        if not np.all(np.isfinite(self.lps)):
            raise InvalidInputError("lps contains non-finite values")

    @property
    def frames(self):
        return self.lps.shape[0]


@dataclass
class ScatterCoeffs:
    """First-order wavelet modulus coefficients, subsampled in time."""

    coeffs: np.ndarray
    scale_count: int = SCATTER_J
    wavelets_per_octave: int = SCATTER_Q
    hop: int = SCATTER_HOP
    log_compressed: bool = False


@dataclass
class FrameMatrix:
    """Hann-windowed waveform frames; row count matches the LPS frame count."""

    frames: np.ndarray


def _hann():
    return scipy.signal.get_window("hann", WINDOW, fftbins=True)


@lru_cache(maxsize=8)
def _ola_norm(n_frames, out_len):
    # edge samples with near-zero window overlap are zeroed instead of
    # divided; interior overlap sums to ~2.4 at 512/80 and is untouched
    win2 = _hann().astype(np.float64) ** 2
    den = kernels.overlap_add(np.tile(win2, (n_frames, 1)), HOP, out_len)
    ok = den > 1e-2
    return np.where(ok, den, 1.0), ok


def frame_count(n_samples):
    """Number of full analysis windows: floor((n - 512)/80) + 1, no padding."""
    if n_samples < WINDOW:
        raise InvalidInputError(f"signal shorter than one {WINDOW}-sample window")
    return (n_samples - WINDOW) // HOP + 1


def _segments(samples):
    t = frame_count(len(samples))
    view = np.lib.stride_tricks.sliding_window_view(samples, WINDOW)[:: HOP]
    return view[:t]


def stft(w: Waveform) -> SpectralFrames:
    """Short-time transform to log power spectrum with retained phase.

    The log is natural and taken of ``|S|^2 + 1e-10``; the epsilon keeps
    silence finite at ``ln(1e-10)``.
    """
    seg = _segments(w.samples) * _hann()[None, :]
    spec = np.fft.rfft(seg, axis=1)
    lps = np.log(np.abs(spec) ** 2 + LOG_EPS)
    phase = np.angle(spec)
    return SpectralFrames(lps=lps, phase=phase)


def istft(s: SpectralFrames) -> Waveform:
    """Weighted overlap-add reconstruction using the retained phase.

    Magnitudes are recovered as ``exp(lps / 2)``; for an unmodified
    round trip this differs from the analysis magnitude only through the
    log epsilon.
    """
    mag = np.exp(s.lps / 2.0)
    spec = mag * np.exp(1j * s.phase)
    win = _hann()
    frames = np.fft.irfft(spec, n=WINDOW, axis=1) * win[None, :]
    t = s.frames
    out_len = (t - 1) * HOP + WINDOW
    num = kernels.overlap_add(np.ascontiguousarray(frames), HOP, out_len)
    den, ok = _ola_norm(t, out_len)
    return Waveform(np.where(ok, num / den, 0.0))


def istft_vjp(s: SpectralFrames, g_wave: np.ndarray) -> np.ndarray:
    """Gradient of :func:`istft` output w.r.t. the input lps matrix."""
    t = s.frames
    out_len = (t - 1) * HOP + WINDOW
    if g_wave.shape != (out_len,):
        raise InvalidInputError("gradient length does not match istft output")
    den, ok = _ola_norm(t, out_len)
    g_num = np.where(ok, g_wave / den, 0.0)
    win = _hann()
    g_frames = np.empty((t, WINDOW), dtype=np.float64)
    for i in range(t):
        g_frames[i] = g_num[i * HOP : i * HOP + WINDOW]
    g_frames *= win[None, :]
    spec_grad = np.fft.rfft(g_frames, axis=1)
    scale = np.full(N_BINS, 2.0 / WINDOW)
    scale[0] = scale[-1] = 1.0 / WINDOW
    spec_grad *= scale[None, :]
    mag = np.exp(s.lps / 2.0)
    g_mag = np.real(spec_grad * np.exp(-1j * s.phase))
    return g_mag * mag / 2.0


@lru_cache(maxsize=8)
def _scatter_filters(nfft, j, q):
    """Analytic Gabor bank (geometric centers, constant-Q) plus Gaussian low-pass."""
    freqs = np.fft.fftfreq(nfft)
    xi_max = 0.4
    k = j * q
    centers = xi_max * 2.0 ** (-np.arange(k) / q)
    rel_bw = (2.0 ** (1.0 / q) - 1.0) * 0.85
    sigmas = centers * rel_bw
    psi = np.exp(-((freqs[None, :] - centers[:, None]) ** 2) / (2.0 * sigmas[:, None] ** 2))
    sigma_phi = xi_max / 2.0 ** j
    phi = np.exp(-(freqs ** 2) / (2.0 * sigma_phi ** 2))
    return psi, phi, centers


def scatter_center_frequencies(j=SCATTER_J, q=SCATTER_Q):
    """Center frequencies in Hz of the wavelet channels, highest first."""
    xi_max = 0.4
    return xi_max * 2.0 ** (-np.arange(j * q) / q) * SAMPLE_RATE


def _scatter_nfft(n):
    return scipy.fft.next_fast_len(n + 4 * SCATTER_HOP * 8)


def scattering(w: Waveform, j=SCATTER_J, q=SCATTER_Q) -> ScatterCoeffs:
    """First-order time scattering: wavelet modulus, low-passed, subsampled.

    Returns a (T', J*Q) matrix with T' = ceil(len / 2^J); channel order is
    highest center frequency first.  Coefficients are non-negative and
    positively homogeneous in the input.
    """
    n = len(w)
    if n < WINDOW:
        raise InvalidInputError("signal shorter than the low-pass support")
    nfft = _scatter_nfft(n)
    psi, phi, _ = _scatter_filters(nfft, j, q)
    spec = np.fft.fft(w.samples, nfft)
    u = np.fft.ifft(spec[None, :] * psi, axis=1)
    a = np.abs(u)
    s = np.fft.ifft(np.fft.fft(a, axis=1) * phi[None, :], axis=1).real
    idx = np.arange(0, n, 2 ** j)
    coeffs = np.maximum(s[:, idx], 0.0).T
    return ScatterCoeffs(coeffs=coeffs, scale_count=j, wavelets_per_octave=q, hop=2 ** j)


def scattering_vjp(w: Waveform, g_coeffs: np.ndarray, j=SCATTER_J, q=SCATTER_Q) -> np.ndarray:
    """Gradient of :func:`scattering` coefficients w.r.t. the waveform."""
    n = len(w)
    nfft = _scatter_nfft(n)
    psi, phi, _ = _scatter_filters(nfft, j, q)
    spec = np.fft.fft(w.samples, nfft)
    u = np.fft.ifft(spec[None, :] * psi, axis=1)
    a = np.abs(u)
    idx = np.arange(0, n, 2 ** j)
    g_sub = np.zeros((psi.shape[0], nfft), dtype=np.float64)
    g_sub[:, idx] = g_coeffs.T
    g_a = np.fft.ifft(np.fft.fft(g_sub, axis=1) * np.conj(phi)[None, :], axis=1).real
    unit = np.where(a > 1e-30, u / np.maximum(a, 1e-30), 0.0)
    g_u = g_a * unit
    # adjoints of the fft/ifft pair cancel their 1/nfft factors; the pad
    # adjoint truncates back to the first n samples
    g_spec = (np.fft.fft(g_u, axis=1) * np.conj(psi)).sum(axis=0)
    return np.fft.ifft(g_spec)[:n].real


def frame_waveform(w: Waveform) -> FrameMatrix:
    """Hann-windowed frames at the analysis hop; row t covers [80t, 80t+512)."""
    seg = _segments(w.samples) * _hann()[None, :]
    return FrameMatrix(frames=seg)


def frame_waveform_vjp(w: Waveform, g_frames: np.ndarray) -> np.ndarray:
    """Gradient of :func:`frame_waveform` w.r.t. the waveform samples."""
    t = frame_count(len(w))
    if g_frames.shape != (t, WINDOW):
        raise InvalidInputError("gradient shape does not match frame matrix")
    g = np.ascontiguousarray(g_frames * _hann()[None, :])
    out = kernels.overlap_add(g, HOP, (t - 1) * HOP + WINDOW)
    full = np.zeros(len(w), dtype=np.float64)
    full[: len(out)] = out
    return full


def read_wav(path) -> Waveform:
    """Read 16-bit PCM mono WAV, resampling to 16 kHz when needed."""
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    else:
        x = data.astype(np.float64)
    if rate != SAMPLE_RATE:
        g = np.gcd(rate, SAMPLE_RATE)
        x = scipy.signal.resample_poly(x, SAMPLE_RATE // g, rate // g)
    return Waveform(samples=x)


def write_wav(path, w: Waveform):
    """Write 16-bit PCM mono WAV at 16 kHz."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    scipy.io.wavfile.write(path, SAMPLE_RATE, (clipped * 32767.0).astype(np.int16))
