"""Training objectives and their hand-computed input gradients.

The adversarial pair is implemented in its literal ratio form,
``L_D = -E[ln(d_real / d_fake)]`` and ``L_G = -E[ln d_fake]``, with
probabilities clamped to [1e-7, 1 - 1e-7] because the ratio form is
unbounded; the conventional ``-ln(1 - d_fake)`` discriminator variant is
available behind ``adv_mode="bce"`` for stability experiments.  Expectations
are minibatch means.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigurationError, InvalidInputError

P_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 2.0  # condition classification, critic side
    lambda2: float = 3.0  # cycle consistency
    lambda3: float = 2.0  # condition classification, generator side
    lambda4: float = 2.0  # identity mapping

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    adv_d: float = 0.0
    adv_g: float = 0.0
    cls_c: float = 0.0
    cls_g: float = 0.0
    cyc: float = 0.0
    idm: float = 0.0
    mos: float = 0.0
    total_cd: float = 0.0
    total_g: float = 0.0
    total_hl: float = 0.0

    def as_row(self):
        return {k: float(v) for k, v in asdict(self).items()}


def _clamp(p):
    return np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)


def adv_losses(d_real, d_fake, adv_mode="ratio"):
    """Discriminator and generator adversarial losses over batch arrays."""
    r = _clamp(d_real)
    f = _clamp(d_fake)
    if adv_mode == "ratio":
        loss_d = float(-np.mean(np.log(r / f)))
    elif adv_mode == "bce":
        loss_d = float(-np.mean(np.log(r)) - np.mean(np.log(1.0 - f)))
    else:
        raise ConfigurationError(f"unknown adv_mode {adv_mode!r}")
    loss_g = float(-np.mean(np.log(f)))
    return loss_d, loss_g


def adv_d_grads(d_real, d_fake, adv_mode="ratio"):
    """d loss_d / d (d_real, d_fake); zero where the clamp saturates."""
    r_raw = np.asarray(d_real, dtype=np.float64)
    f_raw = np.asarray(d_fake, dtype=np.float64)
    r, f = _clamp(r_raw), _clamp(f_raw)
    b = r.size
    in_r = (r_raw > P_CLAMP) & (r_raw < 1.0 - P_CLAMP)
    in_f = (f_raw > P_CLAMP) & (f_raw < 1.0 - P_CLAMP)
    g_r = np.where(in_r, -1.0 / (b * r), 0.0)
    if adv_mode == "ratio":
        g_f = np.where(in_f, 1.0 / (b * f), 0.0)
    else:
        g_f = np.where(in_f, 1.0 / (b * (1.0 - f)), 0.0)
    return g_r, g_f


def adv_g_grad(d_fake):
    f_raw = np.asarray(d_fake, dtype=np.float64)
    f = _clamp(f_raw)
    in_f = (f_raw > P_CLAMP) & (f_raw < 1.0 - P_CLAMP)
    return np.where(in_f, -1.0 / (f.size * f), 0.0)


def cls_loss(probabilities, labels):
    """Mean negative log probability of the labeled class."""
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    labels = np.atleast_1d(labels)
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-5):
        raise InvalidInputError("probabilities must lie on the simplex")
    picked = p[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, P_CLAMP))))


def cls_grad_wrt_logits(probabilities, labels):
    """Softmax cross-entropy shortcut: (p - onehot) / batch."""
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    g = p.copy()
    g[np.arange(len(np.atleast_1d(labels))), labels] -= 1.0
    return g / p.shape[0]


def l1_loss(a, b):
    """Mean absolute difference; used for both cycle and identity terms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def l1_grad(a, b):
    """d l1 / d a."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    return np.sign(a - b) / a.size


cycle_loss = l1_loss
identity_loss = l1_loss


def mos_loss(estimates, targets):
    """Mean absolute error between utterance scores and target ratings."""
    est = np.asarray([getattr(e, "utterance_score", e) for e in np.atleast_1d(estimates)],
                     dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1)
    if est.shape != tgt.shape:
        raise InvalidInputError("estimate/target batch lengths differ")
    return float(np.mean(np.abs(est - tgt)))


def mos_grad(estimates, targets):
    """d mos_loss / d utterance_score, per batch item."""
    est = np.asarray([getattr(e, "utterance_score", e) for e in np.atleast_1d(estimates)],
                     dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64).reshape(-1)
    return np.sign(est - tgt) / est.size


def compose(report: LossReport, weights: LossWeights | None = None,
            with_mos: bool = False) -> LossReport:
    """Fill the composite totals from the component fields, in place."""
    w = weights or LossWeights()
    for name in ("adv_d", "adv_g", "cls_c", "cls_g", "cyc", "idm"):
        v = getattr(report, name)
        if v is None or not np.isfinite(v):
            raise ConfigurationError(f"loss component {name} missing or non-finite")
    report.total_cd = report.adv_d + w.lambda1 * report.cls_c
    report.total_g = (report.adv_g + w.lambda2 * report.cyc
                      + w.lambda3 * report.cls_g + w.lambda4 * report.idm)
    report.total_hl = report.total_g + (report.mos if with_mos else 0.0)
    return report
