"""Spatial and Fourier-space supervision losses with analytic gradients.

Every loss returns a :class:`LossValue` whose ``grad`` is the derivative with
respect to the *first* (predicted) argument, shaped like that argument. All
losses are normalised per channel so grayscale and RGB values are comparable.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ShapeError
from .spectral import PHASE_EPS, spectrum_backward, windowed_spectrum


@dataclass
class LossValue:
    value: float
    grad: Optional[np.ndarray] = None


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def l1_loss(pred, target):
    """Mean absolute difference; the subgradient uses ``sign(0) == 0``."""
    pred, target = _check_pair(pred, target)
    diff = pred - target
    return LossValue(float(np.mean(np.abs(diff))), np.sign(diff) / diff.size)


def wrap_angle(d):
    """Map angle differences into [-pi, pi)."""
    return np.mod(np.asarray(d) + np.pi, 2.0 * np.pi) - np.pi


def phase_diff(a, b):
    """Wrapped angular distance between ``a`` and ``b``, in [0, pi]."""
    d = np.mod(np.abs(np.asarray(a, dtype=np.float64) - b), 2.0 * np.pi)
    return np.minimum(d, 2.0 * np.pi - d)


def _check_spectra(pred_s, target_s):
    if pred_s.amplitude.shape != target_s.amplitude.shape or pred_s.full_u != target_s.full_u:
        raise ShapeError(
            f"spectrum mismatch: {pred_s.amplitude.shape} vs {target_s.amplitude.shape}")


def amplitude_loss(pred_s, target_s):
    """Mean |amplitude difference| over the kept half-spectrum.

    Averaging over the ``U/2 * V * C`` kept bins equals the ``2/(U V C)``
    normaliser applied to their sum.
    """
    _check_spectra(pred_s, target_s)
    diff = pred_s.amplitude - target_s.amplitude
    n = diff.size
    value = float(np.abs(diff).sum() / n)
    grad = spectrum_backward(pred_s, d_amp=np.sign(diff) / n)
    return LossValue(value, grad)


def phase_loss(pred_s, target_s, eps=PHASE_EPS):
    """Mean wrapped phase distance over the kept half-spectrum.

    Bins where either amplitude is below ``eps`` contribute to the value but
    not to the gradient.
    """
    _check_spectra(pred_s, target_s)
    signed = wrap_angle(pred_s.phase - target_s.phase)
    dist = phase_diff(pred_s.phase, target_s.phase)
    n = dist.size
    value = float(dist.sum() / n)
    defined = (pred_s.amplitude >= eps) & (target_s.amplitude >= eps)
    d_phase = np.where(defined, np.sign(signed), 0.0) / n
    grad = spectrum_backward(pred_s, d_phase=d_phase, eps=eps)
    return LossValue(value, grad)


def fourier_loss_terms(pred, target):
    """Return ``(amplitude, phase)`` losses of the windowed half-spectra."""
    pred, target = _check_pair(pred, target)
    ps = windowed_spectrum(pred)
    ts = windowed_spectrum(target)
    return amplitude_loss(ps, ts), phase_loss(ps, ts)


def fourier_loss(pred, target):
    amp, phase = fourier_loss_terms(pred, target)
    return LossValue(0.5 * amp.value + 0.5 * phase.value, 0.5 * amp.grad + 0.5 * phase.grad)


def feature_loss(pred, target, extractor):
    """Mean absolute difference between frozen ``extractor`` features.

    ``extractor`` needs ``forward(x)`` and ``backward(dy, param_grads=False)``
    acting on batches ``(N, H, W, C)``. Single images are batched on the fly.
    """
    pred, target = _check_pair(pred, target)
    single = pred.ndim == 3
    if single:
        pred, target = pred[None], target[None]
    feat_t = extractor.forward(target)
    feat_p = extractor.forward(pred)
    diff = feat_p - feat_t
    value = float(np.mean(np.abs(diff)))
    grad = extractor.backward(np.sign(diff) / diff.size, param_grads=False)
    if single:
        grad = grad[0]
    return LossValue(value, grad)
