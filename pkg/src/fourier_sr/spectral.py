"""Windowed, unitary 2-D DFT with amplitude/phase half-spectra.

Transforms act on the two spatial axes of arrays laid out ``(..., H, W, C)``
unless an explicit ``axes`` argument says otherwise. The forward transform is
normalised by ``1/sqrt(H*W)`` so it is unitary and its adjoint is its inverse.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ShapeError

SPATIAL_AXES = (-3, -2)
PHASE_EPS = 1e-8


# --------------------------------------------------------------------------
# Window


def hann(n, size):
    """Symmetric Hann taper value(s) at index ``n`` of a length-``size`` window."""
    n = np.asarray(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * n / (size - 1)))


@lru_cache(maxsize=32)
def _hann_window(h, w):
    win = np.outer(hann(np.arange(h), h), hann(np.arange(w), w))
    # the symmetric form has exact zeros at both ends; cos() rounding does not
    win[0, :] = win[-1, :] = 0.0
    win[:, 0] = win[:, -1] = 0.0
    win.setflags(write=False)
    return win


def hann_window(h, w):
    """Separable ``(h, w)`` Hann window. The returned array is read-only."""
    if h < 2 or w < 2:
        raise ShapeError(f"Hann window needs both dims >= 2, got {h}x{w}")
    return _hann_window(int(h), int(w))


# --------------------------------------------------------------------------
# 1-D transforms along the last axis


def _is_pow2(n):
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=32)
def _bitrev(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _twiddles(m):
    # exp(-2*pi*i*k/(2m)) for k < m
    return np.exp(-1j * np.pi * np.arange(m) / m)


@lru_cache(maxsize=32)
def _dft_matrix(n):
    k = np.arange(n)
    # reduce k*n mod N before scaling to keep the angle small and exact
    return np.exp(-2j * np.pi * (np.outer(k, k) % n) / n)


def _fft_last(a):
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    if not _is_pow2(n):
        return a @ _dft_matrix(n).T
    a = a[..., _bitrev(n)]
    prefix = a.shape[:-1]
    m = 1
    while m < n:
        blocks = a.reshape(prefix + (n // (2 * m), 2 * m))
        even = blocks[..., :m]
        odd = blocks[..., m:] * _twiddles(m)
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(prefix + (n,))
        m *= 2
    return a


def _fft_axis(a, axis):
    a = np.moveaxis(a, axis, -1)
    return np.moveaxis(_fft_last(a), -1, axis)


# --------------------------------------------------------------------------
# 2-D transforms


def dft2(x, axes=(0, 1)):
    """Unitary 2-D DFT over ``axes``.

    Power-of-two lengths use an iterative radix-2 transform; other lengths
    use direct summation.
    """
    x = np.asarray(x)
    out = x.astype(np.complex128)
    h, w = x.shape[axes[0]], x.shape[axes[1]]
    out = _fft_axis(out, axes[0])
    out = _fft_axis(out, axes[1])
    return out / np.sqrt(h * w)


def idft2_adjoint(grad_spectrum, axes=(0, 1), shape=None):
    """Real part of the conjugate transpose of ``dft2`` applied to a cotangent.

    Satisfies ``sum(Re(conj(dft2(x)) * g)) == sum(x * idft2_adjoint(g))``.
    """
    g = np.asarray(grad_spectrum, dtype=np.complex128)
    if shape is not None and tuple(g.shape) != tuple(shape):
        raise ShapeError(f"cotangent shape {g.shape} != spectrum shape {tuple(shape)}")
    # F^H g = conj(F conj(g))
    return dft2(np.conj(g), axes=axes).real


# --------------------------------------------------------------------------
# Windowed half-spectrum


@dataclass(frozen=True)
class Spectrum:
    """Half-spectrum of a windowed image.

    ``amplitude``, ``phase`` and ``values`` hold rows ``u < U/2`` of every
    channel, shaped ``(..., U/2, V, C)``. ``nyquist`` keeps row ``u = U/2`` so
    the full transform can be rebuilt, though no loss reads it.
    """

    amplitude: np.ndarray
    phase: np.ndarray
    values: np.ndarray
    nyquist: np.ndarray
    full_u: int

    @property
    def u_dim(self):
        return self.full_u

    @property
    def v_dim(self):
        return self.amplitude.shape[-2]

    @property
    def channels(self):
        return self.amplitude.shape[-1]

    @property
    def image_shape(self):
        return self.full_u, self.v_dim


def amplitude_phase(values):
    """Polar form with phase wrapped to (-pi, pi] and ``angle(0) == 0``."""
    amp = np.abs(values)
    phase = np.arctan2(values.imag, values.real)
    phase = np.where(phase <= -np.pi, phase + 2.0 * np.pi, phase)
    phase = np.where(amp == 0.0, 0.0, phase)
    return amp, phase


def _windowed_dft(img):
    h, w = img.shape[-3], img.shape[-2]
    win = hann_window(h, w)[:, :, None]
    return dft2(img * win, axes=SPATIAL_AXES)


def windowed_spectrum(img):
    """Hann-window each channel, transform, and keep rows ``u in [0, U/2 - 1]``.

    Accepts a single ``(H, W, C)`` image or a batch ``(N, H, W, C)``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim < 3:
        raise ShapeError(f"expected (..., H, W, C), got shape {img.shape}")
    h, w = img.shape[-3], img.shape[-2]
    if h % 2 or w % 2:
        raise ShapeError(f"windowed spectrum needs even dims, got {h}x{w}")
    full = _windowed_dft(img)
    # self-conjugate bins are real for real input; drop round-off in Im so the
    # phase there is exactly 0 or pi and never flips across the branch cut
    for u in (0, h // 2):
        for v in (0, w // 2):
            full[..., u, v, :] = full[..., u, v, :].real
    half = full[..., : h // 2, :, :]
    amp, phase = amplitude_phase(half)
    return Spectrum(amplitude=amp, phase=phase, values=half,
                    nyquist=full[..., h // 2, :, :].copy(), full_u=h)


def reconstruct_full(spec):
    """Rebuild the full ``(..., U, V, C)`` spectrum from a half-spectrum."""
    u, v = spec.full_u, spec.v_dim
    lead = spec.values.shape[:-3]
    full = np.zeros(lead + (u, v, spec.channels), dtype=np.complex128)
    full[..., : u // 2, :, :] = spec.values
    full[..., u // 2, :, :] = spec.nyquist
    neg_v = (-np.arange(v)) % v
    for row in range(u // 2 + 1, u):
        full[..., row, :, :] = np.conj(spec.values[..., u - row, neg_v, :])
    return full


def inverse_windowed(spec):
    """Windowed image recovered from ``spec`` (inverse of the unitary DFT)."""
    return idft2_adjoint(reconstruct_full(spec), axes=SPATIAL_AXES)


def spectrum_backward(spec, d_amp=None, d_phase=None, eps=PHASE_EPS):
    """Pull cotangents on half-spectrum amplitude/phase back to the image.

    Phase cotangents are dropped where the amplitude is below ``eps``; the
    amplitude cotangent is dropped where the amplitude is exactly zero.
    """
    amp = spec.amplitude
    re, im = spec.values.real, spec.values.imag
    g_re = np.zeros_like(amp)
    g_im = np.zeros_like(amp)
    if d_amp is not None:
        nz = amp > 0.0
        safe = np.where(nz, amp, 1.0)
        g_re += np.where(nz, d_amp * re / safe, 0.0)
        g_im += np.where(nz, d_amp * im / safe, 0.0)
    if d_phase is not None:
        ok = amp >= eps
        inv2 = np.where(ok, 1.0 / np.where(ok, amp, 1.0) ** 2, 0.0)
        g_re -= d_phase * im * inv2
        g_im += d_phase * re * inv2
    u, v = spec.full_u, spec.v_dim
    lead = amp.shape[:-3]
    full = np.zeros(lead + (u, v, spec.channels), dtype=np.complex128)
    full[..., : u // 2, :, :] = g_re + 1j * g_im
    grad = idft2_adjoint(full, axes=SPATIAL_AXES)
    return grad * hann_window(u, v)[:, :, None]


# --------------------------------------------------------------------------
# Analysis helpers


def radial_frequency(h, w):
    """Distance of each DFT bin from DC, with frequencies folded to ``min(k, N-k)``."""
    fu = np.minimum(np.arange(h), h - np.arange(h))
    fv = np.minimum(np.arange(w), w - np.arange(w))
    return np.sqrt(fu[:, None] ** 2 + fv[None, :] ** 2)


def high_frequency_fraction(img, cutoff=None):
    """Share of windowed spectral energy above radius ``cutoff`` (default ``min(H, W)/4``)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[-3], img.shape[-2]
    if cutoff is None:
        cutoff = min(h, w) / 4.0
    energy = np.abs(_windowed_dft(img)) ** 2
    total = energy.sum()
    if total == 0.0:
        return 0.0
    mask = radial_frequency(h, w) > cutoff
    return float(energy[..., mask, :].sum() / total)


def log_amplitude_image(spec):
    """Map half-spectrum amplitude to [0, 1] as ``log(1+|X|) / log(1+max|X|)``."""
    amp = spec.amplitude
    peak = amp.max()
    if peak == 0.0:
        return np.zeros_like(amp)
    return np.log1p(amp) / np.log1p(peak)
