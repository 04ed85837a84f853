"""Slow, direct reference implementations used as test oracles."""

import math

import numpy as np


def brute_dft2(x):
    h, w = x.shape
    hh, ww = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            out[u, v] = np.sum(x * np.exp(-2j * np.pi * (u * hh / h + v * ww / w)))
    return out / math.sqrt(h * w)


def brute_hann(n, size):
    return 0.5 * (1 - math.cos(2 * math.pi * n / (size - 1)))


def brute_half_spectrum(img):
    """(amplitude, phase) lists over kept bins u < U/2, per channel, via direct sums."""
    h, w, c = img.shape
    win = np.array([[brute_hann(i, h) * brute_hann(j, w) for j in range(w)] for i in range(h)])
    amp = np.zeros((h // 2, w, c))
    phase = np.zeros((h // 2, w, c))
    for ch in range(c):
        X = brute_dft2(img[:, :, ch] * win)
        for u in range(h // 2):
            for v in range(w):
                z = X[u, v]
                amp[u, v, ch] = math.hypot(z.real, z.imag)
                phase[u, v, ch] = math.atan2(z.imag, z.real)
    return amp, phase


def wrapped(a, b):
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def naive_conv3x3(x, w, b):
    """x: (H, W, Cin), w: (3, 3, Cin, Cout). Zero padding, stride 1."""
    h, wd, cin = x.shape
    cout = w.shape[3]
    out = np.zeros((h, wd, cout))
    for i in range(h):
        for j in range(wd):
            for o in range(cout):
                acc = b[o]
                for ky in range(3):
                    for kx in range(3):
                        for c in range(cin):
                            y, xx = i + ky - 1, j + kx - 1
                            if 0 <= y < h and 0 <= xx < wd:
                                acc += x[y, xx, c] * w[ky, kx, c, o]
                out[i, j, o] = acc
    return out


def naive_pool2(x):
    h, w, c = x.shape
    out = np.zeros((h // 2, w // 2, c))
    for i in range(h // 2):
        for j in range(w // 2):
            out[i, j] = (x[2 * i, 2 * j] + x[2 * i + 1, 2 * j] + x[2 * i, 2 * j + 1]
                         + x[2 * i + 1, 2 * j + 1]) / 4
    return out


def naive_leaky(x, slope=0.2):
    return np.where(x >= 0, x, slope * x)
