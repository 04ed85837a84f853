"""Full-reference restoration metrics: PSNR and single-scale SSIM."""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor_core import load_ppm

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    return a, b


def psnr(a, b):
    """PSNR in dB for data range 1.0; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    win = np.outer(g, g)
    return win / win.sum()


def _filter_valid(x, win):
    # x: (H, W, C); correlate each channel with win over fully-contained positions
    views = sliding_window_view(x, win.shape, axis=(0, 1))
    return np.einsum("hwcij,ij->hwc", views, win, optimize=True)


def ssim(a, b, data_range=1.0):
    """Mean SSIM over valid 11x11 Gaussian window positions, averaged over channels."""
    a, b = _pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ShapeError(f"SSIM needs images at least {SSIM_WINDOW}px, got {a.shape[:2]}")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    win = gaussian_window()
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a ** 2
    var_b = _filter_valid(b * b, win) - mu_b ** 2
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    names: list = field(default_factory=list)
    psnr_db: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    def add(self, name, p, s):
        self.names.append(name)
        self.psnr_db.append(p)
        self.ssim.append(s)

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr_db)) if self.psnr_db else math.nan

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim)) if self.ssim else math.nan


def evaluate_pairs(pairs):
    """Score ``(name, pred, ref)`` triples in the given order."""
    report = MetricReport()
    for name, pred, ref in pairs:
        report.add(name, psnr(pred, ref), ssim(pred, ref))
    return report


def matching_ppm_names(pred_dir, ref_dir):
    """Sorted names of ``.ppm`` files present in both directories."""
    pred = {n for n in os.listdir(pred_dir) if n.lower().endswith(".ppm")}
    ref = {n for n in os.listdir(ref_dir) if n.lower().endswith(".ppm")}
    return sorted(pred & ref)


def evaluate_dirs(pred_dir, ref_dir):
    names = matching_ppm_names(pred_dir, ref_dir)
    return evaluate_pairs(
        (n, load_ppm(os.path.join(pred_dir, n)), load_ppm(os.path.join(ref_dir, n)))
        for n in names)
