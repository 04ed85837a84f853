import math

import numpy as np
import pytest

from fourier_sr.errors import ShapeError
from fourier_sr.metrics import (
    SSIM_K1,
    evaluate_dirs,
    gaussian_window,
    matching_ppm_names,
    psnr,
    ssim,
)
from fourier_sr.tensor_core import save_ppm


def _loop_ssim(a, b):
    # definition-level reference: explicit loops over every valid window
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    win = gaussian_window()
    h, w, c = a.shape
    vals = []
    for ch in range(c):
        for i in range(h - 10):
            for j in range(w - 10):
                pa = a[i:i + 11, j:j + 11, ch]
                pb = b[i:i + 11, j:j + 11, ch]
                ma, mb = np.sum(win * pa), np.sum(win * pb)
                va = np.sum(win * (pa - ma) ** 2)
                vb = np.sum(win * (pb - mb) ** 2)
                cov = np.sum(win * (pa - ma) * (pb - mb))
                vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                            / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_known_value():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 1.0 / 255.0)
    assert psnr(a, b) == pytest.approx(48.1308036086791, abs=1e-9)


def test_psnr_identical_is_inf(rng):
    x = rng.random((4, 4, 3))
    assert psnr(x, x) == math.inf


def test_psnr_symmetric_and_monotone(rng):
    x = rng.random((16, 16, 3))
    noise = rng.standard_normal(x.shape)
    assert psnr(x, x + 0.01 * noise) == psnr(x + 0.01 * noise, x)
    assert psnr(x, x + 0.01 * noise) > psnr(x, x + 0.02 * noise)


def test_gaussian_window():
    win = gaussian_window()
    assert win.shape == (11, 11)
    assert win.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(win, win.T)
    assert win[5, 5] == win.max()


def test_ssim_identical_is_one(rng):
    x = rng.random((16, 16, 3))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_closed_form():
    a = np.zeros((12, 12, 1))
    b = np.ones((12, 12, 1))
    c1 = SSIM_K1 ** 2
    assert ssim(a, b) == pytest.approx(c1 / (1.0 + c1), abs=1e-12)


def test_ssim_matches_loop_oracle(rng):
    a = rng.random((14, 13, 2))
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0, 1)
    assert abs(ssim(a, b) - _loop_ssim(a, b)) < 1e-9


def test_ssim_symmetric_and_monotone(rng):
    x = rng.random((24, 24, 3))
    noise = rng.standard_normal(x.shape)
    y1, y2 = x + 0.05 * noise, x + 0.2 * noise
    assert ssim(x, y1) == pytest.approx(ssim(y1, x), abs=1e-14)
    assert 1.0 > ssim(x, y1) > ssim(x, y2)


def test_ssim_errors(rng):
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)))
    with pytest.raises(ShapeError):
        psnr(np.zeros((12, 12, 3)), np.zeros((12, 12, 1)))


def test_evaluate_dirs(tmp_path, rng):
    (tmp_path / "p").mkdir()
    (tmp_path / "r").mkdir()
    img = rng.random((16, 16, 3))
    save_ppm(img, tmp_path / "p" / "a.ppm")
    save_ppm(img, tmp_path / "r" / "a.ppm")
    save_ppm(img, tmp_path / "r" / "only_ref.ppm")
    assert matching_ppm_names(tmp_path / "p", tmp_path / "r") == ["a.ppm"]
    report = evaluate_dirs(tmp_path / "p", tmp_path / "r")
    assert report.names == ["a.ppm"]
    assert report.mean_psnr == math.inf
    assert report.mean_ssim == pytest.approx(1.0, abs=1e-12)
