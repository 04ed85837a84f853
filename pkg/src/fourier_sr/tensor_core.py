"""Image arrays, raster file I/O and bicubic resampling.

Images are plain ``float64`` numpy arrays shaped ``(H, W, C)`` with values in
``[0, 1]``. Batches add a leading axis, ``(N, H, W, C)``.
"""

import struct

import numpy as np

from .errors import (
    FormatError,
    MalformedHeaderError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)

FTEN_MAGIC = b"FTEN"
FTEN_VERSION = 1

CUBIC_A = -0.5


def as_image(data, copy=False):
    """Validate ``data`` as an ``(H, W, C)`` image and return it as float64.

    A 2-D array is promoted to a single-channel image.
    """
    img = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ShapeError(f"image must be (H, W, C), got shape {img.shape}")
    if img.shape[2] not in (1, 3):
        raise ShapeError(f"image must have 1 or 3 channels, got {img.shape[2]}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"image dimensions must be positive, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ShapeError("image contains non-finite values")
    return img


def quantize(img):
    """Clamp to [0, 1] and round half away from zero to 8-bit codes."""
    clipped = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.floor(clipped * 255.0 + 0.5).astype(np.uint8)


# --------------------------------------------------------------------------
# PPM


def _read_token(buf, pos):
    """Return (token, new_pos) skipping whitespace and '#' comments."""
    n = len(buf)
    while pos < n:
        ch = buf[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of PPM header")
    return buf[start:pos], pos


def decode_ppm(buf):
    """Decode an in-memory binary P6 pixmap into an image."""
    if buf[:2] != b"P6":
        raise MalformedHeaderError(f"not a binary P6 pixmap (magic {buf[:2]!r})")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_token(buf, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise MalformedHeaderError(f"non-numeric header field {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise MalformedHeaderError(f"invalid dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxvalError(f"only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    pos += 1
    expected = width * height * 3
    payload = buf[pos:pos + expected]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"expected {expected} raster bytes, found {len(payload)}")
    raw = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return raw.astype(np.float64) / 255.0


def encode_ppm(img):
    img = as_image(img)
    codes = quantize(img)
    if codes.shape[2] == 1:
        codes = np.repeat(codes, 3, axis=2)
    h, w = codes.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + codes.tobytes()


def load_ppm(path):
    """Read a binary P6 file with maxval 255 into an ``(H, W, 3)`` image."""
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def save_ppm(img, path):
    """Write ``img`` as binary P6. Single-channel images are replicated to RGB."""
    data = encode_ppm(img)
    with open(path, "wb") as f:
        f.write(data)


# --------------------------------------------------------------------------
# FTEN raw tensor dump


def save_ften(img, path):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"FTEN stores (H, W, C) tensors, got shape {img.shape}")
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(FTEN_MAGIC)
        f.write(struct.pack("<4I", FTEN_VERSION, h, w, c))
        f.write(img.astype("<f8").tobytes())


def load_ften(path):
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != FTEN_MAGIC:
        raise MalformedHeaderError("missing FTEN magic")
    if len(buf) < 20:
        raise TruncatedPayloadError("FTEN header truncated")
    version, h, w, c = struct.unpack_from("<4I", buf, 4)
    if version != FTEN_VERSION:
        raise FormatError(f"unsupported FTEN version {version}")
    count = h * w * c
    payload = buf[20:20 + 8 * count]
    if len(payload) < 8 * count:
        raise TruncatedPayloadError(f"expected {count} values")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(h, w, c)


# --------------------------------------------------------------------------
# Resampling


def cubic_kernel(x, a=CUBIC_A):
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resample_matrix(n_in, n_out):
    """Dense ``(n_out, n_in)`` matrix applying 4-tap bicubic along one axis.

    Pixel centres are aligned (``src = (dst + 0.5) * n_in / n_out - 0.5``) and
    taps falling outside the input are clamped to the nearest edge sample.
    """
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for k in range(-1, 3):
        idx = base + k
        weights = cubic_kernel(src - idx)
        np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), weights)
    return mat


def bicubic_resample(img, out_h, out_w):
    """Separable Catmull-Rom resize of an ``(H, W, C)`` image (no antialiasing)."""
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"output dimensions must be >= 1, got {out_h}x{out_w}")
    img = as_image(img)
    mh = resample_matrix(img.shape[0], out_h)
    mw = resample_matrix(img.shape[1], out_w)
    return np.einsum("ih,hwc,jw->ijc", mh, img, mw, optimize=True)


def degrade(hr, r):
    """Bicubic downscale by integer factor ``r``; dims must be divisible by ``r``."""
    hr = as_image(hr)
    h, w = hr.shape[:2]
    if h % r or w % r:
        raise ShapeError(f"image {h}x{w} is not divisible by scale {r}")
    return bicubic_resample(hr, h // r, w // r)


def crop_pair(hr, lr, x0, y0, lr_size, r):
    """Aligned crops: LR at ``(x0, y0)`` and HR at ``(r*x0, r*y0)``.

    Returns ``(lr_crop, hr_crop)``.
    """
    if r < 2:
        raise ShapeError(f"scale factor must be >= 2, got {r}")
    if lr_size < 1 or x0 < 0 or y0 < 0:
        raise ShapeError("crop offset must be >= 0 and size >= 1")
    if y0 + lr_size > lr.shape[0] or x0 + lr_size > lr.shape[1]:
        raise ShapeError(
            f"LR crop ({x0},{y0})+{lr_size} exceeds LR image {lr.shape[:2]}")
    hs = r * lr_size
    if r * y0 + hs > hr.shape[0] or r * x0 + hs > hr.shape[1]:
        raise ShapeError(
            f"HR crop ({r * x0},{r * y0})+{hs} exceeds HR image {hr.shape[:2]}")
    lr_crop = lr[y0:y0 + lr_size, x0:x0 + lr_size]
    hr_crop = hr[r * y0:r * y0 + hs, r * x0:r * x0 + hs]
    return lr_crop.copy(), hr_crop.copy()
