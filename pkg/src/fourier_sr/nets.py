"""Layers with explicit forward/backward passes and the networks built from them.

All layers operate on batches. Spatial tensors are ``(N, H, W, C)``, dense
tensors ``(N, F)``. ``forward`` caches what ``backward`` needs, so a layer
instance must not be shared between interleaved forward passes.
"""

import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, MalformedHeaderError, ShapeError, TruncatedPayloadError
from .spectral import PHASE_EPS, spectrum_backward, windowed_spectrum

LEAKY_SLOPE = 0.2

# separate PRNG streams per network role
TAG_GENERATOR = 0
TAG_SPATIAL_DISC = 1
TAG_FOURIER_DISC = 2
TAG_FEATURES = 3


class Layer:
    """Base layer: parameter-free identity."""

    def __init__(self):
        self.params = OrderedDict()
        self.grads = OrderedDict()

    def named_params(self, prefix=""):
        for name, p in self.params.items():
            yield prefix + name, p, self.grads[name]

    def leaf_layers(self):
        yield self

    def reset(self, rng):
        pass

    def _add_param(self, name, shape):
        self.params[name] = np.zeros(shape)
        self.grads[name] = np.zeros(shape)

    def forward(self, x):
        return x

    def backward(self, dy, param_grads=True):
        return dy


def glorot_uniform(rng, shape, fan_in, fan_out):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


class Conv3x3(Layer):
    """3x3 cross-correlation, zero padding 1, stride 1. Weights ``(3, 3, Cin, Cout)``."""

    def __init__(self, cin, cout):
        super().__init__()
        self.cin, self.cout = cin, cout
        self._add_param("w", (3, 3, cin, cout))
        self._add_param("b", (cout,))

    def reset(self, rng):
        self.params["w"][...] = glorot_uniform(
            rng, self.params["w"].shape, 9 * self.cin, 9 * self.cout)
        self.params["b"][...] = 0.0

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.cin:
            raise ShapeError(f"conv expects (N, H, W, {self.cin}), got {x.shape}")
        n, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        cols = np.empty((n, h, w, 9, c))
        for ky in range(3):
            for kx in range(3):
                cols[:, :, :, 3 * ky + kx, :] = xp[:, ky:ky + h, kx:kx + w, :]
        self._cols = cols.reshape(n * h * w, 9 * c)
        self._in_shape = x.shape
        y = self._cols @ self.params["w"].reshape(9 * c, self.cout) + self.params["b"]
        return y.reshape(n, h, w, self.cout)

    def backward(self, dy, param_grads=True):
        n, h, w, c = self._in_shape
        dy2 = dy.reshape(-1, self.cout)
        wm = self.params["w"].reshape(9 * c, self.cout)
        if param_grads:
            self.grads["w"][...] = (self._cols.T @ dy2).reshape(self.grads["w"].shape)
            self.grads["b"][...] = dy2.sum(axis=0)
        dcols = (dy2 @ wm.T).reshape(n, h, w, 9, c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for ky in range(3):
            for kx in range(3):
                dxp[:, ky:ky + h, kx:kx + w, :] += dcols[:, :, :, 3 * ky + kx, :]
        return dxp[:, 1:-1, 1:-1, :]


class Dense(Layer):
    def __init__(self, nin, nout):
        super().__init__()
        self.nin, self.nout = nin, nout
        self._add_param("w", (nin, nout))
        self._add_param("b", (nout,))

    def reset(self, rng):
        self.params["w"][...] = glorot_uniform(rng, (self.nin, self.nout), self.nin, self.nout)
        self.params["b"][...] = 0.0

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.nin:
            raise ShapeError(f"dense expects (N, {self.nin}), got {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy, param_grads=True):
        if param_grads:
            self.grads["w"][...] = self._x.T @ dy
            self.grads["b"][...] = dy.sum(axis=0)
        return dy @ self.params["w"].T


class LeakyReLU(Layer):
    def __init__(self, slope=LEAKY_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        self._neg = x < 0
        return np.where(self._neg, self.slope * x, x)

    def backward(self, dy, param_grads=True):
        return np.where(self._neg, self.slope * dy, dy)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x < 0, slope * x, x)


def pixel_shuffle(x, r):
    """``(N, H, W, C*r*r) -> (N, r*H, r*W, C)``.

    ``out[n, r*h + i, r*w + j, c] = x[n, h, w, c*r*r + i*r + j]``.
    """
    n, h, w, cr = x.shape
    if cr % (r * r):
        raise ShapeError(f"channel count {cr} is not divisible by r^2 = {r * r}")
    c = cr // (r * r)
    y = x.reshape(n, h, w, c, r, r).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(n, h * r, w * r, c)


def pixel_unshuffle(y, r):
    n, hr, wr, c = y.shape
    if hr % r or wr % r:
        raise ShapeError(f"spatial dims {hr}x{wr} are not divisible by {r}")
    h, w = hr // r, wr // r
    x = y.reshape(n, h, r, w, r, c).transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(n, h, w, c * r * r)


class PixelShuffle(Layer):
    def __init__(self, r):
        super().__init__()
        self.r = r

    def forward(self, x):
        return pixel_shuffle(x, self.r)

    def backward(self, dy, param_grads=True):
        return pixel_unshuffle(dy, self.r)


class AvgPool2(Layer):
    """2x2 average pooling with stride 2."""

    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"avg-pool needs even spatial dims, got {h}x{w}")
        return x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def backward(self, dy, param_grads=True):
        return np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2) * 0.25


class Flatten(Layer):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, param_grads=True):
        return dy.reshape(self._shape)


class SpectrumFeatures(Layer):
    """Windowed half-spectrum flattened as all amplitudes then all phases.

    Within each block the order is channel-major, then row-major ``(u, v)``.
    """

    def __init__(self, height, width, channels, eps=PHASE_EPS):
        super().__init__()
        if height % 2 or width % 2:
            raise ShapeError(f"spectrum features need even dims, got {height}x{width}")
        self.shape = (height, width, channels)
        self.eps = eps

    @property
    def output_dim(self):
        h, w, c = self.shape
        return c * (h // 2) * w * 2

    def forward(self, x):
        if x.shape[1:] != self.shape:
            raise ShapeError(f"discriminator built for {self.shape}, got {x.shape[1:]}")
        self._spec = windowed_spectrum(x)
        n = x.shape[0]
        amp = self._spec.amplitude.transpose(0, 3, 1, 2).reshape(n, -1)
        phase = self._spec.phase.transpose(0, 3, 1, 2).reshape(n, -1)
        return np.concatenate([amp, phase], axis=1)

    def backward(self, dy, param_grads=True):
        n = dy.shape[0]
        h, w, c = self.shape
        half = dy.shape[1] // 2

        def unflatten(block):
            return block.reshape(n, c, h // 2, w).transpose(0, 2, 3, 1)

        return spectrum_backward(self._spec, unflatten(dy[:, :half]),
                                 unflatten(dy[:, half:]), eps=self.eps)


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def named_params(self, prefix=""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"{prefix}{i}.")

    def leaf_layers(self):
        for layer in self.layers:
            yield from layer.leaf_layers()

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy, param_grads=True):
        for layer in reversed(self.layers):
            dy = layer.backward(dy, param_grads)
        return dy


class ResidualBlock(Sequential):
    """``x + conv(lrelu(conv(x)))``."""

    def __init__(self, channels, slope=LEAKY_SLOPE):
        super().__init__([Conv3x3(channels, channels), LeakyReLU(slope),
                          Conv3x3(channels, channels)])

    def forward(self, x):
        return x + super().forward(x)

    def backward(self, dy, param_grads=True):
        return dy + super().backward(dy, param_grads)


class Network(Sequential):
    """Top-level layer stack with parameter bookkeeping and seeded init."""

    def parameters(self):
        return OrderedDict((name, p) for name, p, _ in self.named_params())

    def gradients(self):
        return OrderedDict((name, g) for name, _, g in self.named_params())

    def num_params(self):
        return sum(p.size for _, p, _ in self.named_params())

    def initialize(self, seed, tag=0):
        """Glorot-uniform weights, zero biases; layer ``i`` draws from stream ``(seed, tag, i)``."""
        index = 0
        for layer in self.leaf_layers():
            if layer.params:
                layer.reset(np.random.default_rng([int(seed), int(tag), index]))
                index += 1
        return self

    def zero_parameters(self):
        for _, p, _ in self.named_params():
            p[...] = 0.0
        return self

    def load_parameters(self, params):
        own = self.parameters()
        if list(own) != list(params):
            raise FormatError("parameter names do not match the network layout")
        for name, p in own.items():
            src = np.asarray(params[name])
            if src.shape != p.shape:
                raise FormatError(f"parameter {name}: shape {src.shape} != {p.shape}")
            p[...] = src


# --------------------------------------------------------------------------
# Concrete networks


@dataclass(frozen=True)
class GeneratorConfig:
    channels: int = 3
    base_channels: int = 16
    num_blocks: int = 4
    scale: int = 4

    def stage_factors(self):
        if self.scale < 2:
            raise ShapeError(f"scale must be >= 2, got {self.scale}")
        if self.scale & (self.scale - 1) == 0:
            return [2] * (self.scale.bit_length() - 1)
        return [self.scale]

    def as_counts(self):
        return (self.channels, self.base_channels, self.num_blocks, self.scale)


class Generator(Network):
    """Conv head, residual trunk, pixel-shuffle upsampling stages, conv tail.

    The output is unclamped; clamp at export time.
    """

    def __init__(self, config=GeneratorConfig()):
        self.config = config
        c, b = config.channels, config.base_channels
        layers = [Conv3x3(c, b)]
        layers += [ResidualBlock(b) for _ in range(config.num_blocks)]
        for f in config.stage_factors():
            layers += [Conv3x3(b, b * f * f), PixelShuffle(f), LeakyReLU()]
        layers.append(Conv3x3(b, c))
        super().__init__(layers)

    def forward(self, x):
        single = x.ndim == 3
        y = super().forward(x[None] if single else x)
        return y[0] if single else y


def generator_forward(gen, lr):
    """Super-resolve a single image or batch with ``gen``."""
    return gen.forward(np.asarray(lr, dtype=np.float64))


def build_generator(config=GeneratorConfig(), seed=0):
    return Generator(config).initialize(seed, TAG_GENERATOR)


DEFAULT_FOURIER_WIDTHS = {5: (1024, 512, 256, 128), 3: (512, 128)}


@dataclass(frozen=True)
class FourierDiscriminatorConfig:
    height: int
    width: int
    channels: int = 3
    num_layers: int = 5
    hidden_widths: Optional[Sequence[int]] = None

    def widths(self):
        widths = self.hidden_widths
        if widths is None:
            if self.num_layers not in DEFAULT_FOURIER_WIDTHS:
                raise ShapeError(f"no default widths for {self.num_layers} layers")
            widths = DEFAULT_FOURIER_WIDTHS[self.num_layers]
        if len(widths) != self.num_layers - 1:
            raise ShapeError(f"{self.num_layers} layers need {self.num_layers - 1} hidden widths")
        return tuple(widths)

    @property
    def input_dim(self):
        return self.channels * (self.height // 2) * self.width * 2


class FourierDiscriminator(Network):
    """Fully connected critic over windowed amplitude and phase."""

    def __init__(self, config):
        self.config = config
        spec = SpectrumFeatures(config.height, config.width, config.channels)
        layers = [spec]
        nin = spec.output_dim
        for width in config.widths():
            layers += [Dense(nin, width), LeakyReLU()]
            nin = width
        layers.append(Dense(nin, 1))
        super().__init__(layers)

    def forward(self, x):
        return super().forward(x)[:, 0]

    def backward(self, dlogits, param_grads=True):
        return super().backward(np.asarray(dlogits, dtype=np.float64)[:, None], param_grads)


def build_fourier_discriminator(config, seed=0):
    return FourierDiscriminator(config).initialize(seed, TAG_FOURIER_DISC)


def fourier_discriminator_forward(disc, img):
    """Logit(s) for a single image or a batch."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return float(disc.forward(img[None])[0])
    return disc.forward(img)


class SpatialDiscriminator(Network):
    """``num_stages`` x (conv3x3, 2x2 avg-pool, leaky ReLU), then a dense logit."""

    def __init__(self, height, width, channels=3, num_stages=4, widths=None):
        factor = 2 ** num_stages
        if height % factor or width % factor:
            raise ShapeError(
                f"{num_stages} halvings need dims divisible by {factor}, got {height}x{width}")
        if widths is None:
            widths = tuple(min(16 * 2 ** i, 64) for i in range(num_stages))
        self.shape = (height, width, channels)
        layers = []
        cin = channels
        for cout in widths:
            layers += [Conv3x3(cin, cout), AvgPool2(), LeakyReLU()]
            cin = cout
        self.grid = (height // factor, width // factor)
        layers += [Flatten(), Dense(self.grid[0] * self.grid[1] * cin, 1)]
        super().__init__(layers)

    def forward(self, x):
        if x.shape[1:] != self.shape:
            raise ShapeError(f"discriminator built for {self.shape}, got {x.shape[1:]}")
        return super().forward(x)[:, 0]

    def backward(self, dlogits, param_grads=True):
        return super().backward(np.asarray(dlogits, dtype=np.float64)[:, None], param_grads)


def build_spatial_discriminator(height, width, channels=3, seed=0, num_stages=4):
    return SpatialDiscriminator(height, width, channels, num_stages).initialize(
        seed, TAG_SPATIAL_DISC)


def spatial_discriminator_forward(disc, img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return float(disc.forward(img[None])[0])
    return disc.forward(img)


FEATURE_WIDTHS = (16, 32, 32)


def build_feature_extractor(channels=3, seed=0, widths=FEATURE_WIDTHS):
    """Frozen random conv stack standing in for a pretrained perceptual network.

    Each stage is conv3x3, leaky ReLU and 2x2 average pooling, so the feature
    grid is 1/8 of the input in each dimension.
    """
    layers = []
    cin = channels
    for cout in widths:
        layers += [Conv3x3(cin, cout), LeakyReLU(), AvgPool2()]
        cin = cout
    return Network(layers).initialize(seed, TAG_FEATURES)


# --------------------------------------------------------------------------
# Checkpoints
#
# "FSRC" | u32 version | u64 seed | u32 n, n x u32 config counts
# | u32 n_tensors, per tensor: u32 name_len, name, u32 ndim, dims (u32), f64 data
# | u32 has_optimizer [, u64 t, f64 beta1, f64 beta2, f64 eps, m tensors, v tensors]
# All integers and floats little-endian.

CHECKPOINT_MAGIC = b"FSRC"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    seed: int
    config: tuple
    params: "OrderedDict[str, np.ndarray]"
    optimizer: Optional[dict] = None
    extra: dict = field(default_factory=dict)


def _pack_tensor(name, arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    raw = name.encode("utf-8")
    head = struct.pack("<I", len(raw)) + raw + struct.pack("<I", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise TruncatedPayloadError("checkpoint truncated")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def tensor(self):
        (nlen,) = self.take("<I")
        name = self.buf[self.pos:self.pos + nlen].decode("utf-8")
        self.pos += nlen
        (ndim,) = self.take("<I")
        shape = self.take(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        if self.pos + 8 * count > len(self.buf):
            raise TruncatedPayloadError(f"tensor {name} truncated")
        data = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos)
        self.pos += 8 * count
        return name, data.astype(np.float64).reshape(shape)


def encode_checkpoint(params, seed, config, optimizer=None):
    """Serialise parameters (name -> array) and optional Adam state."""
    out = [CHECKPOINT_MAGIC, struct.pack("<IQ", CHECKPOINT_VERSION, int(seed))]
    out.append(struct.pack(f"<I{len(config)}I", len(config), *config))
    out.append(struct.pack("<I", len(params)))
    out += [_pack_tensor(name, p) for name, p in params.items()]
    if optimizer is None:
        out.append(struct.pack("<I", 0))
    else:
        out.append(struct.pack("<IQ3d", 1, optimizer["t"], optimizer["beta1"],
                               optimizer["beta2"], optimizer["eps"]))
        out += [_pack_tensor(name, optimizer["m"][name]) for name in params]
        out += [_pack_tensor(name, optimizer["v"][name]) for name in params]
    return b"".join(out)


def decode_checkpoint(buf):
    if buf[:4] != CHECKPOINT_MAGIC:
        raise MalformedHeaderError("missing FSRC magic")
    rd = _Reader(buf)
    rd.pos = 4
    version, seed = rd.take("<IQ")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (n_cfg,) = rd.take("<I")
    config = rd.take(f"<{n_cfg}I")
    (n_tensors,) = rd.take("<I")
    params = OrderedDict(rd.tensor() for _ in range(n_tensors))
    (has_opt,) = rd.take("<I")
    optimizer = None
    if has_opt:
        t, beta1, beta2, eps = rd.take("<Q3d")
        m = OrderedDict(rd.tensor() for _ in range(n_tensors))
        v = OrderedDict(rd.tensor() for _ in range(n_tensors))
        optimizer = {"t": t, "beta1": beta1, "beta2": beta2, "eps": eps, "m": m, "v": v}
    return Checkpoint(seed=seed, config=tuple(config), params=params, optimizer=optimizer)


def save_checkpoint(path, net, seed, config, optimizer=None):
    with open(path, "wb") as f:
        f.write(encode_checkpoint(net.parameters(), seed, config, optimizer))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


def load_generator(path):
    ckpt = load_checkpoint(path)
    if len(ckpt.config) != 4:
        raise FormatError(f"generator checkpoint needs 4 config counts, got {len(ckpt.config)}")
    gen = Generator(GeneratorConfig(*ckpt.config))
    gen.load_parameters(ckpt.params)
    return gen, ckpt
