"""Composite objective, Adam, batch sampling and the alternating GAN loop."""

import dataclasses
import logging
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import NumericError, ShapeError
from .gan_objectives import gan_loss_discriminator, gan_loss_generator, relativistic_transform
from .nets import (
    FourierDiscriminatorConfig,
    GeneratorConfig,
    build_feature_extractor,
    build_fourier_discriminator,
    build_generator,
    build_spatial_discriminator,
    save_checkpoint,
)
from .tensor_core import as_image, bicubic_resample, crop_pair

log = logging.getLogger(__name__)

TERM_FLAGS = OrderedDict([
    ("l1", "enable_l1"),
    ("fourier", "enable_fourier"),
    ("gan_spatial", "enable_gan_spatial"),
    ("gan_fourier", "enable_gan_fourier"),
    ("feature", "enable_feature"),
])

# presets 1-8: L1, Fourier, spatial GAN, Fourier GAN, feature
PRESETS = {
    1: (True, False, False, False, False),
    2: (False, True, False, False, False),
    3: (True, True, False, False, False),
    4: (True, False, True, False, True),
    5: (False, True, False, True, True),
    6: (True, True, True, False, True),
    7: (True, True, False, True, True),
    8: (True, True, True, True, True),
}


@dataclass
class TrainConfig:
    enable_l1: bool = True
    enable_fourier: bool = False
    enable_gan_spatial: bool = False
    enable_gan_fourier: bool = False
    enable_feature: bool = False
    alpha: float = 0.005
    beta: float = 0.01
    gamma: float = 1.0
    lr: float = 1e-4
    batch: int = 4
    iters: int = 1000
    seed: int = 0
    crop_lr: int = 16
    scale: int = 4
    pretrain_iters: int = 500
    fourier_disc_layers: int = 5
    channels: int = 3
    base_channels: int = 16
    num_blocks: int = 4
    feature_seed: int = 0
    threads: int = 1

    def enabled_terms(self):
        return [t for t, flag in TERM_FLAGS.items() if getattr(self, flag)]

    def validate(self):
        if not self.enabled_terms():
            raise ValueError("at least one loss term must be enabled")
        if self.crop_lr < 2 or self.crop_lr % 2:
            raise ValueError(f"crop_lr must be even and >= 2, got {self.crop_lr}")
        if self.fourier_disc_layers not in (3, 5):
            raise ValueError(f"fourier_disc_layers must be 3 or 5, got {self.fourier_disc_layers}")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.batch < 1 or self.iters < 0 or self.pretrain_iters < 0 or self.threads < 1:
            raise ValueError("batch and threads must be >= 1, iteration counts >= 0")
        if self.scale < 2:
            raise ValueError(f"scale must be >= 2, got {self.scale}")
        return self

    @property
    def generator_config(self):
        return GeneratorConfig(self.channels, self.base_channels, self.num_blocks, self.scale)

    @property
    def hr_crop(self):
        return self.crop_lr * self.scale


def preset(k, **overrides):
    """TrainConfig with the loss switches of preset ``k`` (1-8)."""
    if k not in PRESETS:
        raise ValueError(f"preset must be 1-8, got {k}")
    flags = dict(zip(TERM_FLAGS.values(), PRESETS[k]))
    flags.update(overrides)
    return TrainConfig(**flags)


def _coerce(value, kind):
    if kind is bool:
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(TrainConfig)}


def parse_config_text(text):
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key != "preset" and key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def config_from_mapping(values, base=None):
    """Apply string or typed values onto ``base`` (default: fresh TrainConfig)."""
    values = dict(values)
    if "preset" in values:
        cfg = preset(int(values.pop("preset")))
        if base is not None:
            raise ValueError("preset must be resolved before other overrides")
    else:
        cfg = base or TrainConfig()
    updates = {k: _coerce(v, _FIELD_TYPES[k]) for k, v in values.items()}
    return dataclasses.replace(cfg, **updates)


def format_config(cfg):
    return "\n".join(f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(cfg))


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    v: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def for_params(cls, params, **kw):
        state = cls(**kw)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        return state

    def as_dict(self):
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "m": self.m, "v": self.v}

    @classmethod
    def from_dict(cls, d):
        return cls(beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"], t=d["t"],
                   m=OrderedDict(d["m"]), v=OrderedDict(d["v"]))


def adam_step(state, params, grads, lr):
    """Bias-corrected Adam update of ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}", term=name)
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step = lr / bc1
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        # in place with one scratch buffer; the Fourier discriminator is large
        tmp = np.multiply(g, 1.0 - state.beta1)
        m *= state.beta1
        m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - state.beta2
        v *= state.beta2
        v += tmp
        np.divide(v, bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += state.eps
        np.divide(m, tmp, out=tmp)
        tmp *= step
        p -= tmp
    return params


# --------------------------------------------------------------------------
# Composite objective


@dataclass
class LossReport:
    total: float
    terms: "OrderedDict[str, float]"
    weights: "OrderedDict[str, float]"
    grad: np.ndarray = None


def term_weights(cfg):
    """Per-term weights; the pairwise /2 applies only when both partners are on."""
    enabled = set(cfg.enabled_terms())
    weights = OrderedDict()
    for group, scale in ((("gan_spatial", "gan_fourier"), cfg.alpha),
                         (("l1", "fourier"), cfg.beta)):
        on = [t for t in group if t in enabled]
        for t in on:
            weights[t] = scale / len(on)
    if "feature" in enabled:
        weights["feature"] = cfg.gamma
    return OrderedDict((t, weights[t]) for t in TERM_FLAGS if t in weights)


def discriminator_weights(cfg):
    on = [t for t in ("gan_spatial", "gan_fourier") if t in cfg.enabled_terms()]
    return OrderedDict((t, cfg.alpha / len(on)) for t in on)


def _checked(name, value, grad):
    if not np.isfinite(value) or (grad is not None and not np.all(np.isfinite(grad))):
        raise NumericError(f"non-finite value or gradient in loss term {name}", term=name)
    return value, grad


def _fourier_batch(pred, target, threads=1):
    # per-sample evaluation reduced in sample order, identical for any thread count
    def one(i):
        return losses.fourier_loss(pred[i], target[i])

    n = pred.shape[0]
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(n)))
    else:
        results = [one(i) for i in range(n)]
    value = 0.0
    for r in results:
        value += r.value
    grad = np.stack([r.grad for r in results]) / n
    return losses.LossValue(value / n, grad)


def _gan_generator_term(disc, pred, target):
    n = pred.shape[0]
    logits = disc.forward(np.concatenate([target, pred], axis=0))
    scores = relativistic_transform(logits[:n], logits[n:])
    gl = gan_loss_generator(scores)
    dx = disc.backward(np.concatenate([gl.grad_real, gl.grad_fake]), param_grads=False)
    return gl.value, dx[n:]


def composite_generator_loss(cfg, pred, target, discriminators=None, extractor=None):
    """Weighted generator objective over a batch and its gradient w.r.t. ``pred``.

    ``discriminators`` maps ``"gan_spatial"`` / ``"gan_fourier"`` to networks.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 4:
        raise ShapeError(f"expected matching (N, H, W, C) batches, got {pred.shape}, {target.shape}")
    discriminators = discriminators or {}
    weights = term_weights(cfg)
    terms = OrderedDict()
    grad = np.zeros_like(pred)
    total = 0.0
    for name, w in weights.items():
        if name == "l1":
            lv = losses.l1_loss(pred, target)
            value, g = lv.value, lv.grad
        elif name == "fourier":
            lv = _fourier_batch(pred, target, cfg.threads)
            value, g = lv.value, lv.grad
        elif name == "feature":
            if extractor is None:
                raise ValueError("feature loss enabled but no extractor given")
            lv = losses.feature_loss(pred, target, extractor)
            value, g = lv.value, lv.grad
        else:
            if name not in discriminators:
                raise ValueError(f"{name} enabled but its discriminator is absent")
            value, g = _gan_generator_term(discriminators[name], pred, target)
        _checked(name, value, g)
        terms[name] = value
        total += w * value
        grad += w * g
    return LossReport(total, terms, weights, grad)


def discriminator_step(cfg, discriminators, states, pred, target):
    """One Adam update of every enabled discriminator on the same batch."""
    n = pred.shape[0]
    both = np.concatenate([target, pred], axis=0)
    values = OrderedDict()
    total = 0.0
    for name, w in discriminator_weights(cfg).items():
        disc = discriminators[name]
        logits = disc.forward(both)
        gl = gan_loss_discriminator(relativistic_transform(logits[:n], logits[n:]))
        _checked("d_" + name.split("_", 1)[1], gl.value, None)
        disc.backward(w * np.concatenate([gl.grad_real, gl.grad_fake]))
        adam_step(states[name], disc.parameters(), disc.gradients(), cfg.lr)
        values[name] = gl.value
        total += w * gl.value
    return values, total


# --------------------------------------------------------------------------
# Data


def trim_to_scale(img, r):
    h, w = img.shape[:2]
    return img[: h - h % r, : w - w % r]


def prepare_pairs(dataset, r):
    """Trimmed HR images and their bicubic LR counterparts."""
    hrs = [trim_to_scale(as_image(img), r) for img in dataset]
    lrs = [bicubic_resample(h, h.shape[0] // r, h.shape[1] // r) for h in hrs]
    return hrs, lrs


def sample_batch(rng, dataset, crop_lr, r, batch, lr_images=None):
    """Draw ``batch`` aligned (LR, HR) crops; returns two ``(N, H, W, C)`` arrays.

    Each sample draws an image index, then ``x0``, then ``y0``, uniformly.
    ``lr_images`` may pass precomputed degradations of ``dataset``.
    """
    if not dataset:
        raise ShapeError("dataset is empty")
    if lr_images is None:
        hrs, lrs = prepare_pairs(dataset, r)
    else:
        hrs, lrs = [trim_to_scale(np.asarray(h), r) for h in dataset], lr_images
    for h in hrs:
        if min(h.shape[:2]) < r * crop_lr:
            raise ShapeError(f"image {h.shape[:2]} smaller than HR crop {r * crop_lr}")
    lr_out, hr_out = [], []
    for _ in range(batch):
        k = int(rng.integers(len(hrs)))
        lh, lw = lrs[k].shape[:2]
        x0 = int(rng.integers(lw - crop_lr + 1))
        y0 = int(rng.integers(lh - crop_lr + 1))
        lc, hc = crop_pair(hrs[k], lrs[k], x0, y0, crop_lr, r)
        lr_out.append(lc)
        hr_out.append(hc)
    return np.stack(lr_out), np.stack(hr_out)


def _smooth_noise(rng, size, channels, cells):
    coarse = rng.random((cells, cells, channels))
    return bicubic_resample(coarse, size, size)


def synthetic_image(rng, size=64, channels=3):
    """Toy HR image: smooth colour field, sinusoidal texture and hard-edged shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.6 * _smooth_noise(rng, size, channels, 4)
    for _ in range(3):
        fy, fx = rng.uniform(2, size / 4, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.15, size=channels)
        img += amp * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)[:, :, None]
    for _ in range(4):
        y0, x0 = rng.integers(0, size - 4, size=2)
        hh, ww = rng.integers(4, size // 2, size=2)
        img[y0:y0 + hh, x0:x0 + ww] += rng.uniform(-0.3, 0.3, size=channels)
    img += 0.03 * rng.standard_normal(img.shape)
    return np.clip(img, 0.0, 1.0)


def toy_dataset(n=4, size=64, channels=3, seed=0):
    rng = np.random.default_rng([int(seed), 7])
    return [synthetic_image(rng, size, channels) for _ in range(n)]


# --------------------------------------------------------------------------
# Training loop


@dataclass
class TrainResult:
    config: TrainConfig
    generator: object
    g_state: AdamState
    discriminators: dict
    d_states: dict
    columns: list
    rows: list
    history: list
    pretrain_losses: list


def log_columns(cfg):
    cols = ["iter"] + cfg.enabled_terms() + ["total"]
    gans = list(discriminator_weights(cfg))
    if gans:
        cols += ["d_" + g.split("_", 1)[1] for g in gans] + ["d_total"]
    return cols


def build_models(cfg):
    gen = build_generator(cfg.generator_config, cfg.seed)
    terms = cfg.enabled_terms()
    hr = cfg.hr_crop
    discs = {}
    if "gan_spatial" in terms:
        discs["gan_spatial"] = build_spatial_discriminator(hr, hr, cfg.channels, cfg.seed)
    if "gan_fourier" in terms:
        fcfg = FourierDiscriminatorConfig(hr, hr, cfg.channels, cfg.fourier_disc_layers)
        discs["gan_fourier"] = build_fourier_discriminator(fcfg, cfg.seed)
    extractor = None
    if "feature" in terms:
        extractor = build_feature_extractor(cfg.channels, cfg.feature_seed)
    return gen, discs, extractor


def train(cfg, dataset, on_row=None):
    """Pretrain with L1, then alternate one discriminator and one generator step.

    ``on_row`` is called with each log row dict as it is produced.
    """
    cfg.validate()
    if not dataset:
        raise ShapeError("dataset is empty")
    hrs, lrs = prepare_pairs(dataset, cfg.scale)
    rng = np.random.default_rng([int(cfg.seed), 11])
    gen, discs, extractor = build_models(cfg)
    params = gen.parameters()
    grads = gen.gradients()

    pretrain_losses = []
    if cfg.pretrain_iters:
        pre_state = AdamState.for_params(params)
        for it in range(cfg.pretrain_iters):
            lr_b, hr_b = sample_batch(rng, hrs, cfg.crop_lr, cfg.scale, cfg.batch, lrs)
            pred = gen.forward(lr_b)
            lv = losses.l1_loss(pred, hr_b)
            gen.backward(lv.grad)
            adam_step(pre_state, params, grads, cfg.lr)
            pretrain_losses.append(lv.value)

    g_state = AdamState.for_params(params)
    d_states = {name: AdamState.for_params(d.parameters()) for name, d in discs.items()}
    columns = log_columns(cfg)
    rows, history = [], []
    for it in range(cfg.iters):
        lr_b, hr_b = sample_batch(rng, hrs, cfg.crop_lr, cfg.scale, cfg.batch, lrs)
        try:
            pred = gen.forward(lr_b)
            row = OrderedDict(iter=it)
            if discs:
                d_values, d_total = discriminator_step(cfg, discs, d_states, pred, hr_b)
                history.append(("D", it))
            report = composite_generator_loss(cfg, pred, hr_b, discs, extractor)
            gen.backward(report.grad)
            adam_step(g_state, params, grads, cfg.lr)
            history.append(("G", it))
        except NumericError as exc:
            raise NumericError(f"iteration {it}: {exc}", term=exc.term, iteration=it) from exc
        row.update(report.terms)
        row["total"] = report.total
        if discs:
            for name, v in d_values.items():
                row["d_" + name.split("_", 1)[1]] = v
            row["d_total"] = d_total
        rows.append(row)
        if on_row is not None:
            on_row(row)
    return TrainResult(cfg, gen, g_state, discs, d_states, columns, rows, history,
                       pretrain_losses)


def save_result(result, path):
    """Write the generator and its Adam state as an FSRC checkpoint."""
    save_checkpoint(path, result.generator, result.config.seed,
                    result.config.generator_config.as_counts(), result.g_state.as_dict())


def format_row(columns, row):
    out = []
    for c in columns:
        v = row[c]
        out.append(str(v) if c == "iter" else repr(float(v)))
    return "\t".join(out)


def write_log(path, columns, rows):
    with open(path, "w") as f:
        f.write("\t".join(columns) + "\n")
        for row in rows:
            f.write(format_row(columns, row) + "\n")
