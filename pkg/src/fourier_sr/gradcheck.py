"""Central finite-difference checks for every analytic gradient in the package."""

from dataclasses import dataclass

import numpy as np

from . import losses
from .gan_objectives import gan_loss_discriminator, gan_loss_generator, relativistic_transform
from .nets import (
    AvgPool2,
    Conv3x3,
    Dense,
    FourierDiscriminatorConfig,
    GeneratorConfig,
    LeakyReLU,
    PixelShuffle,
    ResidualBlock,
    SpectrumFeatures,
    build_feature_extractor,
    build_fourier_discriminator,
    build_generator,
    build_spatial_discriminator,
)
from .spectral import windowed_spectrum

STEP = 1e-5
TOLERANCE = 1e-4
MIN_FRACTION = 0.99
# denominator floor of the relative error, so exact zeros on both sides count as agreement
FLOOR = 1e-8


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    fraction_ok: float
    coords: int
    passed: bool
    excluded: int = 0


def numeric_grad(f, x, coords=None, h=STEP, kinks=None):
    """Central differences of scalar ``f`` at ``x`` for flat indices ``coords``.

    ``kinks(x)`` may return the sign pattern of every non-differentiable
    term; coordinates whose +h and -h evaluations disagree on it straddle a
    kink and are flagged in the returned mask.
    """
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    coords = np.arange(flat.size) if coords is None else np.asarray(coords)
    out = np.empty(len(coords))
    crossed = np.zeros(len(coords), dtype=bool)
    for k, i in enumerate(coords):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        sp = None if kinks is None else kinks(x)
        flat[i] = orig - h
        fm = f(x)
        if kinks is not None:
            crossed[k] = np.any(kinks(x) != sp)
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * h)
    return (out, crossed) if kinks is not None else out


def relative_errors(analytic, numeric, floor=FLOOR):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def compare(name, analytic, numeric, tol=TOLERANCE, min_fraction=MIN_FRACTION, skip=None):
    err = relative_errors(analytic, numeric)
    excluded = 0
    if skip is not None:
        excluded = int(np.sum(skip))
        err = err[~skip]
    frac = float(np.mean(err < tol)) if err.size else 1.0
    return CheckResult(name, float(err.max()) if err.size else 0.0, frac, err.size,
                       frac >= min_fraction, excluded)


def check_function(name, f, x, analytic, coords=None, tol=TOLERANCE, kinks=None):
    """Compare ``analytic`` (full gradient array) with central differences of ``f``."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if coords is not None:
        analytic = analytic[coords]
    if kinks is None:
        return compare(name, analytic, numeric_grad(f, x, coords), tol)
    numeric, crossed = numeric_grad(f, x, coords, kinks=kinks)
    return compare(name, analytic, numeric, tol, skip=crossed)


def _sample(rng, n, limit):
    return None if n <= limit else np.sort(rng.choice(n, size=limit, replace=False))


def check_layer(name, layer, x, rng, max_param_coords=200, corrupt=False):
    """Check input and parameter gradients of ``sum(layer(x) * R)`` for random ``R``."""
    y = layer.forward(x)
    weight = rng.standard_normal(y.shape)

    def objective(inp):
        return float(np.sum(layer.forward(inp) * weight))

    layer.forward(x)
    dx = layer.backward(weight)
    grads = {k: g.copy() for k, _, g in layer.named_params()}
    if corrupt:
        dx = dx * 1.5
    results = [check_function(f"{name}/input", objective, x, dx)]
    for pname, p, _ in list(layer.named_params()):
        coords = _sample(rng, p.size, max_param_coords)
        saved = p.copy()

        def param_objective(value, p=p):
            p[...] = value
            return objective(x)

        res = check_function(f"{name}/{pname}", param_objective, saved, grads[pname], coords)
        p[...] = saved
        results.append(res)
    return results


def merge(name, results):
    worst = max(r.max_rel_error for r in results)
    total = sum(r.coords for r in results)
    ok = sum(r.fraction_ok * r.coords for r in results)
    return CheckResult(name, worst, ok / total, total, all(r.passed for r in results),
                       sum(r.excluded for r in results))


# --------------------------------------------------------------------------
# Suites


def check_losses(rng, size=8, channels=3, corrupt=None):
    pred = rng.random((size, size, channels))
    target = rng.random((size, size, channels))
    extractor = build_feature_extractor(channels, seed=int(rng.integers(2 ** 31)))

    def amp_only(p):
        return losses.fourier_loss_terms(p, target)[0]

    def phase_only(p):
        return losses.fourier_loss_terms(p, target)[1]

    target_spec = windowed_spectrum(target)

    def l1_kinks(p):
        return np.sign(p - target)

    def amp_kinks(p):
        return np.sign(windowed_spectrum(p).amplitude - target_spec.amplitude)

    def phase_kinks(p):
        return np.sign(losses.wrap_angle(windowed_spectrum(p).phase - target_spec.phase))

    def fourier_kinks(p):
        return np.concatenate([amp_kinks(p).ravel(), phase_kinks(p).ravel()])

    target_feat = extractor.forward(target[None])

    def feature_kinks(p):
        # leaky ReLU input signs inside the extractor, then the L1 sign of the features
        signs = []
        x = p[None]
        for layer in extractor.layers:
            if isinstance(layer, LeakyReLU):
                signs.append(np.sign(x).ravel())
            x = layer.forward(x)
        signs.append(np.sign(x - target_feat).ravel())
        return np.concatenate(signs)

    cases = [
        ("loss/l1", lambda p: losses.l1_loss(p, target), l1_kinks),
        ("loss/fourier_amplitude", amp_only, amp_kinks),
        ("loss/fourier_phase", phase_only, phase_kinks),
        ("loss/fourier", lambda p: losses.fourier_loss(p, target), fourier_kinks),
        ("loss/feature", lambda p: losses.feature_loss(p, target, extractor),
         feature_kinks),
    ]
    results = []
    for name, fn, kinks in cases:
        grad = fn(pred).grad
        if corrupt == name:
            grad = grad * 1.5
        results.append(check_function(name, lambda p, fn=fn: fn(p).value, pred, grad,
                                      kinks=kinks))
    return results


def check_gan(rng, batch=4, corrupt=None):
    real = rng.standard_normal(batch)
    fake = rng.standard_normal(batch)
    results = []
    for name, fn in (("gan/generator", gan_loss_generator),
                     ("gan/discriminator", gan_loss_discriminator)):
        gl = fn(relativistic_transform(real, fake))
        g_real, g_fake = gl.grad_real, gl.grad_fake
        if corrupt == name:
            g_real = g_real * 1.5
        r1 = check_function(name + "/real", lambda r: fn(relativistic_transform(r, fake)).value,
                            real, g_real, tol=1e-6)
        r2 = check_function(name + "/fake", lambda f: fn(relativistic_transform(real, f)).value,
                            fake, g_fake, tol=1e-6)
        results.append(merge(name, [r1, r2]))
    return results


def _discriminator_check(name, disc, img, corrupt=False):
    def objective(x):
        return float(disc.forward(x[None])[0])

    disc.forward(img[None])
    dx = disc.backward(np.ones(1))[0]
    if corrupt:
        dx = dx * 1.5
    return check_function(name, objective, img, dx)


def check_layers(rng, size=8, corrupt=None):
    def c(name):
        return corrupt == name

    layers = [
        ("layer/conv3x3", Conv3x3(2, 3), rng.standard_normal((2, 5, 5, 2))),
        ("layer/dense", Dense(6, 4), rng.standard_normal((3, 6))),
        ("layer/leaky_relu", LeakyReLU(), rng.standard_normal((2, 4, 4, 3))),
        ("layer/pixel_shuffle", PixelShuffle(2), rng.standard_normal((1, 2, 3, 8))),
        ("layer/avg_pool", AvgPool2(), rng.standard_normal((1, 4, 4, 2))),
        ("layer/residual_block", ResidualBlock(3), rng.standard_normal((1, 4, 4, 3))),
        ("layer/spectrum_features", SpectrumFeatures(size, size, 1),
         rng.random((1, size, size, 1))),
    ]
    results = []
    for name, layer, x in layers:
        for leaf in layer.leaf_layers():
            leaf.reset(rng)
        results.append(merge(name, check_layer(name, layer, x, rng, corrupt=c(name))))

    gen = build_generator(GeneratorConfig(channels=1, base_channels=4, num_blocks=1, scale=2),
                          seed=int(rng.integers(2 ** 31)))
    results.append(merge("net/generator",
                         check_layer("net/generator", gen, rng.random((1, 4, 4, 1)), rng,
                                     max_param_coords=30, corrupt=c("net/generator"))))
    stages = min(4, int(np.log2(size)) - 1)
    sdisc = build_spatial_discriminator(size, size, 1, seed=int(rng.integers(2 ** 31)),
                                        num_stages=stages)
    results.append(_discriminator_check("net/spatial_discriminator", sdisc,
                                        rng.random((size, size, 1)),
                                        c("net/spatial_discriminator")))
    for layers_n in (5, 3):
        name = f"net/fourier_discriminator_{layers_n}"
        fdisc = build_fourier_discriminator(
            FourierDiscriminatorConfig(size, size, 1, layers_n), seed=int(rng.integers(2 ** 31)))
        results.append(_discriminator_check(name, fdisc, rng.random((size, size, 1)), c(name)))
    return results


def run_all(seed=0, size=8, corrupt=None):
    """Every gradient check; ``corrupt`` names a component whose analytic gradient is skewed."""
    rng = np.random.default_rng(seed)
    return (check_losses(rng, size, corrupt=corrupt) + check_gan(rng, corrupt=corrupt)
            + check_layers(rng, size, corrupt=corrupt))
