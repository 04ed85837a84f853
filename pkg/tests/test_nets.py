import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fourier_sr.errors import FormatError, MalformedHeaderError, ShapeError, TruncatedPayloadError
from fourier_sr.gradcheck import check_layer, run_all
from fourier_sr.nets import (
    AvgPool2,
    Conv3x3,
    Dense,
    FourierDiscriminatorConfig,
    GeneratorConfig,
    LeakyReLU,
    PixelShuffle,
    ResidualBlock,
    SpectrumFeatures,
    build_fourier_discriminator,
    build_generator,
    build_spatial_discriminator,
    decode_checkpoint,
    encode_checkpoint,
    fourier_discriminator_forward,
    generator_forward,
    leaky_relu,
    load_checkpoint,
    load_generator,
    pixel_shuffle,
    pixel_unshuffle,
    save_checkpoint,
    spatial_discriminator_forward,
)

from oracles import naive_conv3x3


def test_conv_identity_kernel(rng):
    conv = Conv3x3(3, 3)
    for c in range(3):
        conv.params["w"][1, 1, c, c] = 1.0
    x = rng.standard_normal((2, 5, 4, 3))
    np.testing.assert_array_equal(conv.forward(x), x)


def test_conv_bias_only(rng):
    conv = Conv3x3(2, 3)
    conv.params["b"][...] = [1.0, -2.0, 0.5]
    y = conv.forward(rng.standard_normal((1, 4, 4, 2)))
    np.testing.assert_array_equal(y[0, 2, 3], [1.0, -2.0, 0.5])


def test_conv_matches_naive(rng):
    conv = Conv3x3(2, 3)
    conv.reset(rng)
    conv.params["b"][...] = rng.standard_normal(3)
    x = rng.standard_normal((5, 5, 2))
    expected = naive_conv3x3(x, conv.params["w"], conv.params["b"])
    np.testing.assert_allclose(conv.forward(x[None])[0], expected, atol=1e-12)


def test_conv_shape_error():
    with pytest.raises(ShapeError):
        Conv3x3(2, 3).forward(np.zeros((1, 4, 4, 3)))


def test_pixel_shuffle_small_case():
    x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4)
    np.testing.assert_array_equal(pixel_shuffle(x, 2)[0, :, :, 0], [[1, 2], [3, 4]])


def test_pixel_shuffle_index_oracle(rng):
    x = rng.standard_normal((1, 2, 3, 8))
    r = 2
    out = pixel_shuffle(x, r)[0]
    for h in range(2):
        for w in range(3):
            for c in range(2):
                for i in range(r):
                    for j in range(r):
                        assert out[r * h + i, r * w + j, c] == x[0, h, w, c * r * r + i * r + j]


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 4), w=st.integers(1, 4), c=st.integers(1, 3), r=st.integers(2, 3))
def test_pixel_shuffle_inverse(h, w, c, r):
    x = np.arange(h * w * c * r * r, dtype=float).reshape(1, h, w, c * r * r)
    np.testing.assert_array_equal(pixel_unshuffle(pixel_shuffle(x, r), r), x)


def test_pixel_shuffle_divisibility():
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((1, 2, 2, 6)), 2)


def test_leaky_relu_values():
    assert leaky_relu(0.0) == 0.0
    assert leaky_relu(-1.0) == pytest.approx(-0.2)
    assert leaky_relu(3.0) == 3.0


def test_dense_matches_matvec(rng):
    d = Dense(5, 3)
    d.reset(rng)
    d.params["b"][...] = rng.standard_normal(3)
    x = rng.standard_normal((2, 5))
    expected = [[sum(x[n, i] * d.params["w"][i, o] for i in range(5)) + d.params["b"][o]
                 for o in range(3)] for n in range(2)]
    np.testing.assert_allclose(d.forward(x), expected, atol=1e-12)


@pytest.mark.parametrize("name, layer, shape", [
    ("conv", Conv3x3(2, 3), (2, 5, 5, 2)),
    ("dense", Dense(6, 4), (3, 6)),
    ("lrelu", LeakyReLU(), (2, 3, 3, 2)),
    ("shuffle", PixelShuffle(2), (1, 2, 3, 8)),
    ("pool", AvgPool2(), (1, 4, 6, 2)),
    ("residual", ResidualBlock(2), (1, 4, 4, 2)),
    ("spectrum", SpectrumFeatures(8, 8, 2), (2, 8, 8, 2)),
])
def test_layer_gradients(rng, name, layer, shape):
    for leaf in layer.leaf_layers():
        leaf.reset(rng)
    for res in check_layer(name, layer, rng.standard_normal(shape), rng):
        assert res.passed, res


def test_generator_zero_params_and_shape(rng):
    gen = build_generator(GeneratorConfig(), seed=1)
    y = generator_forward(gen, rng.random((16, 16, 3)))
    assert y.shape == (64, 64, 3)
    gen.zero_parameters()
    assert np.all(generator_forward(gen, rng.random((16, 16, 3))) == 0)


@pytest.mark.parametrize("scale, n_shuffle", [(2, 1), (4, 2), (8, 3), (3, 1)])
def test_generator_scale(rng, scale, n_shuffle):
    gen = build_generator(GeneratorConfig(channels=1, base_channels=4, num_blocks=1,
                                          scale=scale), seed=0)
    assert sum(isinstance(layer, PixelShuffle) for layer in gen.layers) == n_shuffle
    assert gen.forward(rng.random((2, 6, 4, 1))).shape == (2, 6 * scale, 4 * scale, 1)


def test_generator_parameter_budget():
    assert build_generator().num_params() < 100_000


def test_initialization_is_deterministic(rng):
    a = build_generator(seed=42)
    b = build_generator(seed=42)
    c = build_generator(seed=43)
    for (na, pa), (nb, pb) in zip(a.parameters().items(), b.parameters().items()):
        assert na == nb and pa.tobytes() == pb.tobytes()
    assert any(pa.tobytes() != pc.tobytes()
               for pa, pc in zip(a.parameters().values(), c.parameters().values())
               if pa.any())
    x = rng.random((16, 16, 3))
    assert generator_forward(a, x).tobytes() == generator_forward(b, x).tobytes()


def test_glorot_bounds():
    gen = build_generator(GeneratorConfig(base_channels=8), seed=3)
    w = gen.parameters()["0.w"]
    bound = np.sqrt(6.0 / (9 * 3 + 9 * 8))
    assert np.abs(w).max() <= bound and np.abs(w).max() > 0.8 * bound
    assert np.all(gen.parameters()["0.b"] == 0)


def test_fourier_discriminator_dims_and_zero(rng):
    cfg = FourierDiscriminatorConfig(64, 64, 3)
    assert cfg.input_dim == 12288
    small = FourierDiscriminatorConfig(8, 8, 1)
    disc = build_fourier_discriminator(small, seed=0)
    assert isinstance(fourier_discriminator_forward(disc, rng.random((8, 8, 1))), float)
    disc.zero_parameters()
    assert fourier_discriminator_forward(disc, rng.random((8, 8, 1))) == 0.0
    with pytest.raises(ShapeError):
        disc.forward(rng.random((1, 8, 6, 1)))


def test_fourier_discriminator_layer_counts():
    for layers, widths in ((5, (1024, 512, 256, 128)), (3, (512, 128))):
        disc = build_fourier_discriminator(FourierDiscriminatorConfig(8, 8, 1, layers))
        dense = [layer for layer in disc.layers if isinstance(layer, Dense)]
        assert len(dense) == layers
        assert tuple(d.nout for d in dense[:-1]) == widths and dense[-1].nout == 1
    full = build_fourier_discriminator(FourierDiscriminatorConfig(64, 64, 3))
    assert full.num_params() < 15_000_000
    with pytest.raises(ShapeError):
        FourierDiscriminatorConfig(8, 8, 1, 4).widths()


def test_spatial_discriminator(rng):
    disc = build_spatial_discriminator(64, 64, 3, seed=0)
    assert disc.grid == (4, 4)
    assert disc.forward(rng.random((2, 64, 64, 3))).shape == (2,)
    disc.zero_parameters()
    assert spatial_discriminator_forward(disc, rng.random((64, 64, 3))) == 0.0
    with pytest.raises(ShapeError):
        build_spatial_discriminator(24, 24, 3)


def test_network_gradient_checks():
    results = [r for r in run_all(seed=3, size=8) if r.name.startswith("net/")]
    assert len(results) == 4
    assert all(r.passed for r in results), results


def test_checkpoint_round_trip(tmp_path, rng):
    gen = build_generator(GeneratorConfig(base_channels=4, num_blocks=1), seed=9)
    params = gen.parameters()
    opt = {"t": 17, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
           "m": {k: rng.standard_normal(p.shape) for k, p in params.items()},
           "v": {k: rng.random(p.shape) for k, p in params.items()}}
    path = tmp_path / "g.fsrc"
    save_checkpoint(path, gen, 9, gen.config.as_counts(), opt)
    ck = load_checkpoint(path)
    assert ck.seed == 9 and ck.config == (3, 4, 1, 4)
    for k, p in params.items():
        assert ck.params[k].tobytes() == p.tobytes()
        assert ck.optimizer["m"][k].tobytes() == opt["m"][k].tobytes()
        assert ck.optimizer["v"][k].tobytes() == opt["v"][k].tobytes()
    assert ck.optimizer["t"] == 17
    loaded, _ = load_generator(path)
    x = rng.random((8, 8, 3))
    assert loaded.forward(x).tobytes() == gen.forward(x).tobytes()
    assert path.read_bytes()[:4] == b"FSRC"


def test_checkpoint_errors():
    gen = build_generator(GeneratorConfig(base_channels=4, num_blocks=1))
    data = encode_checkpoint(gen.parameters(), 0, gen.config.as_counts())
    with pytest.raises(MalformedHeaderError):
        decode_checkpoint(b"XXXX" + data[4:])
    with pytest.raises(TruncatedPayloadError):
        decode_checkpoint(data[:-10])
    other = build_generator(GeneratorConfig(base_channels=4, num_blocks=2))
    with pytest.raises(FormatError):
        other.load_parameters(decode_checkpoint(data).params)
