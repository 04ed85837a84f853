"""Fourier-space losses, discriminators and a small trainer for image super-resolution."""

from .errors import (
    FormatError,
    FourierSRError,
    MalformedHeaderError,
    NumericError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedMaxvalError,
)
from .gan_objectives import (
    RelativisticScores,
    gan_loss_discriminator,
    gan_loss_generator,
    relativistic_transform,
)
from .losses import (
    LossValue,
    amplitude_loss,
    feature_loss,
    fourier_loss,
    l1_loss,
    phase_diff,
    phase_loss,
)
from .metrics import psnr, ssim
from .spectral import Spectrum, dft2, hann_window, idft2_adjoint, windowed_spectrum
from .tensor_core import bicubic_resample, crop_pair, load_ppm, save_ppm
from .trainer import TrainConfig, adam_step, preset, train

__version__ = "0.1.0"
