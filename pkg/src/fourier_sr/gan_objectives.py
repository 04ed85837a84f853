"""Relativistic-average GAN objectives on discriminator logits.

Batch means are differentiated through: gradients returned here are with
respect to the raw real and fake logits.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class RelativisticScores:
    rho: np.ndarray
    phi: np.ndarray


@dataclass
class GanLoss:
    value: float
    grad_real: np.ndarray
    grad_fake: np.ndarray


def softplus(z):
    """``log(1 + exp(z))`` without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relativistic_transform(real, fake):
    real = np.atleast_1d(np.asarray(real, dtype=np.float64))
    fake = np.atleast_1d(np.asarray(fake, dtype=np.float64))
    if real.ndim != 1 or real.shape != fake.shape:
        raise ShapeError(f"logit batches must be equal 1-D shapes, got {real.shape} vs {fake.shape}")
    if real.size == 0:
        raise ShapeError("empty logit batch")
    return RelativisticScores(rho=real - fake.mean(), phi=fake - real.mean())


def _through_transform(d_rho, d_phi):
    # rho_i = s_real_i - mean(s_fake), phi_i = s_fake_i - mean(s_real)
    return d_rho - d_phi.mean(), d_phi - d_rho.mean()


def gan_loss_generator(scores):
    """``mean(-log sigma(phi) - log(1 - sigma(rho)))``."""
    rho, phi = scores.rho, scores.phi
    b = rho.size
    value = float(np.mean(softplus(-phi) + softplus(rho)))
    d_phi = -sigmoid(-phi) / b
    d_rho = sigmoid(rho) / b
    g_real, g_fake = _through_transform(d_rho, d_phi)
    return GanLoss(value, g_real, g_fake)


def gan_loss_discriminator(scores):
    """``mean(-log sigma(rho) - log(1 - sigma(phi)))``."""
    rho, phi = scores.rho, scores.phi
    b = rho.size
    value = float(np.mean(softplus(-rho) + softplus(phi)))
    d_rho = -sigmoid(-rho) / b
    d_phi = sigmoid(phi) / b
    g_real, g_fake = _through_transform(d_rho, d_phi)
    return GanLoss(value, g_real, g_fake)
