"""Fourier KL loss: amplitude and phase maps summarized as 1-D Gaussians.

Each map is reduced to a mean and a population variance (plus 1e-8), and
predicted and true Gaussians are compared with the closed-form KL
divergence. The loss is the average of the amplitude and phase divergences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from . import fourier
from . import tensor as T
from .tensor import ShapeError, Tensor

VARIANCE_EPS = 1e-8


@dataclass
class GaussianParams:
    """Mean and stabilized variance; either floats or Tensors of matching shape."""

    mean: object
    variance: object


@dataclass
class FklBreakdown:
    d_amp: Tensor
    d_pha: Tensor
    total: Tensor

    def as_floats(self) -> tuple[float, float, float]:
        return self.d_amp.item(), self.d_pha.item(), self.total.item()


def spectral_stats(values, scope: str = "channel") -> GaussianParams:
    """Mean and variance + 1e-8 of a (B,C,H,W) map.

    scope="channel" fits one Gaussian per (batch item, channel) -> shape (B,C);
    scope="joint" fits one per batch item across all channels -> shape (B,).
    """
    x = values if isinstance(values, Tensor) else Tensor(values)
    if x.size == 0:
        raise ShapeError("spectral_stats needs a nonempty map")
    if x.ndim != 4:
        raise ShapeError(f"spectral_stats expects (B,C,H,W), got {x.shape}")
    axes = {"channel": (2, 3), "joint": (1, 2, 3)}.get(scope)
    if axes is None:
        raise ValueError(f"unknown scope {scope!r}; use 'channel' or 'joint'")
    mu = T.mean(x, axis=axes, keepdims=True)
    dev = x - mu
    var = T.mean(dev * dev, axis=axes) + VARIANCE_EPS
    return GaussianParams(T.reshape(mu, var.shape), var)


def gaussian_kl(p: GaussianParams, q: GaussianParams):
    """KL(p || q) for 1-D Gaussians; works elementwise on Tensors or on floats."""
    if isinstance(p.variance, Tensor) or isinstance(q.variance, Tensor):
        pv = p.variance if isinstance(p.variance, Tensor) else Tensor(p.variance)
        qv = q.variance if isinstance(q.variance, Tensor) else Tensor(q.variance)
        if (pv.data <= 0).any() or (qv.data <= 0).any():
            raise ValueError("gaussian_kl: variances must be positive")
        dm = T.sub(p.mean, q.mean)
        # log(sigma_q / sigma_p) = 0.5 * (log var_q - log var_p)
        return 0.5 * (T.log(qv) - T.log(pv)) + (pv + dm * dm) / (2.0 * qv) - 0.5
    pv, qv = float(p.variance), float(q.variance)
    if pv <= 0 or qv <= 0:
        raise ValueError(f"gaussian_kl: variances must be positive, got {pv} and {qv}")
    dm = float(p.mean) - float(q.mean)
    return 0.5 * (math.log(qv) - math.log(pv)) + (pv + dm * dm) / (2.0 * qv) - 0.5


def fourier_kl_loss(pred, truth, scope: str = "channel", reverse: bool = False) -> FklBreakdown:
    """Average of amplitude and phase Gaussian KL divergences, D(pred || truth).

    ``reverse=True`` computes D(truth || pred) instead.
    """
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"fourier_kl_loss: pred {pred.shape} vs truth {truth.shape}")
    sp, st = fourier.fft2d(pred), fourier.fft2d(truth)
    terms = []
    for extract in (fourier.amplitude, fourier.phase):
        gp = spectral_stats(extract(sp), scope)
        gt = spectral_stats(extract(st), scope)
        kl = gaussian_kl(gt, gp) if reverse else gaussian_kl(gp, gt)
        terms.append(T.mean(kl))
    d_amp, d_pha = terms
    return FklBreakdown(d_amp, d_pha, (d_amp + d_pha) * 0.5)


def fourier_mse_loss(pred, truth) -> Tensor:
    """Pixel-wise alternative: MSE between amplitude maps plus MSE between phase maps."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"fourier_mse_loss: pred {pred.shape} vs truth {truth.shape}")
    sp, st = fourier.fft2d(pred), fourier.fft2d(truth)
    da = fourier.amplitude(sp) - fourier.amplitude(st)
    dp = fourier.phase(sp) - fourier.phase(st)
    return T.mean(da * da) + T.mean(dp * dp)
