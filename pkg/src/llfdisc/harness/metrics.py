"""Paired evaluation metrics: PSNR (dB, capped at 100) and single-scale SSIM."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..losses import MSE_FLOOR, PSNR_CAP_DB, ssim


@dataclass
class MetricsRow:
    id: str
    psnr_db: float
    ssim: float


def psnr_db(pred, truth) -> float:
    pred, truth = np.asarray(pred, np.float64), np.asarray(truth, np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"psnr: shapes differ: {pred.shape} vs {truth.shape}")
    mse = float(np.mean((pred - truth) ** 2))
    if mse <= MSE_FLOOR:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(1.0 / mse))


def _as_batch(x):
    x = np.asarray(x, np.float64)
    if x.ndim == 3:
        x = x[None]
    return x


def ssim_value(pred, truth) -> float:
    """SSIM with an 11x11 sigma-1.5 Gaussian window, K=(0.01, 0.03), range 1; images (C,H,W) or (B,C,H,W)."""
    pred, truth = _as_batch(pred), _as_batch(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"ssim: shapes differ: {pred.shape} vs {truth.shape}")
    with T.no_grad():
        return ssim(T.Tensor(pred), T.Tensor(truth)).item()


def metrics(pred, truth, id: str = "") -> MetricsRow:
    return MetricsRow(id, psnr_db(pred, truth), ssim_value(pred, truth))
