"""Finite-difference checks of every loss and of the network-plus-loss composition.

Test points keep each predicted pixel at least 0.02 bins away from a
histogram bin center. That keeps the piecewise-linear soft histogram
smooth over the finite-difference step.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .losses import (LossWeights, color_loss, composite_loss, histogram_loss, ms_ssim_loss,
                     psnr_loss, smooth_l1)
from .network import NetworkConfig, init_params, llfdisc_forward
from .perceptual_kl import feature_kl_loss, seeded_extractor
from .spectral_kl import fourier_kl_loss

LOSS_TOLERANCE = 1e-4
NETWORK_TOLERANCE = 1e-3


def _smooth_image(rng, shape):
    B, C, H, W = shape
    yy, xx = np.mgrid[0:H, 0:W] / max(H - 1, 1)
    img = np.empty(shape)
    for b in range(B):
        for c in range(C):
            a = rng.uniform(0.3, 0.6)
            img[b, c] = a + rng.uniform(-0.2, 0.2) * xx + rng.uniform(-0.2, 0.2) * yy
            img[b, c] += 0.1 * np.sin(2 * np.pi * (rng.uniform(1, 3) * xx + rng.uniform(1, 3) * yy))
    return np.clip(img, 0.05, 0.95)


def away_from_bin_centers(x, rng, bins=256, margin=0.02):
    """Redraw entries whose position in bin units lies within ``margin`` of an integer."""
    x = x.copy()
    while True:
        t = x * (bins - 1)
        bad = np.abs(t - np.round(t)) < margin
        if not bad.any():
            return x
        x[bad] = np.clip(x[bad] + rng.uniform(-0.5, 0.5, bad.sum()) / (bins - 1), 0.01, 0.99)


def loss_point(seed: int, shape=(1, 3, 22, 22)):
    """(pred, truth) pair: smooth ground truth and a noisy nearby prediction."""
    rng = np.random.default_rng(seed)
    truth = _smooth_image(rng, shape)
    pred = np.clip(truth + rng.normal(0.0, 0.05, shape), 0.01, 0.99)
    return away_from_bin_centers(pred, rng), truth


def loss_targets(extractor=None):
    extractor = extractor or seeded_extractor(42)
    return {
        "smooth_l1": smooth_l1,
        "histogram": histogram_loss,
        "ms_ssim": ms_ssim_loss,
        "psnr": psnr_loss,
        "color": color_loss,
        "vggkl": lambda p, t: feature_kl_loss(p, t, extractor),
        "fkl": lambda p, t: fourier_kl_loss(p, t).total,
        "composite": lambda p, t: composite_loss(p, t, LossWeights(), extractor).tensor,
    }


TARGETS = tuple(loss_targets(object())) + ("network",)


def check_loss(name: str, seed: int, shape=(1, 3, 22, 22)) -> float:
    fn = loss_targets()[name]
    pred, truth = loss_point(seed, shape)
    y = T.Tensor(truth)
    return T.gradient_check(lambda p: fn(p, y), T.Tensor(pred))


NETWORK_COORDS_PER_TENSOR = 8


def _histogram_offsets(out, truth, bins=256, steps=256):
    """Per-channel output shift in [0, 1 bin) that keeps the histogram loss smooth nearby.

    The soft histogram loss has kinks where a pixel crosses a bin center and
    where a bin's predicted count crosses the target count. Network outputs
    cannot be placed one by one the way ``loss_point`` places pixels, but a
    channel-wide shift through the output bias can maximize the distance to
    both kinds of kink. Counts and bin positions share a unit (one pixel moving
    one bin moves one count), so the two margins compare directly.
    """
    shifts = np.arange(steps) / steps / (bins - 1)
    target = T.soft_histogram(truth, bins).data
    best = np.empty(out.shape[1])
    for c in range(out.shape[1]):
        margins = np.empty(steps)
        for k, s in enumerate(shifts):
            moved = out[:, c:c + 1] + s
            t = moved * (bins - 1)
            near_center = np.abs(t - np.round(t)).min()
            diff = T.soft_histogram(moved, bins).data - target[:, c:c + 1]
            used = (diff != 0) | (target[:, c:c + 1] > 0)
            near_tie = np.abs(diff[used]).min(initial=np.inf)
            margins[k] = min(near_center, near_tie)
        best[c] = shifts[margins.argmax()]
    return best


def check_network(seed: int, width: int = 4, size: int = 8,
                  per_tensor: int | None = NETWORK_COORDS_PER_TENSOR) -> float:
    """Composite loss of the network output vs ground truth, checked w.r.t. the parameters.

    ``per_tensor`` random entries of every parameter tensor are checked
    (``None`` checks all of them, which takes several minutes). The output
    conv is randomized, since at init it is zero and every upstream gradient
    would vanish trivially. Its bias is then nudged away from the kinks of
    the histogram term.
    """
    rng = np.random.default_rng(seed)
    params = init_params(NetworkConfig(base_width=width, seed=seed))
    params.out.weight.data = rng.normal(0.0, 0.05, params.out.weight.shape)
    params.out.bias.data = rng.normal(0.0, 0.01, 3)
    truth = _smooth_image(rng, (1, 3, size, size))
    x = T.Tensor(np.clip(0.3 * truth ** 2 + rng.normal(0, 0.01, truth.shape), 0.0, 1.0))
    y = T.Tensor(truth)
    extractor = seeded_extractor(42)
    with T.no_grad():
        out = llfdisc_forward(x, params).data
    params.out.bias.data = params.out.bias.data + _histogram_offsets(out, truth)

    def f(_):
        return composite_loss(llfdisc_forward(x, params), y, LossWeights(), extractor).tensor

    leaves = params.tensors()
    coords = None
    if per_tensor is not None:
        pick = np.random.default_rng(seed + 1000)
        coords = [np.sort(pick.choice(t.data.size, min(per_tensor, t.data.size), replace=False))
                  for t in leaves]
    return T.gradient_check(f, leaves, coords=coords)


def run(name: str, seed: int) -> tuple[float, float]:
    """(max relative error, tolerance) for a named target."""
    if name == "network":
        return check_network(seed), NETWORK_TOLERANCE
    return check_loss(name, seed), LOSS_TOLERANCE
