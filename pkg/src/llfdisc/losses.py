"""Base reconstruction losses, loss presets and the weighted composite."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .perceptual_kl import FeatureExtractor, feature_kl_loss, feature_mse_loss, seeded_extractor
from .spectral_kl import fourier_kl_loss, fourier_mse_loss
from .tensor import ShapeError, Tensor

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
PSNR_CAP_DB = 100.0
MSE_FLOOR = 1e-10  # 10 * log10(1 / 1e-10) = 100 dB


def _pair(name, pred, truth):
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"{name}: pred {pred.shape} vs truth {truth.shape}")
    return pred, truth


def smooth_l1(pred, truth, beta: float = 1.0) -> Tensor:
    pred, truth = _pair("smooth_l1", pred, truth)
    d = pred - truth
    small = np.abs(d.data) < beta
    quad = d * d * (0.5 / beta)
    lin = T.absolute(d) - 0.5 * beta
    return T.mean(quad * small + lin * (~small))


def histogram_loss(pred, truth, bins: int = 256) -> Tensor:
    """L1 between per-channel soft histograms normalized to unit mass.

    Evaluated as sum_k s_k (hp_k - ht_k) with s = sign(hp - ht), where each
    side is gathered per pixel. Same value and gradient as the direct form;
    a pixel whose two bins share a sign then contributes a constant exactly.
    """
    pred, truth = _pair("histogram_loss", pred, truth)
    if pred.ndim != 4:
        raise ShapeError(f"histogram_loss expects (B,C,H,W), got {pred.shape}")
    n = pred.shape[2] * pred.shape[3]
    with T.no_grad():
        sign = np.sign(T.soft_histogram(pred.data, bins).data - T.soft_histogram(truth.data, bins).data)
    diff = T.soft_histogram_gather(pred, sign) - T.soft_histogram_gather(truth, sign)
    return T.mean(T.tsum(diff, axis=(2, 3))) * (1.0 / n)


# ---------------------------------------------------------------- SSIM family

def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _blur(x: Tensor, g: np.ndarray) -> Tensor:
    # separable valid-mode Gaussian filter, one channel at a time
    C, k = x.shape[1], g.size
    wy = Tensor(np.broadcast_to(g.reshape(1, 1, k, 1), (C, 1, k, 1)).copy())
    wx = Tensor(np.broadcast_to(g.reshape(1, 1, 1, k), (C, 1, 1, k)).copy())
    return T.conv2d(T.conv2d(x, wy, groups=C), wx, groups=C)


def ssim_terms(x: Tensor, y: Tensor, win: int = 11, sigma: float = 1.5,
               k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0):
    """Mean SSIM and mean contrast-structure term per (batch, channel)."""
    ds, dcs = ssim_deficits(x, y, win, sigma, k1, k2, data_range)
    return 1.0 - ds, 1.0 - dcs


def ssim_deficits(x: Tensor, y: Tensor, win: int = 11, sigma: float = 1.5,
                  k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0):
    """(1 - mean SSIM, 1 - mean CS) per (batch, channel), free of cancellation.

    Second moments are taken about a per-plane constant (variances do not
    depend on it), and both deficits are formed from squared differences
    instead of subtracting numbers close to 1.
    """
    g = gaussian_window(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    shift = Tensor(0.5 * (x.data.mean(axis=(2, 3), keepdims=True) + y.data.mean(axis=(2, 3), keepdims=True)))
    xs, ys = x - shift, y - shift
    d = x - y
    mx, my, md = _blur(xs, g), _blur(ys, g), _blur(d, g)
    sxx = _blur(xs * xs, g) - mx * mx
    syy = _blur(ys * ys, g) - my * my
    sdd = _blur(d * d, g) - md * md  # sxx + syy - 2 sxy
    ux, uy = mx + shift, my + shift
    dl = md * md / (ux * ux + uy * uy + c1)
    dcs = sdd / (sxx + syy + c2)
    return T.mean(dl + dcs - dl * dcs, axis=(2, 3)), T.mean(dcs, axis=(2, 3))


def ssim(x, y, win: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> Tensor:
    """Single-scale SSIM averaged over batch and channels."""
    x, y = _pair("ssim", x, y)
    win = fit_window(min(x.shape[2:]), win)
    ds, _ = ssim_deficits(x, y, win, sigma, k1, k2, data_range)
    return 1.0 - T.mean(ds)


def fit_window(side: int, win: int = 11) -> int:
    """Largest odd window <= ``win`` that fits in ``side`` pixels."""
    if side >= win:
        return win
    w = side if side % 2 else side - 1
    if w < 3:
        raise ShapeError(f"image side {side} is too small for SSIM (needs >= 3 pixels)")
    return w


def ms_ssim_scales(side: int, win: int = 11, max_scales: int = 5) -> int:
    m = 1
    while m < max_scales and side >= 2 ** m * win:
        m += 1
    return m


def _halve(x: Tensor) -> Tensor:
    C = x.shape[1]
    return T.conv2d(x, Tensor(np.full((C, 1, 2, 2), 0.25)), stride=2, groups=C)


def _ms_ssim_log(x, y, weights, win, sigma, k1, k2, data_range):
    # per-plane log MS-SSIM, or None with the single-scale deficit
    side = min(x.shape[2:])
    win = fit_window(side, win)
    m = min(ms_ssim_scales(side, win, len(weights)), len(weights))
    w = np.asarray(weights[:m], dtype=np.float64)
    w = w / w.sum()
    if m == 1:
        ds, _ = ssim_deficits(x, y, win, sigma, k1, k2, data_range)
        return None, ds
    total = None
    for i in range(m):
        ds, dcs = ssim_deficits(x, y, win, sigma, k1, k2, data_range)
        deficit = ds if i == m - 1 else dcs
        # factor = max(1 - deficit, 1e-8)
        capped = -T.clamp_min(-deficit, -(1.0 - _FACTOR_FLOOR))
        term = T.log1p(-capped) * float(w[i])
        total = term if total is None else total + term
        if i < m - 1:
            x, y = _halve(x), _halve(y)
    return total, None


_FACTOR_FLOOR = 1e-8


def ms_ssim(x, y, weights=MS_SSIM_WEIGHTS, win: int = 11, sigma: float = 1.5,
            k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> Tensor:
    """Multi-scale SSIM; uses as many scales as the image size allows.

    With one scale this is plain SSIM (may be negative). With several, the
    per-scale factors are floored at 1e-8 before the fractional powers.
    """
    x, y = _pair("ms_ssim", x, y)
    log_val, deficit = _ms_ssim_log(x, y, weights, win, sigma, k1, k2, data_range)
    if log_val is None:
        return 1.0 - T.mean(deficit)
    return T.mean(T.exp(log_val))


def ms_ssim_loss(pred, truth, weights=MS_SSIM_WEIGHTS, win: int = 11, sigma: float = 1.5,
                 k1: float = 0.01, k2: float = 0.03, data_range: float = 1.0) -> Tensor:
    """1 - MS-SSIM, evaluated directly from the per-scale deficits."""
    pred, truth = _pair("ms_ssim_loss", pred, truth)
    log_val, deficit = _ms_ssim_log(pred, truth, weights, win, sigma, k1, k2, data_range)
    if log_val is None:
        return T.mean(deficit)
    return T.mean(-T.expm1(log_val))


def psnr_loss(pred, truth, target_db: float = 40.0) -> Tensor:
    """(target - PSNR) / target, clamped below at 0."""
    pred, truth = _pair("psnr_loss", pred, truth)
    d = pred - truth
    mse = T.clamp_min(T.mean(d * d), MSE_FLOOR)
    psnr = T.log(mse) * (-10.0 / math.log(10.0))
    return T.clamp_min((target_db - psnr) * (1.0 / target_db), 0.0)


def color_loss(pred, truth, eps: float = 1e-8) -> Tensor:
    """1 - cosine similarity of the mean RGB vectors, averaged over the batch.

    Computed as |u - v|^2 / 2 on the normalized vectors to avoid cancellation;
    when a norm hits the ``eps`` floor the exact remainder is added back.
    """
    pred, truth = _pair("color_loss", pred, truth)
    if pred.ndim != 4 or pred.shape[1] != 3:
        raise ShapeError(f"color_loss needs 3-channel images, got shape {pred.shape}")
    mp, mt = T.mean(pred, axis=(2, 3)), T.mean(truth, axis=(2, 3))
    sp, st = T.tsum(mp * mp, axis=1, keepdims=True), T.tsum(mt * mt, axis=1, keepdims=True)
    u = mp / T.sqrt(T.clamp_min(sp, eps * eps))
    v = mt / T.sqrt(T.clamp_min(st, eps * eps))
    d = u - v
    per_item = T.tsum(d * d, axis=1) * 0.5
    floored = ((sp.data < eps * eps) | (st.data < eps * eps)).reshape(-1)
    if floored.any():
        rest = 1.0 - 0.5 * (T.tsum(u * u, axis=1) + T.tsum(v * v, axis=1))
        per_item = per_item + rest * Tensor(floored.astype(np.float64))
    return T.mean(per_item)


# ---------------------------------------------------------------- composite

@dataclass(frozen=True)
class LossWeights:
    """Composite weights. Seven training terms plus two comparison-only terms."""

    s: float = 1.0
    hist: float = 0.06
    msssim: float = 0.05
    psnr: float = 0.5
    color: float = 0.0083
    vggkl: float = 0.15
    fkl: float = 0.1
    f: float = 0.0    # MSE on amplitude/phase maps
    vgg: float = 0.0  # MSE on extracted features

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")

    def scaled(self, factor: float) -> "LossWeights":
        return LossWeights(**{k: v * factor for k, v in asdict(self).items()})


TERMS = tuple(f.name for f in fields(LossWeights))

_BASE = dict(vggkl=0.0, fkl=0.0)
PRESETS = {
    "base": LossWeights(**_BASE),
    "base+f": LossWeights(**_BASE, f=0.1),
    "base+fkl": LossWeights(vggkl=0.0),
    "base+vgg": LossWeights(**_BASE, vgg=0.15),
    "base+vggkl": LossWeights(fkl=0.0),
    "full": LossWeights(),
}


def preset(name: str, **overrides) -> LossWeights:
    try:
        w = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return replace(w, **overrides) if overrides else w


@dataclass(frozen=True)
class LossSettings:
    smooth_l1_beta: float = 1.0
    hist_bins: int = 256
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    psnr_target_db: float = 40.0
    fkl_scope: str = "channel"
    fkl_reverse: bool = False


@dataclass
class LossReport:
    l_s: float
    l_hist: float
    l_msssim: float
    l_psnr: float
    l_color: float
    l_vggkl: float
    l_fkl: float
    l_f: float
    l_vgg: float
    composite: float
    tensor: Tensor | None = field(default=None, repr=False, compare=False)

    CSV_FIELDS = ("l_s", "l_hist", "l_msssim", "l_psnr", "l_color", "l_vggkl", "l_fkl",
                  "l_f", "l_vgg", "composite")

    def row(self) -> list[float]:
        return [getattr(self, k) for k in self.CSV_FIELDS]


def _term_fns(settings: LossSettings, extractor: FeatureExtractor):
    st = settings
    return {
        "s": lambda p, t: smooth_l1(p, t, st.smooth_l1_beta),
        "hist": lambda p, t: histogram_loss(p, t, st.hist_bins),
        "msssim": lambda p, t: ms_ssim_loss(p, t, win=st.ssim_window, sigma=st.ssim_sigma,
                                            k1=st.ssim_k1, k2=st.ssim_k2),
        "psnr": lambda p, t: psnr_loss(p, t, st.psnr_target_db),
        "color": color_loss,
        "vggkl": lambda p, t: feature_kl_loss(p, t, extractor),
        "fkl": lambda p, t: fourier_kl_loss(p, t, st.fkl_scope, st.fkl_reverse).total,
        "f": fourier_mse_loss,
        "vgg": lambda p, t: feature_mse_loss(p, t, extractor),
    }


def composite_loss(pred, truth, weights: LossWeights | None = None,
                   extractor: FeatureExtractor | None = None,
                   settings: LossSettings | None = None) -> LossReport:
    """Evaluate every sub-loss and their weighted sum.

    Terms with zero weight are still reported but computed without a graph.
    ``report.tensor`` is the differentiable composite.
    """
    weights = weights or LossWeights()
    extractor = extractor or seeded_extractor(42)
    settings = settings or LossSettings()
    pred, truth = _pair("composite_loss", pred, truth)
    values, total = {}, None
    for name, fn in _term_fns(settings, extractor).items():
        w = getattr(weights, name)
        try:
            if w > 0:
                v = fn(pred, truth)
                contrib = v * w
                total = contrib if total is None else total + contrib
            else:
                with T.no_grad():
                    v = fn(pred, truth)
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"{name} loss: {exc}") from exc
        values[name] = v.item()
    if total is None:
        total = T.mul(T.tsum(pred), 0.0)
    return LossReport(*(values[k] for k in TERMS), composite=total.item(), tensor=total)
