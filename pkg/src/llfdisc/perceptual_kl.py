"""Feature-distribution KL loss with a pluggable, fixed feature extractor.

Features of prediction and ground truth are flattened per batch item to
length C*H*W and turned into distributions with a softmax. The loss is
sum p_pred * log(p_pred / p_true), averaged over the batch. Logarithms are
taken of max(p, 1e-8).

Extractor weight file layout (all little-endian; see docs/formats.md)::

    magic  b"LLFX" | version u32 (=1) | layer count u32
    per layer: out_c, in_c, kh, kw, stride, padding, activation code (u32 x7), slope f64
    then per layer: weight (out_c*in_c*kh*kw f64), bias (out_c f64)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

LOG_FLOOR = 1e-8
_MAGIC = b"LLFX"
_VERSION = 1
_ACT_CODES = {"identity": 0, "relu": 1, "leaky_relu": 2, "sigmoid": 3, "tanh": 4}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class ExtractorFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FeatureLayer:
    weight: np.ndarray  # (out_c, in_c, kh, kw)
    bias: np.ndarray    # (out_c,)
    stride: int = 2
    padding: int = 1
    activation: str = "leaky_relu"
    slope: float = 0.01


@dataclass(frozen=True, eq=False)
class FeatureExtractor:
    """Fixed stack of conv layers; never updated by training."""

    layers: tuple[FeatureLayer, ...]
    provenance: str = "seeded-random"
    _frozen: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def in_channels(self) -> int:
        return self.layers[0].weight.shape[1]

    def _tensors(self, i):
        # cached constant tensors so repeated calls don't re-copy weights
        if i not in self._frozen:
            layer = self.layers[i]
            self._frozen[i] = (Tensor(layer.weight), Tensor(layer.bias))
        return self._frozen[i]


def seeded_extractor(seed: int = 42, channels=(3, 16, 32, 64), slope: float = 0.01) -> FeatureExtractor:
    """He-initialized 3x3 stride-2 conv stack with zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for cin, cout in zip(channels[:-1], channels[1:]):
        std = np.sqrt(2.0 / (cin * 9))
        w = rng.normal(0.0, std, size=(cout, cin, 3, 3))
        layers.append(FeatureLayer(w, np.zeros(cout), 2, 1, "leaky_relu", slope))
    return FeatureExtractor(tuple(layers), "seeded-random")


def extract_features(image, extractor: FeatureExtractor) -> Tensor:
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim != 4 or x.shape[1] != extractor.in_channels:
        raise ShapeError(f"extractor expects {extractor.in_channels} input channels, got image shape {x.shape}")
    for i, layer in enumerate(extractor.layers):
        w, b = extractor._tensors(i)
        x = T.conv2d(x, w, b, stride=layer.stride, padding=layer.padding)
        if layer.activation != "identity":
            x = T.activation(x, layer.activation, layer.slope)
    return x


def to_distribution(features) -> Tensor:
    """Softmax over each batch item's flattened features -> (B, C*H*W)."""
    f = features if isinstance(features, Tensor) else Tensor(features)
    if f.size == 0:
        raise ShapeError("to_distribution needs nonempty features")
    return T.softmax_lastdim(T.reshape(f, (f.shape[0], -1)))


def discrete_kl(p: Tensor, q: Tensor) -> Tensor:
    """sum p * (log p - log q) per row, floors at 1e-8 inside the logs, batch-averaged."""
    lp = T.log(T.clamp_min(p, LOG_FLOOR))
    lq = T.log(T.clamp_min(q, LOG_FLOOR))
    return T.mean(T.tsum(p * (lp - lq), axis=-1))


def _logit_kl(fp: Tensor, fq: Tensor) -> Tensor:
    # KL(softmax fp || softmax fq) = sum p d - log sum q e^d with d = fp - fq,
    # written with expm1/log1p so nearby distributions lose no digits
    d = fp - fq
    p, q = T.softmax_lastdim(fp), T.softmax_lastdim(fq)
    return T.mean(T.tsum(p * d, axis=-1) - T.log1p(T.tsum(q * T.expm1(d), axis=-1)))


def feature_kl_loss(pred, truth, extractor: FeatureExtractor) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"feature_kl_loss: pred {pred.shape} vs truth {truth.shape}")
    fp = extract_features(pred, extractor)
    fq = extract_features(truth, extractor)
    fp, fq = T.reshape(fp, (fp.shape[0], -1)), T.reshape(fq, (fq.shape[0], -1))
    p, q = to_distribution(fp), to_distribution(fq)
    if min(p.data.min(), q.data.min()) >= LOG_FLOOR:
        return _logit_kl(fp, fq)
    return discrete_kl(p, q)


def feature_mse_loss(pred, truth, extractor: FeatureExtractor) -> Tensor:
    """Conventional perceptual loss: MSE between raw extracted features."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    truth = truth if isinstance(truth, Tensor) else Tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"feature_mse_loss: pred {pred.shape} vs truth {truth.shape}")
    d = extract_features(pred, extractor) - extract_features(truth, extractor)
    return T.mean(d * d)


# ---------------------------------------------------------------- weight files

def save_extractor(extractor: FeatureExtractor, path) -> None:
    parts = [_MAGIC, struct.pack("<II", _VERSION, len(extractor.layers))]
    for layer in extractor.layers:
        oc, ic, kh, kw = layer.weight.shape
        parts.append(struct.pack("<7Id", oc, ic, kh, kw, layer.stride, layer.padding,
                                 _ACT_CODES[layer.activation], layer.slope))
    for layer in extractor.layers:
        parts.append(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_extractor(path) -> FeatureExtractor:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ExtractorFormatError(f"{path}: not an extractor weight file (bad magic)")
    try:
        version, n = struct.unpack_from("<II", raw, 4)
        if version != _VERSION:
            raise ExtractorFormatError(f"{path}: unsupported version {version}")
        off = 12
        heads = []
        for _ in range(n):
            heads.append(struct.unpack_from("<7Id", raw, off))
            off += struct.calcsize("<7Id")
        layers = []
        for oc, ic, kh, kw, stride, pad, code, slope in heads:
            nw = oc * ic * kh * kw
            w = np.frombuffer(raw, "<f8", nw, off).reshape(oc, ic, kh, kw).astype(np.float64)
            off += 8 * nw
            b = np.frombuffer(raw, "<f8", oc, off).astype(np.float64)
            off += 8 * oc
            layers.append(FeatureLayer(w, b, stride, pad, _ACT_NAMES[code], slope))
    except (struct.error, ValueError, KeyError) as exc:
        if isinstance(exc, ExtractorFormatError):
            raise
        raise ExtractorFormatError(f"{path}: truncated or corrupt extractor file ({exc})") from None
    if off != len(raw):
        raise ExtractorFormatError(f"{path}: {len(raw) - off} trailing bytes")
    for a, b in zip(layers, layers[1:]):
        if b.weight.shape[1] != a.weight.shape[0]:
            raise ExtractorFormatError(f"{path}: layer channel counts do not chain")
    return FeatureExtractor(tuple(layers), "imported")


def resolve_extractor(spec: str | None) -> FeatureExtractor:
    """"seed:N" builds a seeded extractor; anything else is a weight-file path."""
    if spec is None:
        return seeded_extractor(42)
    if spec.startswith("seed:"):
        return seeded_extractor(int(spec[5:]))
    return load_extractor(spec)
