"""LLFDisc enhancer: a three-scale U-shaped network of EnhancedLCA blocks.

Each EnhancedLCA block applies, in order, cross attention (CAB), the gated
information-enhancement layer (IEL), the dark-area / noise-correction block
(DANCE) and squeeze-and-excitation (SE). Widths, head counts and the exact
CAB/IEL wiring are this package's choices; see README.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    base_width: int = 16
    heads: tuple[int, int, int] = (1, 2, 4)
    leaky_slope: float = 0.01
    se_reduction: int = 4
    global_residual: bool = True
    seed: int = 0

    @property
    def widths(self) -> tuple[int, int, int]:
        w = self.base_width
        return (w, 2 * w, 4 * w)

    def validate(self) -> None:
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if len(self.heads) != 3:
            raise ValueError(f"need one head count per scale, got {self.heads}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ValueError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.se_reduction < 1:
            raise ValueError(f"se_reduction must be >= 1, got {self.se_reduction}")
        for w, h in zip(self.widths, self.heads):
            if h < 1 or w % h:
                raise ValueError(f"width {w} is not divisible by {h} heads")


# ---------------------------------------------------------------- parameter containers

@dataclass
class Conv:
    weight: Tensor
    bias: Tensor | None = None


@dataclass
class DanceParams:
    dw: Conv          # depthwise 3x3, noise branch
    pw: Conv          # pointwise 1x1 -> noise map logits
    dark1: Conv       # 3x3
    dark2: Conv       # 3x3, no activation after
    ca_reduce: Conv   # 1x1 C -> C/r
    ca_expand: Conv   # 1x1 C/r -> C


@dataclass
class IelParams:
    proj_in: Conv
    dw: Conv
    proj_out: Conv
    gate: Conv


@dataclass
class SeParams:
    fc1: Conv  # C -> C/r, applied as 1x1 conv on pooled (B,C,1,1)
    fc2: Conv


@dataclass
class CabParams:
    qkv: Conv         # 1x1 C -> 3C
    qkv_dw: Conv      # depthwise 3x3 on 3C
    proj: Conv        # 1x1 C -> C
    log_temperature: Tensor  # (heads,); temperature = exp(.)
    heads: int


@dataclass
class LcaParams:
    cab: CabParams
    iel: IelParams
    dance: DanceParams
    se: SeParams


@dataclass
class NetworkParams:
    config: NetworkConfig
    stem: Conv
    lca0: LcaParams
    down0: Conv
    lca1: LcaParams
    down1: Conv
    lca2: LcaParams
    up1: Conv   # transposed 2x2 stride 2, weight (inC, outC, 2, 2)
    fuse1: Conv
    up0: Conv
    fuse0: Conv
    out: Conv

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        """All trainable tensors in declaration order, with dotted names."""
        return list(_walk(self, ""))

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def count(self) -> int:
        return sum(t.size for t in self.tensors())


def _walk(obj, prefix):
    for f in fields(obj):
        if f.name == "config":
            continue
        v = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if isinstance(v, Tensor):
            yield name, v
        elif is_dataclass(v):
            yield from _walk(v, name + ".")


# ---------------------------------------------------------------- init

class _Init:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def conv(self, cout, cin_per_group, k, bias=True):
        fan_in = cin_per_group * k * k
        w = self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(cout, cin_per_group, k, k))
        return Conv(Tensor(w), Tensor(np.zeros(cout)) if bias else None)

    def up(self, cin, cout):
        # transposed conv: each output pixel receives cin contributions
        w = self.rng.normal(0.0, np.sqrt(2.0 / cin), size=(cin, cout, 2, 2))
        return Conv(Tensor(w), Tensor(np.zeros(cout)))


def _init_lca(ini: _Init, c: int, heads: int, r: int) -> LcaParams:
    cr = max(1, c // r)
    cab = CabParams(ini.conv(3 * c, c, 1), ini.conv(3 * c, 1, 3), ini.conv(c, c, 1),
                    Tensor(np.zeros(heads)), heads)
    iel = IelParams(ini.conv(c, c, 1), ini.conv(c, 1, 3), ini.conv(c, c, 1), ini.conv(c, c, 1))
    dance = DanceParams(ini.conv(c, 1, 3), ini.conv(c, c, 1), ini.conv(c, c, 3), ini.conv(c, c, 3),
                        ini.conv(cr, c, 1), ini.conv(c, cr, 1))
    se = SeParams(ini.conv(cr, c, 1), ini.conv(c, cr, 1))
    return LcaParams(cab, iel, dance, se)


def init_params(config: NetworkConfig | None = None) -> NetworkParams:
    """He-style fan-in init from ``config.seed``; zero biases; zero output conv."""
    config = config or NetworkConfig()
    config.validate()
    ini = _Init(config.seed)
    w0, w1, w2 = config.widths
    r = config.se_reduction
    stem = ini.conv(w0, 3, 3)
    lca0 = _init_lca(ini, w0, config.heads[0], r)
    down0 = ini.conv(w1, w0, 3)
    lca1 = _init_lca(ini, w1, config.heads[1], r)
    down1 = ini.conv(w2, w1, 3)
    lca2 = _init_lca(ini, w2, config.heads[2], r)
    up1 = ini.up(w2, w1)
    fuse1 = ini.conv(w1, w1, 1)
    up0 = ini.up(w1, w0)
    fuse0 = ini.conv(w0, w0, 1)
    out = Conv(Tensor(np.zeros((3, w0, 3, 3))), Tensor(np.zeros(3)))
    return NetworkParams(config, stem, lca0, down0, lca1, down1, lca2, up1, fuse1, up0, fuse0, out)


# ---------------------------------------------------------------- blocks

def _conv(x, c: Conv, stride=1, padding=0, groups=1):
    return T.conv2d(x, c.weight, c.bias, stride=stride, padding=padding, groups=groups)


def _check_width(name, x, c):
    if x.ndim != 4 or x.shape[1] != c:
        raise ShapeError(f"{name}: expected {c} channels, got input shape {x.shape}")


def dance_forward(x, p: DanceParams, slope: float = 0.01) -> Tensor:
    """Noise gating, dark-area convolutions and channel reweighting: Y = X_den + F_dark * w."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    C = p.pw.weight.shape[0]
    _check_width("dance", x, C)
    z0 = _conv(x, p.dw, padding=1, groups=C)
    z1 = _conv(T.leaky_relu(z0, slope), p.pw)
    m = T.sigmoid(z1)
    x_den = x * m
    f0 = T.leaky_relu(_conv(x_den, p.dark1, padding=1), slope)
    f_dark = _conv(f0, p.dark2, padding=1)
    s = T.pool_global_avg(f_dark)
    w = T.sigmoid(_conv(T.leaky_relu(_conv(s, p.ca_reduce), slope), p.ca_expand))
    return x_den + f_dark * w


def iel_forward(x, p: IelParams, slope: float = 0.01) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    C = p.proj_in.weight.shape[1]
    _check_width("iel", x, C)
    h = _conv(x, p.proj_in)
    h = _conv(h, p.dw, padding=1, groups=h.shape[1])
    h = _conv(T.leaky_relu(h, slope), p.proj_out)
    g = T.tanh(_conv(x, p.gate))
    return h * g + x


def se_forward(x, p: SeParams) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    C = p.fc1.weight.shape[1]
    _check_width("se", x, C)
    s = T.pool_global_avg(x)
    w = T.tanh(_conv(T.relu(_conv(s, p.fc1)), p.fc2))
    return x * (w + 1.0)


def l2_normalize_lastdim(x: Tensor, eps: float = 1e-12) -> Tensor:
    return x / T.sqrt(T.tsum(x * x, axis=-1, keepdims=True) + eps)


def cab_attention(x, p: CabParams):
    """Returns (attention weights (B,h,c,c), per-head values (B,h,c,HW))."""
    B, C, H, W = x.shape
    h = p.heads
    qkv = _conv(_conv(x, p.qkv), p.qkv_dw, padding=1, groups=3 * C)
    ch = C // h
    q = T.reshape(qkv[:, 0:C], (B, h, ch, H * W))
    k = T.reshape(qkv[:, C:2 * C], (B, h, ch, H * W))
    v = T.reshape(qkv[:, 2 * C:3 * C], (B, h, ch, H * W))
    q, k = l2_normalize_lastdim(q), l2_normalize_lastdim(k)
    temp = T.reshape(T.exp(p.log_temperature), (1, h, 1, 1))
    logits = T.batched_matmul(q, T.transpose(k, (0, 1, 3, 2))) * temp
    return T.softmax_lastdim(logits), v


def cab_forward(x, p: CabParams) -> Tensor:
    """Multi-head channel (transposed) attention with learnable per-head temperature."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    C = p.proj.weight.shape[0]
    _check_width("cab", x, C)
    if C % p.heads:
        raise ShapeError(f"cab: width {C} not divisible by {p.heads} heads")
    B, _, H, W = x.shape
    attn, v = cab_attention(x, p)
    mixed = T.reshape(T.batched_matmul(attn, v), (B, C, H, W))
    return _conv(mixed, p.proj) + x


def enhanced_lca_forward(x, p: LcaParams, slope: float = 0.01) -> Tensor:
    x = cab_forward(x, p.cab)
    x = iel_forward(x, p.iel, slope)
    x = dance_forward(x, p.dance, slope)
    return se_forward(x, p.se)


def llfdisc_forward(image, params: NetworkParams) -> Tensor:
    """Enhance a (B,3,H,W) batch; H and W must be divisible by 4. No clamping."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ShapeError(f"llfdisc expects (B,3,H,W) images, got shape {x.shape}")
    if x.shape[2] % 4 or x.shape[3] % 4:
        raise ShapeError(f"image height/width {x.shape[2]}x{x.shape[3]} must be divisible by 4; "
                         "pad reflectively first (harness.enhance does this)")
    a = params.config.leaky_slope
    f0 = enhanced_lca_forward(_conv(x, params.stem, padding=1), params.lca0, a)
    f1 = enhanced_lca_forward(_conv(f0, params.down0, stride=2, padding=1), params.lca1, a)
    f2 = enhanced_lca_forward(_conv(f1, params.down1, stride=2, padding=1), params.lca2, a)
    u1 = T.conv_transpose2d(f2, params.up1.weight, params.up1.bias, stride=2)
    u1 = _conv(u1 + f1, params.fuse1)
    u0 = T.conv_transpose2d(u1, params.up0.weight, params.up0.bias, stride=2)
    u0 = _conv(u0 + f0, params.fuse0)
    delta = _conv(u0, params.out, padding=1)
    return x + delta if params.config.global_residual else delta


# ---------------------------------------------------------------- checkpoint files

_MAGIC = b"LLFC"
_VERSION = 1
_HEADER = "<4sIIIIIdIqI"  # magic, version, base_width, heads x3, slope, se_r, seed, residual


def save_checkpoint(params: NetworkParams, path) -> None:
    """Write the flat little-endian checkpoint (layout in docs/formats.md)."""
    c = params.config
    parts = [struct.pack(_HEADER, _MAGIC, _VERSION, c.base_width, *c.heads, c.leaky_slope,
                         c.se_reduction, c.seed, int(c.global_residual))]
    named = params.named_tensors()
    parts.append(struct.pack("<I", len(named)))
    for name, t in named:
        enc = name.encode()
        parts.append(struct.pack("<H", len(enc)) + enc + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> NetworkParams:
    raw = Path(path).read_bytes()
    hsize = struct.calcsize(_HEADER)
    if len(raw) < hsize or raw[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not an LLFDisc checkpoint (bad magic or short header)")
    (_, version, width, h0, h1, h2, slope, se_r, seed, residual) = struct.unpack_from(_HEADER, raw, 0)
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        config = NetworkConfig(width, (h0, h1, h2), slope, se_r, bool(residual), seed)
        params = init_params(config)
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid config in header ({exc})") from None
    expected = params.named_tensors()
    try:
        off = hsize
        (n,) = struct.unpack_from("<I", raw, off)
        off += 4
        if n != len(expected):
            raise CheckpointError(f"{path}: {n} tensors stored, config needs {len(expected)}")
        for name, t in expected:
            (ln,) = struct.unpack_from("<H", raw, off)
            off += 2
            stored = raw[off:off + ln].decode()
            off += ln
            (nd,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{nd}I", raw, off)
            off += 4 * nd
            if stored != name or tuple(shape) != t.shape:
                raise CheckpointError(f"{path}: tensor {stored}{shape} does not match {name}{t.shape}")
            cnt = int(np.prod(shape))
            if off + 8 * cnt > len(raw):
                raise CheckpointError(f"{path}: truncated in tensor {name}")
            t.data = np.frombuffer(raw, "<f8", cnt, off).reshape(shape).astype(np.float64)
            off += 8 * cnt
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from None
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return params
