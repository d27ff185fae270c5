"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every op returns a new :class:`Tensor`. When gradients are enabled and any
input requires them, the output keeps references to its parents and a
closure that maps the output gradient to parent gradients.

Convolutions are cross-correlations (no kernel flip). Elementwise binary ops
broadcast like numpy; backward sums the broadcast axes back out.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _backend

__all__ = [
    "Tensor", "NumericalError", "ShapeError", "no_grad", "grad_enabled",
    "tensor", "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt",
    "absolute", "cos", "sin", "clamp_min", "tsum", "mean", "reshape", "transpose",
    "getitem", "concat", "matmul", "batched_matmul", "softmax_lastdim", "conv2d",
    "conv_transpose2d", "pool_global_avg", "activation", "leaky_relu", "relu",
    "sigmoid", "tanh", "hypot", "atan2", "fft2", "ifft2", "soft_histogram",
    "backward", "grad", "gradient_check", "gradient_errors",
]


class NumericalError(ArithmeticError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class no_grad:
    """Context manager that disables graph recording in the current thread."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.enabled = False
        return self

    def __exit__(self, *exc):
        _state.enabled = self._prev
        return False


class Tensor:
    """Dense float64 array with an optional place in a differentiation graph."""

    __array_priority__ = 100  # make ndarray OP Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = ""

    # -- introspection --
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- operators --
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def sqrt(self): return sqrt(self)
    def abs(self): return absolute(self)

    def backward(self) -> dict[Tensor, np.ndarray]:
        return backward(self)


def _scalar_error(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericalError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    if isinstance(p, Tensor):
        raise TypeError("power() takes a constant exponent")
    return _make("power", a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def expm1(a) -> Tensor:
    a = _as_tensor(a)
    return _make("expm1", np.expm1(a.data), (a,), lambda g: (g * np.exp(a.data),))


def log1p(a) -> Tensor:
    a = _as_tensor(a)
    return _make("log1p", np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    return _make("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def cos(a) -> Tensor:
    a = _as_tensor(a)
    return _make("cos", np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def sin(a) -> Tensor:
    a = _as_tensor(a)
    return _make("sin", np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor); the gradient is zero wherever the floor is active."""
    a = _as_tensor(a)
    keep = a.data > floor
    return _make("clamp_min", np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- reductions / shape

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make("transpose", np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = _as_tensor(a)

    def bw(g):
        full = np.zeros(a.shape)
        full[idx] += g
        return (full,)

    return _make("getitem", np.array(a.data[idx], dtype=np.float64), (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _make("concat", np.concatenate([p.data for p in parts], axis=axis), parts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _make("matmul", a.data @ b.data, (a, b), bw)


def batched_matmul(a, b) -> Tensor:
    """Per-(batch, head) product of [B,h,M,K] and [B,h,K,N]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError(f"batched_matmul expects rank-4 operands, got {a.shape} and {b.shape}")
    return matmul(a, b)


def softmax_lastdim(a) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make("softmax", out, (a,), bw)


# ---------------------------------------------------------------- convolution

def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation; weight is [outC, inC/groups, kH, kW]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4 (B,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be rank 4, got shape {weight.shape}")
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"conv2d: need stride >= 1, padding >= 0, groups >= 1 "
                         f"(got {stride}, {padding}, {groups})")
    B, C, H, W = x.shape
    O, Cg, kh, kw = weight.shape
    if C % groups:
        raise ShapeError(f"conv2d: input channels {C} not divisible by groups {groups}")
    if Cg * groups != C:
        raise ShapeError(f"conv2d: input channels {C} != weight in-channels {Cg} x groups {groups}")
    if O % groups:
        raise ShapeError(f"conv2d: output channels {O} not divisible by groups {groups}")
    hp, wp = H + 2 * padding, W + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: kernel height/width {kh}x{kw} exceeds padded input {hp}x{wp}")
    oh, ow = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (O,):
            raise ShapeError(f"conv2d: bias must have shape ({O},), got {bias.shape}")
        parents.append(bias)

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _backend.kernels.im2col(np.ascontiguousarray(xp), kh, kw, stride, oh, ow)
    G, Og, K, L = groups, O // groups, Cg * kh * kw, oh * ow
    cols_g = cols.reshape(B, G, K, L)
    w_g = weight.data.reshape(G, Og, K)
    out = np.matmul(w_g, cols_g).reshape(B, O, oh, ow)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        g_g = g.reshape(B, G, Og, L)
        dw = np.matmul(g_g, np.swapaxes(cols_g, -1, -2)).sum(axis=0).reshape(weight.shape)
        dcols = np.matmul(np.swapaxes(w_g, -1, -2), g_g).reshape(B, C, kh, kw, oh, ow)
        dxp = _backend.kernels.col2im(dcols, hp, wp, stride)
        dx = dxp[:, :, padding:padding + H, padding:padding + W] if padding else dxp
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make("conv2d", out, parents, bw)


def conv_transpose2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; weight is [inC, outC, kH, kW] (adjoint of conv2d)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv_transpose2d: input must be rank 4, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d: weight must be rank 4, got shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv_transpose2d: need stride >= 1 and padding >= 0 (got {stride}, {padding})")
    B, Ci, H, W = x.shape
    if weight.shape[0] != Ci:
        raise ShapeError(f"conv_transpose2d: input channels {Ci} != weight in-channels {weight.shape[0]}")
    _, Co, kh, kw = weight.shape
    hf, wf = (H - 1) * stride + kh, (W - 1) * stride + kw
    oh, ow = hf - 2 * padding, wf - 2 * padding
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv_transpose2d: padding {padding} leaves empty output height/width")
    parents = [x, weight]
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (Co,):
            raise ShapeError(f"conv_transpose2d: bias must have shape ({Co},), got {bias.shape}")
        parents.append(bias)

    w2 = weight.data.reshape(Ci, Co * kh * kw)
    x2 = x.data.reshape(B, Ci, H * W)
    cols = np.matmul(w2.T, x2).reshape(B, Co, kh, kw, H, W)
    full = _backend.kernels.col2im(np.ascontiguousarray(cols), hf, wf, stride)
    out = full[:, :, padding:padding + oh, padding:padding + ow]
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def bw(g):
        gp = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = _backend.kernels.im2col(np.ascontiguousarray(gp), kh, kw, stride, H, W)
        gcols = gcols.reshape(B, Co * kh * kw, H * W)
        dx = np.matmul(w2, gcols).reshape(x.shape)
        dw = np.matmul(x2, np.swapaxes(gcols, -1, -2)).sum(axis=0).reshape(weight.shape)
        grads = [dx, dw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _make("conv_transpose2d", out, parents, bw)


def pool_global_avg(x) -> Tensor:
    x = _as_tensor(x)
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ShapeError(f"pool_global_avg: expected (B,C,H,W) with H,W >= 1, got {x.shape}")
    return mean(x, axis=(2, 3), keepdims=True)


# ---------------------------------------------------------------- activations

def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make("leaky_relu", np.where(pos, x.data, slope * x.data), (x,),
                 lambda g: (np.where(pos, g, slope * g),))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make("relu", np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    # split form avoids overflow in exp for large |x|
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _make("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def activation(x, kind: str, slope: float = 0.01) -> Tensor:
    if kind == "leaky_relu":
        if not 0.0 < slope < 1.0:
            raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
        return leaky_relu(x, slope)
    fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}.get(kind)
    if fn is None:
        raise ValueError(f"unknown activation {kind!r}")
    return fn(x)


# ---------------------------------------------------------------- polar / Fourier

def hypot(re, im) -> Tensor:
    """sqrt(re^2 + im^2); zero gradient at the origin."""
    re, im = _as_tensor(re), _as_tensor(im)
    a = np.hypot(re.data, im.data)
    nz = a > 0
    inv = np.divide(1.0, a, out=np.zeros_like(a), where=nz)

    def bw(g):
        return (_unbroadcast(g * re.data * inv, re.shape), _unbroadcast(g * im.data * inv, im.shape))

    return _make("hypot", a, (re, im), bw)


def atan2(im, re) -> Tensor:
    """Angle in (-pi, pi]; 0 where both parts vanish."""
    re, im = _as_tensor(re), _as_tensor(im)
    a2 = re.data ** 2 + im.data ** 2
    p = np.arctan2(im.data, re.data)
    p = np.where(p <= -np.pi, np.pi, p)
    p = np.where(a2 == 0, 0.0, p)
    inv = np.divide(1.0, a2, out=np.zeros_like(a2), where=a2 > 0)

    def bw(g):
        return (_unbroadcast(g * re.data * inv, im.shape), _unbroadcast(-g * im.data * inv, re.shape))

    return _make("atan2", p, (im, re), bw)


def _real_bins(h: int, w: int) -> np.ndarray:
    """Bins that are their own conjugate partner; the spectrum of a real image is real there."""
    rows = np.zeros(h, bool)
    cols = np.zeros(w, bool)
    rows[0] = True
    cols[0] = True
    if h % 2 == 0:
        rows[h // 2] = True
    if w % 2 == 0:
        cols[w // 2] = True
    return rows[:, None] & cols[None, :]


def fft2(x) -> tuple[Tensor, Tensor]:
    """Unitary 2-D DFT over the last two axes of a real tensor: (real, imag)."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"fft2 needs at least 2 dims, got shape {x.shape}")
    spec = np.fft.fft2(x.data, norm="ortho")
    mask = _real_bins(*x.shape[-2:])
    im = spec.imag.copy()
    im[..., mask] = 0.0
    re_t = _make("fft2.real", spec.real.copy(), (x,),
                 lambda g: (np.fft.ifft2(g, norm="ortho").real,))
    im_t = _make("fft2.imag", im, (x,),
                 lambda g: (np.fft.ifft2(1j * np.where(mask, 0.0, g), norm="ortho").real,))
    return re_t, im_t


def ifft2(re, im, return_residue: bool = False):
    """Real part of the unitary inverse DFT; optionally also max |imag| of the result."""
    re, im = _as_tensor(re), _as_tensor(im)
    if re.shape != im.shape:
        raise ShapeError(f"ifft2: real/imag shapes differ: {re.shape} vs {im.shape}")
    y = np.fft.ifft2(re.data + 1j * im.data, norm="ortho")

    def bw(g):
        G = np.fft.fft2(g, norm="ortho")
        return (G.real, G.imag)

    out = _make("ifft2", np.ascontiguousarray(y.real), (re, im), bw)
    if return_residue:
        return out, float(np.abs(y.imag).max(initial=0.0))
    return out


# ---------------------------------------------------------------- soft binning

def soft_histogram(x, bins: int = 256) -> Tensor:
    """Per-plane histogram over [0,1] with linear (triangular) bin assignment.

    Input (B,C,H,W) -> counts (B,C,bins). A value v spreads unit mass between
    the two bins nearest to v*(bins-1); mass landing outside [0, bins-1] is dropped.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"soft_histogram expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    flat = np.ascontiguousarray(x.data.reshape(B * C, H * W))
    counts = _backend.kernels.soft_hist(flat, bins).reshape(B, C, bins)

    def bw(g):
        gx = _backend.kernels.soft_hist_grad(flat, np.ascontiguousarray(g.reshape(B * C, bins)), bins)
        return (gx.reshape(x.shape),)

    return _make("soft_histogram", counts, (x,), bw)


def soft_histogram_gather(x, table) -> Tensor:
    """Read a per-plane bin table back at each pixel with the same linear weights.

    ``table`` is a constant (B,C,bins) array; the result (B,C,H,W) holds
    (1-f)*table[k] + f*table[k+1]. Summing it over pixels equals
    ``sum(table * soft_histogram(x))`` but depends only on each pixel's own
    value, so pixels whose two bins carry equal entries contribute exactly.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"soft_histogram_gather expects (B,C,H,W), got {x.shape}")
    B, C, H, W = x.shape
    bins = table.shape[-1]
    if table.shape != (B, C, bins):
        raise ShapeError(f"soft_histogram_gather: table {table.shape} does not match input {x.shape}")
    flat = np.ascontiguousarray(x.data.reshape(B * C, H * W))
    tab = np.ascontiguousarray(table.reshape(B * C, bins), dtype=np.float64)
    out = _backend.kernels.soft_hist_gather(flat, tab, bins).reshape(x.shape)

    def bw(g):
        return (g * _backend.kernels.soft_hist_grad(flat, tab, bins).reshape(x.shape),)

    return _make("soft_histogram_gather", out, (x,), bw)


# ---------------------------------------------------------------- backward

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _propagate(root: Tensor) -> dict[int, np.ndarray]:
    if root.size != 1:
        raise ShapeError(f"backward needs a single-element output, got shape {root.shape}")
    grads = {id(root): np.ones(root.shape)}
    for node in reversed(_topo(root)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp
    return grads


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the mapping leaf -> gradient for leaves reached in this pass.
    """
    grads = _propagate(root)
    result = {}
    for node in _topo(root):
        if node._parents or not node.requires_grad:
            continue
        g = np.array(grads.get(id(node), np.zeros(node.shape)), dtype=np.float64).reshape(node.shape)
        node.grad = g if node.grad is None else node.grad + g
        result[node] = g
    return result


def grad(root: Tensor, inputs: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``root`` w.r.t. ``inputs`` without touching ``.grad``.

    Inputs the output does not depend on get zero gradients.
    """
    grads = _propagate(root)
    return [np.array(grads.get(id(t), np.zeros(t.shape)), dtype=np.float64).reshape(t.shape)
            for t in inputs]


# ---------------------------------------------------------------- finite differences

def gradient_errors(f, point, analytic=None, h_scale: float = 1e-5, coords=None):
    """Per-coordinate |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    ``f`` maps ``point`` (a Tensor or a list of Tensors, perturbed in place) to a
    scalar Tensor. Central differences use h = h_scale * (1 + |x|). ``coords``
    optionally restricts the check to given flat indices, one array per leaf.
    """
    leaves = [point] if isinstance(point, Tensor) else list(point)
    saved = [t.requires_grad for t in leaves]
    for t in leaves:
        t.requires_grad = True
    try:
        if analytic is None:
            analytic = grad(f(point), leaves)
        elif isinstance(analytic, np.ndarray):
            analytic = [analytic]
        errs = []
        with no_grad():
            for n, (t, a) in enumerate(zip(leaves, analytic)):
                flat = t.data.reshape(-1)
                idx = np.arange(flat.size) if coords is None else np.asarray(coords[n], dtype=np.int64)
                num = np.empty(idx.size)
                for j, i in enumerate(idx):
                    x0 = flat[i]
                    h = h_scale * (1.0 + abs(x0))
                    flat[i] = x0 + h
                    fp = f(point).item()
                    flat[i] = x0 - h
                    fm = f(point).item()
                    flat[i] = x0
                    num[j] = (fp - fm) / (2.0 * h)
                a = np.asarray(a).reshape(-1)[idx]
                errs.append(np.abs(a - num) / np.maximum(1e-8, np.abs(a) + np.abs(num)))
    finally:
        for t, s in zip(leaves, saved):
            t.requires_grad = s
    return np.concatenate(errs) if errs else np.zeros(0)


def gradient_check(f, point, analytic=None, h_scale: float = 1e-5, coords=None) -> float:
    """Max relative error between backprop and central finite differences."""
    errs = gradient_errors(f, point, analytic, h_scale, coords)
    return float(errs.max(initial=0.0))
