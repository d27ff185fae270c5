"""Unitary 2-D Fourier analysis of images: spectra, amplitude, phase and the amplitude swap.

Every image channel is transformed independently. Spectra are not
center-shifted. Phase uses the two-argument arctangent, so it lies in
(-pi, pi], and empty bins get phase 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class ComplexSpectrum:
    """Real and imaginary planes of a spectrum, shape (..., H, W)."""

    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise ShapeError(f"spectrum planes differ in shape: {self.real.shape} vs {self.imag.shape}")

    @property
    def source_shape(self) -> tuple[int, int]:
        return self.real.shape[-2:]

    def to_complex(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data


def _img(x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ShapeError(f"expected an image with trailing (H, W) >= 1, got shape {x.shape}")
    return x


def fft2d(image) -> ComplexSpectrum:
    re, im = T.fft2(_img(image))
    return ComplexSpectrum(re, im)


def ifft2d(spectrum: ComplexSpectrum, return_residue: bool = False):
    """Inverse transform; with ``return_residue`` also the max |imag| left over."""
    return T.ifft2(spectrum.real, spectrum.imag, return_residue=return_residue)


def amplitude(spectrum: ComplexSpectrum) -> Tensor:
    return T.hypot(spectrum.real, spectrum.imag)


def phase(spectrum: ComplexSpectrum) -> Tensor:
    return T.atan2(spectrum.imag, spectrum.real)


def recompose(amp, pha) -> ComplexSpectrum:
    amp = amp if isinstance(amp, Tensor) else Tensor(amp)
    pha = pha if isinstance(pha, Tensor) else Tensor(pha)
    if amp.shape != pha.shape:
        raise ShapeError(f"amplitude shape {amp.shape} != phase shape {pha.shape}")
    return ComplexSpectrum(amp * T.cos(pha), amp * T.sin(pha))


def amplitude_swap(a, b) -> tuple[Tensor, Tensor]:
    """Exchange amplitude spectra between ``a`` and ``b``, keeping each one's phase.

    Returns (phase of a with amplitude of b, phase of b with amplitude of a).
    No clamping happens here.
    """
    a, b = _img(a), _img(b)
    if a.shape != b.shape:
        raise ShapeError(f"amplitude_swap: shapes differ: {a.shape} vs {b.shape}")
    sa, sb = fft2d(a), fft2d(b)
    amp_a, amp_b = amplitude(sa), amplitude(sb)
    pha_a, pha_b = phase(sa), phase(sb)
    a_new = ifft2d(recompose(amp_b, pha_a))
    b_new = ifft2d(recompose(amp_a, pha_b))
    return a_new, b_new


def log_amplitude_image(amp: np.ndarray) -> np.ndarray:
    """log(1 + A) scaled to [0, 1] per channel, for viewing."""
    v = np.log1p(np.asarray(amp))
    hi = v.max(axis=(-2, -1), keepdims=True)
    return np.divide(v, hi, out=np.zeros_like(v), where=hi > 0)


def phase_image(pha: np.ndarray) -> np.ndarray:
    """Phase mapped linearly from (-pi, pi] to [0, 1]."""
    return (np.asarray(pha) + np.pi) / (2 * np.pi)
