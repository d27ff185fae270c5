"""Frequency-aware low-light image enhancement in numpy.

Fourier KL and feature KL losses, the LLFDisc network blocks, and a small
deterministic training harness, all on a float64 reverse-mode autodiff core.
"""
from ._backend import BACKEND
from .tensor import NumericalError, ShapeError, Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["BACKEND", "NumericalError", "ShapeError", "Tensor", "no_grad", "__version__"]
