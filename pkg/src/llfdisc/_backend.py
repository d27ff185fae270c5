"""Kernel backend selection.

The compiled extension is used when importable; set ``LLFDISC_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
kernels = _kernels_py

if os.environ.get("LLFDISC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        kernels = _kernels_py


def use(name):
    """Switch backend at runtime ("compiled" or "python"); returns the previous name."""
    global kernels, BACKEND
    prev = BACKEND
    if name == "python":
        kernels, BACKEND = _kernels_py, "python"
    elif name == "compiled":
        from . import _kernels

        kernels, BACKEND = _kernels, "compiled"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
