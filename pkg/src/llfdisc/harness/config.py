"""Plain-text ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Recognised keys::

    preset, steps, lr, batch_size, crop, seed, extractor, out,
    width, heads (comma list), leaky_slope, se_reduction, global_residual,
    count, size, data, held_out, sweep (comma list), weights.<term>

``<term>`` is one of s, hist, msssim, psnr, color, vggkl, fkl, f, vgg.
"""
from __future__ import annotations

from pathlib import Path

from ..losses import TERMS

_INT = {"steps", "batch_size", "crop", "seed", "width", "se_reduction", "count", "size", "held_out"}
_FLOAT = {"lr", "leaky_slope"}
_STR = {"preset", "extractor", "out", "data"}
_BOOL = {"global_residual"}
_LIST_INT = {"heads"}
_LIST_FLOAT = {"sweep"}


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _INT:
        return int(raw)
    if key in _FLOAT:
        return float(raw)
    if key in _STR:
        return raw
    if key in _BOOL:
        return _bool(raw)
    if key in _LIST_INT:
        return tuple(int(p) for p in raw.split(","))
    if key in _LIST_FLOAT:
        return tuple(float(p) for p in raw.split(","))
    if key.startswith("weights.") and key[8:] in TERMS:
        return float(raw)
    raise ValueError(f"unknown config key {key!r}")


def parse_config(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{n}: expected key = value, got {line!r}")
        key, raw = (p.strip() for p in line.split("=", 1))
        try:
            out[key] = parse_value(key, raw)
        except ValueError as exc:
            raise ValueError(f"{source}:{n}: {exc}") from None
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text(), str(path))
