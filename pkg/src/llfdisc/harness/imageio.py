"""8-bit RGB PNG <-> float images in [0, 1], shape (H, W, 3)."""
from pathlib import Path

import numpy as np
from PIL import Image


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1], scale by 255 and round half to even."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(arr), mode="RGB").save(path, format="PNG")


def hwc_to_batch(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img, dtype=np.float64).transpose(2, 0, 1)[None])


def batch_to_hwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x)[0].transpose(1, 2, 0))
