"""Synthetic low/normal-light pairs and a loader for directories of real pairs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import read_png, write_png


@dataclass
class PairedSample:
    low: np.ndarray     # (3, H, W) in [0, 1]
    normal: np.ndarray  # (3, H, W) in [0, 1]
    id: str


def _scene(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    img = np.empty((3, size, size))
    for c in range(3):
        a, bx, by = rng.uniform(0.1, 0.35), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)
        img[c] = a + bx * xx + by * yy
    for _ in range(rng.integers(2, 6)):
        h, w = rng.integers(size // 8, size // 2 + 1, size=2)
        r0, c0 = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        color = rng.uniform(0.0, 0.6, size=3)
        alpha = rng.uniform(0.5, 1.0)
        patch = img[:, r0:r0 + h, c0:c0 + w]
        img[:, r0:r0 + h, c0:c0 + w] = (1 - alpha) * patch + alpha * color[:, None, None]
    for _ in range(rng.integers(1, 3)):
        fx, fy = rng.uniform(1.0, 6.0, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.03, 0.12)
        wave = amp * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
        img += wave[None] * rng.uniform(0.5, 1.0, size=(3, 1, 1))
    return np.clip(img, 0.0, 1.0)


def degrade(normal: np.ndarray, rng: np.random.Generator):
    """clamp(gain * normal**gamma + noise); returns (low, (gamma, gain, sigma))."""
    gamma = rng.uniform(2.0, 3.0)
    gain = rng.uniform(0.2, 0.5)
    sigma = rng.uniform(0.01, 0.03)
    low = gain * normal ** gamma + rng.normal(0.0, sigma, size=normal.shape)
    return np.clip(low, 0.0, 1.0), (gamma, gain, sigma)


def synth_pairs(count: int, size: int, seed: int) -> list[PairedSample]:
    """Seeded procedural scenes and their darkened, noisy counterparts.

    Each pair draws from its own child seed, so pair i does not depend on count.
    """
    if size % 4:
        raise ValueError(f"size must be divisible by 4, got {size}")
    children = np.random.SeedSequence(seed).spawn(count)
    out = []
    for i, ss in enumerate(children):
        rng = np.random.default_rng(ss)
        normal = _scene(rng, size)
        low, _ = degrade(normal, rng)
        out.append(PairedSample(low, normal, f"s{seed}_{i:04d}"))
    return out


def save_pairs(pairs: list[PairedSample], root) -> None:
    root = Path(root)
    for p in pairs:
        write_png(root / "low" / f"{p.id}.png", p.low.transpose(1, 2, 0))
        write_png(root / "high" / f"{p.id}.png", p.normal.transpose(1, 2, 0))


def load_paired_dir(root) -> list[PairedSample]:
    """Pairs from ``root/low/*.png`` and same-named ``root/high/*.png``."""
    root = Path(root)
    low_dir, high_dir = root / "low", root / "high"
    if not low_dir.is_dir() or not high_dir.is_dir():
        raise FileNotFoundError(f"{root} must contain low/ and high/ subdirectories")
    pairs = []
    for lp in sorted(low_dir.glob("*.png")):
        hp = high_dir / lp.name
        if not hp.exists():
            raise FileNotFoundError(f"no ground truth for {lp.name} in {high_dir}")
        low, high = read_png(lp), read_png(hp)
        if low.shape != high.shape:
            raise ValueError(f"{lp.name}: low {low.shape} and high {high.shape} differ")
        pairs.append(PairedSample(low.transpose(2, 0, 1).copy(), high.transpose(2, 0, 1).copy(), lp.stem))
    return pairs
