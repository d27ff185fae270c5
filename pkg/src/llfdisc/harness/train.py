"""Deterministic toy training with Adam, held-out evaluation, the preset ablation and the Fourier-KL weight sweep."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..losses import PRESETS, LossReport, LossSettings, LossWeights, composite_loss, preset
from ..network import NetworkConfig, NetworkParams, init_params, llfdisc_forward, save_checkpoint
from ..perceptual_kl import resolve_extractor
from .data import PairedSample, synth_pairs
from .imageio import batch_to_hwc, hwc_to_batch
from .metrics import psnr_db, ssim_value

log = logging.getLogger(__name__)

TRAIN_FIELDS = ("step",) + LossReport.CSV_FIELDS


class TrainingDiverged(ArithmeticError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"training diverged at step {step}" + (f": {detail}" if detail else ""))
        self.step = step


@dataclass
class TrainConfig:
    preset: str = "full"
    weights: dict = field(default_factory=dict)  # per-term overrides on top of the preset
    steps: int = 500
    lr: float = 2e-3
    batch_size: int = 4
    crop: int = 32
    seed: int = 0
    network: NetworkConfig = field(default_factory=lambda: NetworkConfig(base_width=8))
    extractor: str = "seed:42"
    out_dir: str | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def validate(self) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.crop % 4:
            raise ValueError(f"crop must be divisible by 4, got {self.crop}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        self.network.validate()
        self.loss_weights()

    def loss_weights(self) -> LossWeights:
        return preset(self.preset, **self.weights)


@dataclass
class TrainResult:
    params: NetworkParams
    rows: list[list[float]]
    initial_composite: float
    final_composite: float
    seconds: float


class Adam:
    def __init__(self, params: list[T.Tensor], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params, self.lr, self.eps = params, lr, eps
        self.b1, self.b2 = betas
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _stack(samples: list[PairedSample]):
    return (np.stack([s.low for s in samples]), np.stack([s.normal for s in samples]))


def _crop_batch(low, high, crop, rng):
    H, W = low.shape[-2:]
    if crop > min(H, W):
        raise ValueError(f"crop {crop} exceeds image size {H}x{W}")
    if (H, W) == (crop, crop):
        return low, high
    r = int(rng.integers(0, H - crop + 1))
    c = int(rng.integers(0, W - crop + 1))
    return low[..., r:r + crop, c:c + crop], high[..., r:r + crop, c:c + crop]


def dataset_composite(params, data, weights, extractor, settings=None, chunk=16) -> float:
    """Composite loss over a whole dataset: the mean of per-chunk composites, weighted by chunk size."""
    low, high = _stack(data)
    total = 0.0
    with T.no_grad():
        for i in range(0, len(data), chunk):
            x, y = T.Tensor(low[i:i + chunk]), T.Tensor(high[i:i + chunk])
            rep = composite_loss(llfdisc_forward(x, params), y, weights, extractor, settings)
            total += rep.composite * x.shape[0]
    return total / len(data)


def train_toy(config: TrainConfig, data: list[PairedSample], settings: LossSettings | None = None,
              progress=None) -> TrainResult:
    """Minimize the preset composite with Adam; fully determined by (config, data).

    Per-step rows hold the loss of the batch before that step's update. With
    ``config.out_dir`` set, writes train.csv, summary.csv and checkpoint.bin.
    """
    config.validate()
    weights = config.loss_weights()
    extractor = resolve_extractor(config.extractor)
    params = init_params(config.network)
    tensors = params.tensors()
    for t in tensors:
        t.requires_grad = True
    opt = Adam(tensors, config.lr, config.betas, config.adam_eps)
    rng = np.random.default_rng(config.seed)
    low, high = _stack(data)
    bs = min(config.batch_size, len(data))

    start = time.perf_counter()
    initial = dataset_composite(params, data, weights, extractor, settings)
    rows = []
    for step in range(config.steps):
        idx = np.sort(rng.choice(len(data), size=bs, replace=False))
        x, y = _crop_batch(low[idx], high[idx], config.crop, rng)
        try:
            out = llfdisc_forward(T.Tensor(x), params)
            rep = composite_loss(out, T.Tensor(y), weights, extractor, settings)
            grads = T.grad(rep.tensor, tensors)
        except ArithmeticError as exc:
            raise TrainingDiverged(step, str(exc)) from exc
        if not np.isfinite(rep.composite) or not all(np.isfinite(g).all() for g in grads):
            raise TrainingDiverged(step, "non-finite loss or gradient")
        rows.append([step] + rep.row())
        opt.step(grads)
        if progress is not None:
            progress(step, rep)
    for t in tensors:
        t.requires_grad = False
    final = dataset_composite(params, data, weights, extractor, settings)
    seconds = time.perf_counter() - start
    log.info("trained %d steps in %.1fs: composite %.4f -> %.4f", config.steps, seconds, initial, final)

    if config.out_dir:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_csv(out_dir / "train.csv", TRAIN_FIELDS, rows)
        write_csv(out_dir / "summary.csv", ("initial_composite", "final_composite"), [[initial, final]])
        save_checkpoint(params, out_dir / "checkpoint.bin")
    return TrainResult(params, rows, initial, final, seconds)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def pad_to_multiple(img: np.ndarray, m: int = 4) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad a (B,C,H,W) batch on the bottom/right to multiples of ``m``."""
    H, W = img.shape[-2:]
    ph, pw = (-H) % m, (-W) % m
    if ph == 0 and pw == 0:
        return img, (H, W)
    mode = "reflect" if min(H, W) > max(ph, pw) else "symmetric"
    return np.pad(img, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode), (H, W)


def enhance(image: np.ndarray, params: NetworkParams) -> np.ndarray:
    """Enhance an (H,W,3) image in [0,1]; output clamped to [0,1]."""
    x, (H, W) = pad_to_multiple(hwc_to_batch(image))
    with T.no_grad():
        y = llfdisc_forward(T.Tensor(x), params).data
    return np.clip(batch_to_hwc(y[:, :, :H, :W]), 0.0, 1.0)


def evaluate(params: NetworkParams, data: list[PairedSample]) -> dict:
    """Mean PSNR/SSIM of enhanced outputs and of the raw low inputs against ground truth."""
    enh_psnr, enh_ssim, in_psnr, in_ssim = [], [], [], []
    for s in data:
        out = enhance(s.low.transpose(1, 2, 0), params).transpose(2, 0, 1)
        enh_psnr.append(psnr_db(out, s.normal))
        enh_ssim.append(ssim_value(out, s.normal))
        in_psnr.append(psnr_db(s.low, s.normal))
        in_ssim.append(ssim_value(s.low, s.normal))
    return {
        "psnr_db": float(np.mean(enh_psnr)), "ssim": float(np.mean(enh_ssim)),
        "input_psnr_db": float(np.mean(in_psnr)), "input_ssim": float(np.mean(in_ssim)),
    }


SWEEP_FIELDS = ("a7", "initial_composite", "final_composite", "psnr_db", "ssim")
DEFAULT_SWEEP = (0.0, 0.001, 0.01, 0.1, 0.5, 1.0)


def sweep_fkl_weight(base: TrainConfig, weights=DEFAULT_SWEEP, train: list[PairedSample] | None = None,
                     held_out: list[PairedSample] | None = None, out_csv=None) -> list[list]:
    """Train once per Fourier-KL weight on the "full" preset; one result row per weight."""
    train = train if train is not None else synth_pairs(64, base.crop, base.seed)
    held_out = held_out if held_out is not None else synth_pairs(8, base.crop, base.seed + 10_000)
    rows = []
    for a7 in weights:
        cfg = replace(base, preset="full", weights={**base.weights, "fkl": float(a7)},
                      out_dir=str(Path(base.out_dir) / f"a7_{a7:g}") if base.out_dir else None)
        res = train_toy(cfg, train)
        ev = evaluate(res.params, held_out)
        rows.append([float(a7), res.initial_composite, res.final_composite, ev["psnr_db"], ev["ssim"]])
    if out_csv:
        write_csv(out_csv, SWEEP_FIELDS, rows)
    return rows


ABLATION_FIELDS = ("preset", "initial_composite", "final_composite", "psnr_db", "ssim")


def run_presets(base: TrainConfig, presets=tuple(PRESETS), train: list[PairedSample] | None = None,
                held_out: list[PairedSample] | None = None, out_csv=None) -> list[list]:
    """Train once per loss preset with the same seed, data and batches; one result row per preset.

    Every run writes the same train.csv columns (all sub-losses are reported
    whether or not they are weighted), so the per-step logs line up.
    """
    train = train if train is not None else synth_pairs(64, base.crop, base.seed)
    held_out = held_out if held_out is not None else synth_pairs(8, base.crop, base.seed + 10_000)
    rows = []
    for name in presets:
        cfg = replace(base, preset=name,
                      out_dir=str(Path(base.out_dir) / name) if base.out_dir else None)
        res = train_toy(cfg, train)
        ev = evaluate(res.params, held_out)
        rows.append([name, res.initial_composite, res.final_composite, ev["psnr_db"], ev["ssim"]])
    if out_csv:
        write_csv(out_csv, ABLATION_FIELDS, rows)
    return rows
