"""Synthetic data, toy training, evaluation metrics and image I/O."""
from .data import PairedSample, load_paired_dir, synth_pairs
from .imageio import read_png, write_png
from .metrics import MetricsRow, metrics, psnr_db, ssim_value
from .train import TrainConfig, TrainingDiverged, enhance, sweep_fkl_weight, train_toy

__all__ = [
    "PairedSample", "load_paired_dir", "synth_pairs", "read_png", "write_png",
    "MetricsRow", "metrics", "psnr_db", "ssim_value", "TrainConfig", "TrainingDiverged",
    "enhance", "sweep_fkl_weight", "train_toy",
]
