"""The nine acceptance criteria, one test each.

Every test prints a single ``CRITERION n ...: PASS|FAIL`` line (capture is
bypassed so the line shows up in plain ``pytest`` output) and then asserts.
Criteria 7 and 8 train networks and take minutes; they are marked ``slow``
but run by default.
"""
import csv
import io
import itertools
import math
import time
from contextlib import redirect_stdout
from dataclasses import replace

import numpy as np
import pytest

from llfdisc import cli
from llfdisc import fourier as F
from llfdisc import gradcheck as G
from llfdisc.harness.data import synth_pairs
from llfdisc.harness.imageio import read_png, write_png
from llfdisc.harness.metrics import psnr_db
from llfdisc.harness.train import TRAIN_FIELDS, TrainConfig, evaluate, run_presets, train_toy
from llfdisc.losses import PRESETS, composite_loss, ms_ssim_loss, ssim
from llfdisc.network import NetworkConfig, dance_forward, init_params, llfdisc_forward, load_checkpoint
from llfdisc.perceptual_kl import seeded_extractor
from llfdisc.spectral_kl import GaussianParams, gaussian_kl
from llfdisc.tensor import Tensor

from .test_fourier import dft_oracle
from .test_network import block_tensors, dance_oracle, randomize
from .test_spectral_kl import exact_phase

TOY = TrainConfig(preset="full", steps=500, lr=2e-3, batch_size=4, crop=32, seed=0,
                  network=NetworkConfig(base_width=8))
ABLATION = TOY  # same scale as the enhancement run


def report(capsys, n, title, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_criterion_1_fourier_oracle(capsys):
    worst_fft = worst_parseval = worst_trip = 0.0
    for H, W in itertools.product([1, 2, 3, 4, 8], repeat=2):
        x = np.random.default_rng(H * 31 + W).random((2, 3, H, W))
        s = F.fft2d(x)
        worst_fft = max(worst_fft, np.abs(s.to_complex() - dft_oracle(x)).max())
        energy = (x ** 2).sum(axis=(-2, -1))
        spec = (s.real.data ** 2 + s.imag.data ** 2).sum(axis=(-2, -1))
        worst_parseval = max(worst_parseval, (np.abs(spec - energy) / energy).max())
        worst_trip = max(worst_trip, np.abs(F.ifft2d(s).data - x).max())
    ok = worst_fft < 1e-10 and worst_parseval < 1e-10 and worst_trip < 1e-10
    report(capsys, 1, "Fourier oracle equivalence", ok,
           f"fft {worst_fft:.1e}, parseval {worst_parseval:.1e}, round trip {worst_trip:.1e}")


def test_criterion_2_closed_form_kl(capsys):
    hand = [
        (gaussian_kl(GaussianParams(0.3, 2.0), GaussianParams(0.3, 2.0)), 0.0),
        (gaussian_kl(GaussianParams(1.0, 1.0), GaussianParams(0.0, 1.0)), 0.5),
        (gaussian_kl(GaussianParams(0.0, 1.0), GaussianParams(0.0, 4.0)), math.log(2) + 1 / 8 - 1 / 2),
    ]
    err = max(abs(got - want) for got, want in hand)
    rng = np.random.default_rng(2024)
    n = 10_000
    p = GaussianParams(Tensor(rng.normal(0, 3, n)), Tensor(np.exp(rng.uniform(-8, 4, n))))
    q = GaussianParams(Tensor(rng.normal(0, 3, n)), Tensor(np.exp(rng.uniform(-8, 4, n))))
    low = gaussian_kl(p, q).data.min()
    report(capsys, 2, "Closed-form KL", err < 1e-12 and low >= 0,
           f"hand error {err:.1e}, min over {n} pairs {low:.3g}")


def test_criterion_3_amplitude_swap(capsys):
    a = np.random.default_rng(3).random((2, 3, 16, 12))
    b = 0.25 * a
    a2, b2 = F.amplitude_swap(a, b)
    err = max(np.abs(a2.data - b).max(), np.abs(b2.data - a).max())
    report(capsys, 3, "Amplitude-swap scaling", err < 1e-10, f"max error {err:.1e}")


def test_criterion_4_gradient_suite(capsys):
    start = time.process_time()
    worst = {}
    for name in G.TARGETS:
        for seed in (0, 1, 2):
            err, tol = G.run(name, seed)
            worst[name] = max(worst.get(name, 0.0), err / tol)
    cpu = time.process_time() - start
    failing = [k for k, v in worst.items() if not v < 1]
    ok = not failing and cpu < 300
    detail = ", ".join(f"{k} {v:.2g}" for k, v in worst.items())
    report(capsys, 4, "Gradient suite", ok,
           f"worst error / tolerance: {detail}; {cpu:.0f} CPU-s" + (f"; failing {failing}" if failing else ""))


def test_criterion_5_identity_at_init(capsys, tmp_path):
    x = np.random.default_rng(5).random((2, 3, 16, 20))
    exact = np.array_equal(llfdisc_forward(x, init_params(NetworkConfig(base_width=8))).data, x)
    img = np.random.default_rng(6).random((13, 18, 3))
    write_png(tmp_path / "in.png", img)
    with redirect_stdout(io.StringIO()):
        codes = [cli.main(["init-checkpoint", str(tmp_path / "ck.bin")]),
                 cli.main(["enhance", "--checkpoint", str(tmp_path / "ck.bin"),
                           str(tmp_path / "in.png"), str(tmp_path / "out.png")])]
    same = (tmp_path / "out.png").read_bytes() == (tmp_path / "in.png").read_bytes()
    same_pixels = np.array_equal(read_png(tmp_path / "out.png"), read_png(tmp_path / "in.png"))
    report(capsys, 5, "Identity at init", exact and same and same_pixels and codes == [0, 0],
           f"forward exact {exact}, PNG bytes identical {same}")


def test_criterion_6_dance_fidelity(capsys):
    worst = 0.0
    for i in range(10):
        rng = np.random.default_rng(600 + i)
        width = (4, 8, 16)[i % 3]
        p = init_params(NetworkConfig(base_width=width, seed=i)).lca0.dance
        randomize(block_tensors(p), rng, scale=rng.uniform(0.1, 0.6))
        x = rng.normal(0, 1, (1 + i % 2, width, 4 + i % 5, 7))
        worst = max(worst, np.abs(dance_forward(x, p).data - dance_oracle(x, p)).max())
    report(capsys, 6, "DANCE equation fidelity", worst < 1e-12, f"max error over 10 instances {worst:.1e}")


@pytest.mark.slow
def test_criterion_7_toy_enhancement(capsys):
    train = synth_pairs(64, 32, seed=0)
    held = synth_pairs(8, 32, seed=10_000)
    start = time.process_time()
    res = train_toy(TOY, train)
    ev = evaluate(res.params, held)
    cpu = time.process_time() - start
    gain = ev["psnr_db"] - ev["input_psnr_db"]
    ratio = res.final_composite / res.initial_composite
    ok = gain >= 3.0 and ratio < 0.5 and cpu < 15 * 60
    report(capsys, 7, "Toy enhancement gain", ok,
           f"held-out PSNR {ev['input_psnr_db']:.2f} -> {ev['psnr_db']:.2f} dB (+{gain:.2f}); "
           f"composite {res.initial_composite:.4f} -> {res.final_composite:.4f} (x{ratio:.3f}); {cpu / 60:.1f} CPU-min")


@pytest.mark.slow
def test_criterion_8_ablation_parity(capsys, tmp_path):
    train = synth_pairs(64, 32, seed=0)
    held = synth_pairs(8, 32, seed=10_000)
    start = time.process_time()
    rows = run_presets(replace(ABLATION, out_dir=str(tmp_path)), tuple(PRESETS), train, held,
                       out_csv=tmp_path / "ablation.csv")
    cpu = time.process_time() - start
    logs = {name: list(csv.reader(open(tmp_path / name / "train.csv"))) for name in PRESETS}
    headers_match = all(rows_[0] == list(TRAIN_FIELDS) for rows_ in logs.values())
    lengths = {len(r) for r in logs.values()}
    finite = all(math.isfinite(float(v)) for r in logs.values() for line in r[1:] for v in line)
    # every run sees the same first batch from the same init, so step-0 sub-losses agree
    first = {tuple(r[1][1:-1]) for r in logs.values()}
    # Fourier term of the trained Base+L_F model's output vs a direct amplitude/phase MSE
    params = load_checkpoint(tmp_path / "base+f" / "checkpoint.bin")
    pred = llfdisc_forward(held[0].low[None], params).data
    truth = held[0].normal[None]
    Xp, Xt = dft_oracle(pred), dft_oracle(truth)
    oracle = np.mean((np.abs(Xp) - np.abs(Xt)) ** 2) + np.mean((exact_phase(Xp) - exact_phase(Xt)) ** 2)
    l_f = composite_loss(pred, truth, PRESETS["base+f"], seeded_extractor(42)).l_f
    f_err = abs(l_f - oracle)
    ok = (len(rows) == 6 and headers_match and lengths == {ABLATION.steps + 1} and finite
          and len(first) == 1 and f_err < 1e-10 and cpu < 90 * 60)
    summary = "; ".join(f"{r[0]} {r[2]:.3f}/{r[3]:.2f}dB" for r in rows)
    report(capsys, 8, "Ablation harness parity", ok,
           f"final composite/held-out PSNR: {summary}; L_F oracle error {f_err:.1e}; {cpu / 60:.1f} CPU-min")


def test_criterion_9_metric_sanity(capsys):
    z = np.zeros((3, 16, 16))
    p = psnr_db(z + 1 / 255, z)
    x = np.random.default_rng(9).random((1, 3, 32, 32))
    s = ssim(x, x).item()
    m = ms_ssim_loss(x, x).item()
    big = np.random.default_rng(10).random((1, 3, 64, 64))
    m_big = ms_ssim_loss(big, big).item()
    ok = abs(p - 48.13) <= 0.01 and s == 1.0 and m == 0.0 and m_big == 0.0
    report(capsys, 9, "Metric sanity", ok, f"PSNR {p:.4f} dB, SSIM(x,x) {s!r}, MS-SSIM loss {m!r}/{m_big!r}")
