"""Command-line interface.

Exit status: 0 on success, 1 on invalid input or configuration, 2 on a
numerical failure (non-finite values, diverged training).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import fourier, gradcheck
from . import tensor as T
from .harness.config import load_config
from .harness.data import load_paired_dir, save_pairs, synth_pairs
from .harness.imageio import hwc_to_batch, read_png, write_png
from .harness.metrics import metrics
from .harness.train import (ABLATION_FIELDS, DEFAULT_SWEEP, SWEEP_FIELDS, TrainConfig, enhance, evaluate,
                            run_presets, sweep_fkl_weight, train_toy)
from .losses import PRESETS, TERMS, LossReport, composite_loss, preset
from .network import NetworkConfig, init_params, load_checkpoint, save_checkpoint
from .perceptual_kl import feature_kl_loss, resolve_extractor
from .spectral_kl import fourier_kl_loss

log = logging.getLogger("llfdisc")


def _writer():
    return csv.writer(sys.stdout, lineterminator="\n")


def _num(v: float) -> str:
    return repr(float(v))


def _load_pair(pred_path, truth_path):
    pred, truth = read_png(pred_path), read_png(truth_path)
    if pred.shape != truth.shape:
        raise ValueError(f"image sizes differ: {pred_path} {pred.shape} vs {truth_path} {truth.shape}")
    return hwc_to_batch(pred), hwc_to_batch(truth)


# ---------------------------------------------------------------- subcommands

def cmd_amp_swap(args):
    a, b = _load_pair(args.image_a, args.image_b)
    with T.no_grad():
        a_new, b_new = fourier.amplitude_swap(a, b)
        sa, sb = fourier.fft2d(a), fourier.fft2d(b)
        maps = {
            "a_amplitude": fourier.log_amplitude_image(fourier.amplitude(sa).data),
            "a_phase": fourier.phase_image(fourier.phase(sa).data),
            "b_amplitude": fourier.log_amplitude_image(fourier.amplitude(sb).data),
            "b_phase": fourier.phase_image(fourier.phase(sb).data),
        }
    out = Path(args.outdir)
    write_png(out / "a_with_b_amplitude.png", a_new.data[0].transpose(1, 2, 0))
    write_png(out / "b_with_a_amplitude.png", b_new.data[0].transpose(1, 2, 0))
    for name, img in maps.items():
        write_png(out / f"{name}.png", img[0].transpose(1, 2, 0))
    w = _writer()
    w.writerow(["image", "mean_before", "mean_after"])
    w.writerow(["a", _num(a.mean()), _num(a_new.data.mean())])
    w.writerow(["b", _num(b.mean()), _num(b_new.data.mean())])


def cmd_loss_eval(args):
    pred, truth = _load_pair(args.pred, args.truth)
    w = _writer()
    with T.no_grad():
        if args.loss == "fkl":
            br = fourier_kl_loss(pred, truth, scope=args.scope, reverse=args.reverse)
            w.writerow(["d_amp", "d_pha", "total"])
            w.writerow([_num(v) for v in br.as_floats()])
        elif args.loss == "vggkl":
            w.writerow(["l_vggkl"])
            w.writerow([_num(feature_kl_loss(pred, truth, resolve_extractor(args.extractor)).item())])
        else:
            rep = composite_loss(pred, truth, preset(args.preset), resolve_extractor(args.extractor))
            w.writerow(LossReport.CSV_FIELDS)
            w.writerow([_num(v) for v in rep.row()])


def cmd_gradcheck(args):
    targets = gradcheck.TARGETS if args.target == "all" else (args.target,)
    w = _writer()
    w.writerow(["target", "seed", "max_rel_error", "tolerance", "pass"])
    failed = False
    for name in targets:
        for seed in args.seeds:
            err, tol = gradcheck.run(name, seed)
            failed |= not err < tol
            w.writerow([name, seed, _num(err), tol, "yes" if err < tol else "no"])
            sys.stdout.flush()
    return 2 if failed else 0


def cmd_synth_data(args):
    pairs = synth_pairs(args.count, args.size, args.seed)
    save_pairs(pairs, args.outdir)
    w = _writer()
    w.writerow(["id", "input_psnr_db", "input_ssim"])
    for p in pairs:
        m = metrics(p.low, p.normal)
        w.writerow([p.id, _num(m.psnr_db), _num(m.ssim)])


def _train_settings(args) -> dict:
    """Config file values overridden by explicitly given flags."""
    cfg = load_config(args.config) if args.config else {}
    for key in ("preset", "steps", "lr", "batch_size", "crop", "seed", "width", "extractor",
                "out", "count", "size", "data", "held_out", "heads"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    for item in args.weight or []:
        term, _, value = item.partition("=")
        if term not in TERMS:
            raise ValueError(f"unknown loss term {term!r}; choose from {', '.join(TERMS)}")
        cfg[f"weights.{term}"] = float(value)
    return cfg


def _build_train_config(cfg: dict) -> TrainConfig:
    net = NetworkConfig(
        base_width=cfg.get("width", 8),
        heads=tuple(cfg.get("heads", (1, 2, 4))),
        leaky_slope=cfg.get("leaky_slope", 0.01),
        se_reduction=cfg.get("se_reduction", 4),
        global_residual=cfg.get("global_residual", True),
        seed=cfg.get("seed", 0),
    )
    weights = {k[8:]: v for k, v in cfg.items() if k.startswith("weights.")}
    tc = TrainConfig(preset=cfg.get("preset", "full"), weights=weights, steps=cfg.get("steps", 500),
                     lr=cfg.get("lr", 2e-3), batch_size=cfg.get("batch_size", 4),
                     crop=cfg.get("crop", 32), seed=cfg.get("seed", 0), network=net,
                     extractor=cfg.get("extractor", "seed:42"), out_dir=cfg.get("out"))
    tc.validate()
    return tc


def _datasets(cfg: dict, tc: TrainConfig):
    if "data" in cfg:
        train = load_paired_dir(cfg["data"])
    else:
        train = synth_pairs(cfg.get("count", 64), cfg.get("size", tc.crop), tc.seed)
    held = synth_pairs(cfg.get("held_out", 8), cfg.get("size", tc.crop), tc.seed + 10_000)
    return train, held


def cmd_train_toy(args):
    cfg = _train_settings(args)
    tc = _build_train_config(cfg)
    if not tc.out_dir:
        raise ValueError("train-toy needs an output directory (--out or out = ... in the config)")
    train, held = _datasets(cfg, tc)
    res = train_toy(tc, train)
    ev = evaluate(res.params, held)
    w = _writer()
    w.writerow(["initial_composite", "final_composite", "psnr_db", "ssim", "input_psnr_db", "input_ssim"])
    w.writerow([_num(v) for v in (res.initial_composite, res.final_composite, ev["psnr_db"], ev["ssim"],
                                  ev["input_psnr_db"], ev["input_ssim"])])


def cmd_sweep_fkl(args):
    cfg = _train_settings(args)
    if args.weights:
        cfg["sweep"] = tuple(float(v) for v in args.weights.split(","))
    tc = _build_train_config(cfg)
    if not tc.out_dir:
        raise ValueError("sweep-fkl needs an output directory (--out or out = ... in the config)")
    train, held = _datasets(cfg, tc)
    Path(tc.out_dir).mkdir(parents=True, exist_ok=True)
    rows = sweep_fkl_weight(tc, cfg.get("sweep", DEFAULT_SWEEP), train, held,
                            out_csv=Path(tc.out_dir) / "sweep.csv")
    w = _writer()
    w.writerow(SWEEP_FIELDS)
    for r in rows:
        w.writerow([_num(v) for v in r])


def cmd_ablation(args):
    cfg = _train_settings(args)
    tc = _build_train_config(cfg)
    if not tc.out_dir:
        raise ValueError("ablation needs an output directory (--out or out = ... in the config)")
    names = tuple(args.presets.split(",")) if args.presets else tuple(PRESETS)
    for n in names:
        preset(n)
    train, held = _datasets(cfg, tc)
    Path(tc.out_dir).mkdir(parents=True, exist_ok=True)
    rows = run_presets(tc, names, train, held, out_csv=Path(tc.out_dir) / "ablation.csv")
    w = _writer()
    w.writerow(ABLATION_FIELDS)
    for r in rows:
        w.writerow([r[0]] + [_num(v) for v in r[1:]])


def _png_pairs(a, b):
    a, b = Path(a), Path(b)
    if a.is_dir():
        names = sorted(p.name for p in a.glob("*.png"))
        return [(n, a / n, b / n) for n in names]
    return [(a.stem, a, b)]


def cmd_enhance(args):
    params = load_checkpoint(args.checkpoint)
    for _, src, dst in _png_pairs(args.input, args.output):
        write_png(dst, enhance(read_png(src), params))


def cmd_metrics(args):
    w = _writer()
    w.writerow(["id", "psnr_db", "ssim"])
    for name, pp, tp in _png_pairs(args.pred, args.truth):
        p, t = _load_pair(pp, tp)
        m = metrics(p, t, id=name)
        w.writerow([m.id, _num(m.psnr_db), _num(m.ssim)])


def cmd_init_checkpoint(args):
    save_checkpoint(init_params(NetworkConfig(base_width=args.width, seed=args.seed)), args.output)


# ---------------------------------------------------------------- parser

def _add_train_flags(p):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--crop", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--width", type=int, help="base channel width")
    p.add_argument("--heads", type=lambda s: tuple(int(v) for v in s.split(",")))
    p.add_argument("--extractor", help="seed:N or extractor weight file")
    p.add_argument("--count", type=int, help="number of synthetic training pairs")
    p.add_argument("--size", type=int, help="synthetic image size")
    p.add_argument("--held-out", dest="held_out", type=int, help="number of held-out pairs")
    p.add_argument("--data", help="directory with low/ and high/ PNG pairs")
    p.add_argument("--weight", action="append", metavar="TERM=VALUE", help="override one loss weight")
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="llfdisc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("amp-swap", help="exchange amplitude spectra of two images")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("outdir")
    p.set_defaults(fn=cmd_amp_swap)

    p = sub.add_parser("loss-eval", help="evaluate losses between two PNGs")
    p.add_argument("--loss", choices=("fkl", "vggkl", "all"), default="all")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--extractor", default="seed:42")
    p.add_argument("--scope", choices=("channel", "joint"), default="channel")
    p.add_argument("--reverse", action="store_true", help="KL(truth || pred) for the Fourier KL")
    p.add_argument("pred")
    p.add_argument("truth")
    p.set_defaults(fn=cmd_loss_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--target", choices=("all",) + gradcheck.TARGETS, default="all")
    p.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")], default=[0, 1, 2])
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("synth-data", help="write synthetic low/high PNG pairs")
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("outdir")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train-toy", help="train a small network")
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train_toy)

    p = sub.add_parser("sweep-fkl", help="train once per Fourier-KL weight")
    _add_train_flags(p)
    p.add_argument("--weights", help="comma list of weights (default 0,0.001,0.01,0.1,0.5,1)")
    p.set_defaults(fn=cmd_sweep_fkl)

    p = sub.add_parser("ablation", help="train once per loss preset under identical seeds")
    _add_train_flags(p)
    p.add_argument("--presets", help=f"comma list (default {','.join(PRESETS)})")
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser("enhance", help="enhance a PNG (or a directory of PNGs)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(fn=cmd_enhance)

    p = sub.add_parser("metrics", help="PSNR/SSIM between PNGs (or same-named PNGs in two dirs)")
    p.add_argument("pred")
    p.add_argument("truth")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("init-checkpoint", help="write a freshly initialized checkpoint")
    p.add_argument("--width", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("output")
    p.set_defaults(fn=cmd_init_checkpoint)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; those are invalid input here
        return 1 if exc.code == 2 else exc.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args) or 0
    except ArithmeticError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
