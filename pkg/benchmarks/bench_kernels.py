"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N time per call for each kernel and for one full training
step (forward, composite loss, backward) of the width-8 network on a batch of
four 32x32 crops. Both backends produce bit-identical results; this only
measures speed.
"""
import argparse
import timeit

import numpy as np

from llfdisc import _backend
from llfdisc import tensor as T
from llfdisc.losses import LossWeights, composite_loss
from llfdisc.network import NetworkConfig, init_params, llfdisc_forward
from llfdisc.perceptual_kl import seeded_extractor


def kernel_cases(rng):
    xp = rng.random((4, 32, 34, 34))
    cols = rng.random((4, 32, 3, 3, 32, 32))
    planes = rng.random((12, 64 * 64))
    table = rng.normal(size=(12, 256))
    return {
        "im2col 4x32x34x34 k3": lambda k: k.im2col(xp, 3, 3, 1, 32, 32),
        "col2im 4x32 k3 -> 34x34": lambda k: k.col2im(cols, 34, 34, 1),
        "soft_hist 12x4096": lambda k: k.soft_hist(planes, 256),
        "soft_hist_grad 12x4096": lambda k: k.soft_hist_grad(planes, table, 256),
        "soft_hist_gather 12x4096": lambda k: k.soft_hist_gather(planes, table, 256),
    }


def train_step_case(rng):
    params = init_params(NetworkConfig(base_width=8))
    params.out.weight.data = rng.normal(0.0, 0.05, params.out.weight.shape)
    tensors = params.tensors()
    for t in tensors:
        t.requires_grad = True
    x = T.Tensor(rng.random((4, 3, 32, 32)) * 0.3)
    y = T.Tensor(rng.random((4, 3, 32, 32)))
    weights, extractor = LossWeights(), seeded_extractor(42)

    def step(_):
        rep = composite_loss(llfdisc_forward(x, params), y, weights, extractor)
        T.grad(rep.tensor, tensors)

    return step


def best(fn, arg, repeat, number):
    return min(timeit.repeat(lambda: fn(arg), repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = ["compiled", "python"] if _backend.compiled_available() else ["python"]
    if len(backends) == 1:
        print("compiled kernels not built; timing the pure-Python backend only")
    cases = dict(kernel_cases(rng))
    cases["training step (width 8, 4x32x32)"] = train_step_case(rng)
    print(f"{'case':<36}" + "".join(f"{b:>14}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    original = _backend.BACKEND
    try:
        for name, fn in cases.items():
            times = []
            for b in backends:
                _backend.use(b)
                number = 1 if name.startswith("training") else 10
                times.append(best(fn, _backend.kernels, args.repeat, number))
            line = f"{name:<36}" + "".join(f"{t * 1e3:>12.3f}ms" for t in times)
            if len(times) == 2:
                line += f"{times[1] / times[0]:>9.2f}x"
            print(line)
    finally:
        _backend.use(original)


if __name__ == "__main__":
    main()
