"""Time the hot kernels and a small forward pass on every available backend.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 160]

Each row reports the best-of-N wall time per backend and the speedup of the
compiled kernels over the numpy fallback, plus the max abs difference between
backend outputs.
"""
import argparse
import time

import numpy as np

from cotondet import graph
from cotondet import numerics as nx


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng, size):
    s = size // 4
    x64 = rng.standard_normal((1, 64, s, s))
    x3 = rng.standard_normal((1, 3, size, size))
    dense = nx.ConvParams.random(rng, 64, 64, 3, padding=1)
    pw = nx.ConvParams.random(rng, 64, 128, 1)
    dw = nx.ConvParams.random(rng, 64, 64, 3, stride=2, padding=1, groups=64)
    stem = nx.ConvParams.random(rng, 3, 16, 3, stride=2, padding=1)
    kernels = nx.softmax(rng.standard_normal((1, 25, 2 * s, 2 * s)), axis=1)
    g = graph.load_preset("cotonet")
    weights = graph.build_weights(g, seed=0)
    xin = rng.uniform(0, 1, (1, 3, size, size))
    return {
        f"conv 3x3 64->64 @{s}": lambda: nx.conv2d(x64, dense),
        f"conv 1x1 64->128 @{s}": lambda: nx.conv2d(x64, pw),
        f"depthwise 3x3 s2 @{s}": lambda: nx.conv2d(x64, dw),
        f"stem 3x3 s2 3->16 @{size}": lambda: nx.conv2d(x3, stem),
        f"maxpool 5x5 @{s}": lambda: nx.max_pool2d(x64, 5, 1, 2),
        f"carafe reassembly k5 @{s}": lambda: nx.carafe_reassemble(x64, kernels, 5, 2),
        f"cotonet forward @{size}": lambda: graph.forward(g, xin, weights=weights)[0],
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=160, help="input size, divisible by 32")
    args = ap.parse_args(argv)
    backends = nx.backend.available()
    bench = cases(np.random.default_rng(0), args.size)
    print(f"backends: {', '.join(backends)}; best of {args.repeat}")
    head = f"{'case':<30}" + "".join(f"{b + ' ms':>14}" for b in backends)
    if len(backends) > 1:
        head += f"{'speedup':>10}{'max diff':>11}"
    print(head)
    for name, fn in bench.items():
        times, outs = {}, {}
        for b in backends:
            with nx.backend.use(b):
                times[b], outs[b] = best_of(fn, args.repeat)
        row = f"{name:<30}" + "".join(f"{times[b] * 1e3:14.2f}" for b in backends)
        if len(backends) > 1:
            diff = float(np.abs(outs["compiled"] - outs["python"]).max())
            row += f"{times['python'] / times['compiled']:9.1f}x{diff:11.1e}"
        print(row)


if __name__ == "__main__":
    main()
