"""Time the compiled and pure-Python kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 20] [--dtype float32]

Also checks that both backends give bit-identical results.
"""

import argparse
import timeit

import numpy as np

from ttlbp._kernels import available_backends, get_backend


def cases(dtype, rng):
    B, C, H = 32, 16, 28
    u = rng.standard_normal((B, C, H, H)).astype(dtype)
    s = (rng.random((B, C, H, H)) < 0.2).astype(dtype)
    syn = rng.standard_normal((B, C, H, H)).astype(dtype)
    g = rng.standard_normal((B, C, H, H)).astype(dtype)
    x = (rng.random((B, 6, H, H)) < 0.3).astype(dtype)
    cols = rng.standard_normal((B, 6 * 25, (H - 4) ** 2)).astype(dtype)
    pooled = rng.standard_normal((B, C, H // 2, H // 2)).astype(dtype)
    return {
        "lif_forward": lambda k: k.lif_forward(u, s, syn, 0.9, 0.5, 0.5),
        "lif_backward": lambda k: k.lif_backward(syn, g, u, 0.9, 0.5, 0.5, 0.5),
        "im2col": lambda k: k.im2col(x, 5, 1, 0),
        "col2im": lambda k: k.col2im(cols, x.shape, 5, 1, 0),
        "avgpool_forward": lambda k: k.avgpool_forward(u, 2, 2),
        "avgpool_backward": lambda k: k.avgpool_backward(pooled, u.shape, 2, 2),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b) and a.dtype == b.dtype


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--dtype", default="float64", choices=["float32", "float64"])
    args = ap.parse_args(argv)

    names = available_backends()
    backends = {n: get_backend(n) for n in names}
    work = cases(np.dtype(args.dtype), np.random.default_rng(0))
    print(f"backends: {', '.join(names)}  dtype={args.dtype}  repeat={args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}{'bitwise':>9}")
    for kname, fn in work.items():
        times, outs = {}, {}
        for n, k in backends.items():
            outs[n] = fn(k)
            times[n] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
        speed = times["python"] / times["c"] if "c" in times else float("nan")
        same = all(_same(outs[names[0]], o) for o in outs.values())
        print(f"{kname:<18}" + "".join(f"{times[n]:>12.3f}" for n in names) + f"{speed:>10.2f}{str(same):>9}")


if __name__ == "__main__":
    main()
