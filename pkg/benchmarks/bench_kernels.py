"""Time one SGD step (forward + backward) with the compiled and the numpy kernels.

    python benchmarks/bench_kernels.py --batch 32 --width 32 --layers 8 --rank 4
"""

import argparse
import timeit

import numpy as np

from fedra.kernels import RELU, get_backend


def make_inputs(batch, width, layers, rank, classes, seed=0):
    rng = np.random.default_rng(seed)
    return dict(
        H0=rng.normal(size=(batch, width)),
        W=rng.normal(0, 0.6 / np.sqrt(width), size=(layers, width, width)),
        b=np.zeros((layers, width)),
        D=rng.normal(0, 0.02, size=(layers, rank, width)),
        U=rng.normal(0, 0.02, size=(layers, width, rank)),
        scale=np.ones(layers),
        Wh=rng.normal(0, 0.1, size=(classes, width)),
        bh=np.zeros(classes),
        labels=rng.integers(0, classes, size=batch).astype(np.intp),
    )


def step_fn(mod, a):
    gD, gU = np.empty_like(a["D"]), np.empty_like(a["U"])
    gW, gb = np.empty_like(a["Wh"]), np.empty_like(a["bh"])

    def step():
        return mod.forward_backward(a["H0"], a["W"], a["b"], a["D"], a["U"], a["scale"], RELU,
                                    a["Wh"], a["bh"], a["labels"], gD, gU, gW, gb)
    return step


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--layers", type=int, default=8)
    ap.add_argument("--rank", type=int, default=4)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    a = make_inputs(args.batch, args.width, args.layers, args.rank, args.classes)
    timings = {}
    for name in ("cython", "python"):
        try:
            mod = get_backend(name)
        except ImportError:
            print(f"{name:>7}: unavailable")
            continue
        fn = step_fn(mod, a)
        number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
        best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
        timings[name] = best
        print(f"{name:>7}: {best * 1e6:9.1f} us/step  (loss {fn():.6f})")
    if len(timings) == 2:
        print(f"speedup: {timings['python'] / timings['cython']:.2f}x")


if __name__ == "__main__":
    main()
