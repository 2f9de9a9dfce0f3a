"""Thinning and cleanup kernels: numba loops vs the vectorised numpy fallback.

    python benchmarks/bench_kernels.py [--repeats 5] [--masks 6]

Both backends run on the same generated 384x384 masks; the outputs are
checked for equality before any timing is reported.
"""
import argparse
import time

import numpy as np

from nervesynth import _jit
from nervesynth import _kernels as K
from nervesynth import datagen as G


def _time(fn, masks, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for m in masks:
            fn(m)
        best = min(best, time.perf_counter() - t0)
    return best / len(masks)


def thin(m):
    return K.cleanup(K.zhang_suen(m))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--masks", type=int, default=6)
    args = ap.parse_args(argv)

    masks = [G.gen_mask(i % 3, i)[0] for i in range(args.masks)]
    saved = _jit.backend()
    results = {}
    try:
        for name in ("numba", "numpy"):
            _jit.set_backend(name)
            outs = [thin(m) for m in masks]  # also warms the JIT
            results[name] = (outs, _time(K.zhang_suen, masks, args.repeats), _time(thin, masks, args.repeats))
    finally:
        _jit.set_backend(saved)

    for a, b in zip(results["numba"][0], results["numpy"][0]):
        if not np.array_equal(a, b):
            raise SystemExit("backends disagree")

    print(f"{args.masks} masks of 384x384, best of {args.repeats}")
    print(f"{'backend':<8} {'zhang_suen (ms)':>16} {'thin+cleanup (ms)':>18}")
    for name, (_, zs, full) in results.items():
        print(f"{name:<8} {1e3 * zs:>16.2f} {1e3 * full:>18.2f}")
    speed = results["numpy"][2] / results["numba"][2]
    print(f"numba speed-up on thin+cleanup: {speed:.1f}x (outputs identical)")


if __name__ == "__main__":
    main()
