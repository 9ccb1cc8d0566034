"""Time the numba and numpy paths of each kernel on representative sizes.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call compiles (or loads the on-disk cache); it is run once
before timing so the numbers reflect steady-state speed.
"""

import argparse
import time

import numpy as np

from quap import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    images = rng.random((1500, 28, 28, 1))
    tile = rng.uniform(-0.3, 0.3, (1, 7, 7, 1))
    points = rng.random((3000, 784))
    base = rng.normal(size=(2000, 2))
    contrib = rng.normal(scale=0.1, size=(2000, 16, 2, 2))
    labels = rng.integers(0, 2, 2000)
    return {
        "perturb_clip 1500x28x28, shared 7x7 tile": lambda nb: _kernels.perturb_clip(images, tile, use_numba=nb),
        "pairwise_linf 3000x784": lambda nb: _kernels.pairwise_linf(points, 0.6, use_numba=nb),
        "sign_pattern_scan 2000 images, 2^16 patterns": lambda nb: _kernels.sign_pattern_scan(base, contrib, labels, use_numba=nb),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed; install the 'fast' extra to compare backends")
    rng = np.random.default_rng(0)
    print(f"{'kernel':48s} {'numpy s':>9s} {'numba s':>9s} {'speedup':>8s}")
    for name, run in cases(rng).items():
        run(True)  # compile
        t_np = best_of(lambda: run(False), args.repeat)
        t_nb = best_of(lambda: run(True), args.repeat)
        print(f"{name:48s} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
