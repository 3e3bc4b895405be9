"""Timing comparison of the JIT-compiled kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py
The active dispatch path follows EGOHAND_NUMBA (set 0 to force numpy);
this script times both implementations regardless of the dispatch choice.
"""

import time

import numpy as np

from egohand import _kernels
from egohand.synth import SynthParams, _hand_capsules, gen_frame

try:
    from numba import njit

    JIT_IMPLS = {
        "box_blur": njit(cache=True)(_kernels._box_blur_loops),
        "capsule_zfield": njit(cache=True)(_kernels._capsule_zfield_loops),
        "gaussian_stack": njit(cache=True)(_kernels._gaussian_stack_loops),
    }
except ImportError:
    JIT_IMPLS = None


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm up (and JIT-compile)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def main():
    rng = np.random.default_rng(0)
    params = SynthParams()
    mask = (rng.uniform(size=(512, 512)) > 0.9).astype(np.float64)
    left, right, _ = gen_frame(0, rng, params)
    segs = np.concatenate(
        [_hand_capsules(p, params.intrinsics) for p in (left, right) if p.present]
    )
    points = rng.uniform(40, 470, (21, 2))
    flags = np.ones(21, dtype=bool)

    cases = {
        "box_blur": ((mask, 3), {}),
        "capsule_zfield": ((512, 512, segs), {}),
        "gaussian_stack": ((points, flags, 512, 512, 3.0), {}),
    }

    print(f"dispatch backend: {_kernels.BACKEND}")
    print(f"{'kernel':<16} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, (args, _) in cases.items():
        t_np = timeit(_kernels.NUMPY_IMPLS[name], *args)
        if JIT_IMPLS is None:
            print(f"{name:<16} {t_np * 1e3:>12.2f} {'n/a':>12} {'n/a':>9}")
            continue
        t_nb = timeit(JIT_IMPLS[name], *args)
        print(f"{name:<16} {t_np * 1e3:>12.2f} {t_nb * 1e3:>12.2f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
