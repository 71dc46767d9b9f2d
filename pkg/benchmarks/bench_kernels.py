"""Time the numba and numpy kernel paths side by side and check they agree.

    python3 benchmarks/bench_kernels.py [--bits N] [--repeat R]
"""

import argparse
import time

import numpy as np

from fecnn import kernels


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bits", type=int, default=12_000 * 32, help="bits per flip call (default: one desk model)")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    bits = rng.integers(0, 2, size=(args.bits // 32, 32), dtype=np.uint8)
    prot = (rng.random(bits.shape) < 0.2).astype(np.uint8)
    key = kernels.derive_seed(1, 2)

    cases = {
        "uniform_stream": (
            lambda: kernels.uniform_stream_numpy(key, 0, args.bits),
            lambda: kernels.uniform_stream_numba(key, 0, args.bits),
        ),
    }
    for name, code in (("symmetric", kernels.SYMMETRIC), ("zero_to_one", kernels.ZERO_TO_ONE)):
        cases[f"flip_bits[{name}]"] = (
            lambda c=code: kernels.flip_bits_numpy(bits, prot, key, 0.01, c),
            lambda c=code: kernels.flip_bits_numba(bits, prot, key, 0.01, c),
        )

    print(f"active backend: {kernels.backend()}  bits/call: {args.bits}")
    print(f"{'kernel':<24}{'numpy ms':>10}{'numba ms':>10}{'speed-up':>10}  equal")
    for name, (np_fn, nb_fn) in cases.items():
        same = np.array_equal(np_fn(), nb_fn())
        t_np = best_of(np_fn, args.repeat)
        t_nb = best_of(nb_fn, args.repeat)
        print(f"{name:<24}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
