"""Numba vs numpy timings for the loop-heavy kernels.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Both paths are imported directly, so the KGAE_DISABLE_NUMBA flag does not
matter here. The first numba call (compilation) is excluded.
"""
import argparse
import timeit

import numpy as np

from kgae import kernels as K


def cases(rng):
    x = rng.normal(size=(16, 8, 28, 28))
    cols = K.im2col_numpy(x, 4, 4, 2, 1)
    a = rng.integers(0, 30, size=60)
    b = rng.integers(0, 30, size=60)
    p = rng.normal(size=200_000)
    g = rng.normal(size=200_000)

    def adam(fn):
        m, v, q = np.zeros_like(p), np.zeros_like(p), p.copy()
        return lambda: fn(q, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.001)

    return [
        ("im2col 16x8x28x28 k4 s2", lambda: K.im2col_numpy(x, 4, 4, 2, 1), lambda: K.im2col_numba(x, 4, 4, 2, 1)),
        ("col2im 16x8x28x28 k4 s2", lambda: K.col2im_numpy(cols, x.shape, 4, 4, 2, 1),
         lambda: K.col2im_numba(cols, x.shape, 4, 4, 2, 1)),
        ("lcs 60x60", lambda: K.lcs_length_numpy(a, b), lambda: K.lcs_length_numba(a, b)),
        ("adam 200k params", adam(K.adam_update_numpy), adam(K.adam_update_numba)),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, np_fn, nb_fn in cases(np.random.default_rng(0)):
        nb_fn()  # compile
        t_np = min(timeit.repeat(np_fn, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(nb_fn, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
