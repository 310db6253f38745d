"""Time the numba and pure-numpy variants of each hot kernel.

    python benchmarks/bench_kernels.py [--repeat 20]

Both variants are imported directly, so the GOLDIPROX_DISABLE_NUMBA flag
does not matter here.  The first numba call (compilation) is excluded.
"""

import argparse
import timeit

import numpy as np

from goldiprox import _kernels as K


def cases(rng):
    logits = rng.normal(size=(320, 10)) * 3
    labels = rng.integers(0, 10, size=320)
    probs = rng.dirichlet(np.ones(10), size=(10 * 320))
    scores = np.round(rng.normal(size=8000), 2)  # plenty of ties
    blob = rng.integers(0, 256, size=2_000_000, dtype=np.uint8).tobytes()
    return {
        "xent 320x10": (K.xent_numpy, K.xent_numba, (logits, labels)),
        "entropy_rows 3200x10": (K.entropy_rows_numpy, K.entropy_rows_numba, (probs,)),
        "average_ranks 8000": (K.average_ranks_numpy, K.average_ranks_numba, (scores,)),
        "fnv1a64 2MB": (K.fnv1a64_numpy, K.fnv1a64_numba, (blob,)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, (f_np, f_nb, a) in cases(rng).items():
        n = 1 if name.startswith("fnv") else args.repeat
        t_np = min(timeit.repeat(lambda: f_np(*a), number=1, repeat=n)) * 1e3
        if K.HAVE_NUMBA:
            f_nb(*a)
            t_nb = min(timeit.repeat(lambda: f_nb(*a), number=1, repeat=n)) * 1e3
            print(f"{name:24s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:7.1f}x")
        else:
            print(f"{name:24s} {t_np:10.3f} {'-':>10s}")


if __name__ == "__main__":
    main()
