"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each row reports the best-of-N wall time per call for both backends and
the speedup. Outputs are compared before timing.
"""
import argparse
import timeit

import numpy as np

from egcnn import kernels


def cases(rng):
    # word-level conv on a default-size minibatch, char-level conv on its words
    x = rng.standard_normal((32, 100, 250))
    w = rng.standard_normal((5, 250, 128))
    b = rng.standard_normal(128)
    g = rng.standard_normal((32, 96, 128))
    xc = rng.standard_normal((3200, 16, 16))
    wc = rng.standard_normal((3, 16, 50))
    bc = rng.standard_normal(50)
    gc = rng.standard_normal((3200, 14, 50))
    pool = rng.standard_normal((32, 96, 128))
    A, V, D, n = 20, 2000, 200, 20000
    words = rng.integers(0, V, n).astype(np.int64)
    docs = np.sort(rng.integers(0, D, n)).astype(np.int64)
    z0 = rng.integers(0, A, n).astype(np.int64)
    u = rng.random(n)

    def gibbs(mod):
        z = z0.copy()
        n_dt = np.zeros((D, A), np.int64)
        n_tw = np.zeros((A, V), np.int64)
        np.add.at(n_dt, (docs, z), 1)
        np.add.at(n_tw, (z, words), 1)
        n_t = n_tw.sum(axis=1)
        mod.gibbs_sweep(words, docs, z, n_dt, n_tw, n_t, 2.5, 0.01, u)
        return z

    return {
        "conv fwd (32x100x250, f=5, C=128)": lambda mod: mod.conv1d_forward(x, w, b),
        "conv bwd (32x100x250, f=5, C=128)": lambda mod: mod.conv1d_backward(x, w, g),
        "char conv fwd (3200x16x16, C=50)": lambda mod: mod.conv1d_forward(xc, wc, bc),
        "char conv bwd (3200x16x16, C=50)": lambda mod: mod.conv1d_backward(xc, wc, gc),
        "max-pool fwd (32x96x128)": lambda mod: mod.maxpool_forward(pool),
        "gibbs sweep (20k tokens, A=20)": gibbs,
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, atol=1e-9)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "compiled" not in kernels.BACKENDS:
        print("compiled extension not built; nothing to compare")
        return 1
    c, py = kernels.get_backend("compiled"), kernels.get_backend("python")
    print(f"{'kernel':<36} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for name, fn in cases(np.random.default_rng(0)).items():
        if not _same(fn(c), fn(py)):
            raise SystemExit(f"{name}: backends disagree")
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: fn(c), number=1, repeat=args.repeat))
        print(f"{name:<36} {t_py * 1e3:>10.2f} {t_c * 1e3:>12.2f} {t_py / t_c:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
