import numpy as np
import pytest

from egcnn import kernels
from egcnn import _kernels_py as ref

compiled_only = pytest.mark.skipif("compiled" not in kernels.BACKENDS,
                                   reason="compiled extension not built")


def test_backend_selection():
    assert kernels.BACKEND in kernels.BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("gpu")


def test_python_conv_matches_direct_sum(rng):
    x = rng.standard_normal((2, 7, 3))
    w = rng.standard_normal((3, 3, 4))
    b = rng.standard_normal(4)
    out = ref.conv1d_forward(x, w, b)
    for n in range(2):
        for t in range(5):
            want = b + sum(x[n, t + j] @ w[j] for j in range(3))
            np.testing.assert_allclose(out[n, t], want, atol=1e-12)


@compiled_only
@pytest.mark.parametrize("shape", [(1, 2, 1, 1, 1), (4, 12, 9, 3, 5), (3, 30, 20, 5, 16)])
def test_conv_backends_agree(rng, shape):
    N, m, D, f, C = shape
    c = kernels.get_backend("compiled")
    x = rng.standard_normal((N, m, D))
    w = rng.standard_normal((f, D, C))
    b = rng.standard_normal(C)
    g = rng.standard_normal((N, m - f + 1, C))
    np.testing.assert_allclose(c.conv1d_forward(x, w, b), ref.conv1d_forward(x, w, b), atol=1e-11)
    for got, want in zip(c.conv1d_backward(x, w, g), ref.conv1d_backward(x, w, g)):
        np.testing.assert_allclose(got, want, atol=1e-11)


@compiled_only
def test_maxpool_backends_agree(rng):
    c = kernels.get_backend("compiled")
    x = rng.integers(-2, 3, size=(5, 6, 4)).astype(float)  # many ties
    out_c, idx_c = c.maxpool_forward(x)
    out_p, idx_p = ref.maxpool_forward(x)
    assert np.array_equal(out_c, out_p) and np.array_equal(idx_c, idx_p)
    g = rng.standard_normal((5, 4))
    assert np.array_equal(c.maxpool_backward(g, idx_c, 6), ref.maxpool_backward(g, idx_p, 6))


@compiled_only
def test_gibbs_backends_agree(rng):
    c = kernels.get_backend("compiled")
    A, V, D = 3, 12, 5
    words = rng.integers(0, V, size=60).astype(np.int64)
    docs = np.sort(rng.integers(0, D, size=60)).astype(np.int64)
    z = rng.integers(0, A, size=60).astype(np.int64)

    def tables():
        n_dt = np.zeros((D, A), np.int64)
        n_tw = np.zeros((A, V), np.int64)
        np.add.at(n_dt, (docs, z), 1)
        np.add.at(n_tw, (z, words), 1)
        return z.copy(), n_dt, n_tw, n_tw.sum(axis=1)

    u = rng.random(60)
    states = []
    for mod in (c, ref):
        zz, n_dt, n_tw, n_t = tables()
        mod.gibbs_sweep(words, docs, zz, n_dt, n_tw, n_t, 0.5, 0.01, u)
        states.append((zz, n_dt, n_tw, n_t))
    for a, b in zip(*states):
        assert np.array_equal(a, b)
    zz, n_dt, n_tw, n_t = states[0]
    assert n_tw.sum() == 60 and np.array_equal(n_tw.sum(axis=1), n_t)
