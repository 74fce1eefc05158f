"""Pure numpy kernels.

Reference implementations of the hot loops. The compiled module
``egcnn._kernels_c`` exposes the same functions with the same signatures.
"""
import numpy as np


def conv1d_forward(x, w, b):
    """Full-width convolution along axis 1 of ``x`` (N, m, Din).

    ``w`` is (f, Din, C), ``b`` is (C,). Returns (N, m - f + 1, C).
    """
    f = w.shape[0]
    T = x.shape[1] - f + 1
    out = np.empty((x.shape[0], T, w.shape[2]))
    out[...] = b
    for j in range(f):
        out += x[:, j:j + T, :] @ w[j]
    return out


def conv1d_backward(x, w, g):
    """Adjoints of :func:`conv1d_forward` given output adjoint ``g`` (N, T, C)."""
    f = w.shape[0]
    T = g.shape[1]
    din = x.shape[2]
    C = w.shape[2]
    dx = np.zeros_like(x)
    dw = np.empty_like(w)
    g2 = g.reshape(-1, C)
    for j in range(f):
        xs = x[:, j:j + T, :]
        dw[j] = xs.reshape(-1, din).T @ g2
        dx[:, j:j + T, :] += g @ w[j].T
    db = g2.sum(axis=0)
    return dx, dw, db


def maxpool_forward(x):
    """Max over axis 1 of (N, T, C); ties resolve to the lowest t."""
    idx = np.argmax(x, axis=1)
    out = np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]
    return out, idx


def maxpool_backward(g, idx, T):
    N, C = g.shape
    dx = np.zeros((N, T, C))
    np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
    return dx


def gibbs_sweep(words, docs, z, n_dt, n_tw, n_t, alpha, beta, uniforms):
    """One collapsed Gibbs sweep over all tokens, updating counts in place.

    ``uniforms`` holds one U(0, 1) draw per token so that every backend
    consumes the same random stream.
    """
    V = n_tw.shape[1]
    vbeta = V * beta
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        n_dt[d, k] -= 1
        n_tw[k, w] -= 1
        n_t[k] -= 1
        p = (n_dt[d] + alpha) * (n_tw[:, w] + beta) / (n_t + vbeta)
        cum = np.cumsum(p)
        k = int(np.searchsorted(cum, uniforms[i] * cum[-1], side="right"))
        if k >= cum.shape[0]:
            k = cum.shape[0] - 1
        z[i] = k
        n_dt[d, k] += 1
        n_tw[k, w] += 1
        n_t[k] += 1
