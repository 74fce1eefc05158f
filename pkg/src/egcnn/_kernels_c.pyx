# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; drop-in replacements for ``egcnn._kernels_py``."""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline void _gemm_rm(int M, int Ncol, int K, double alpha,
                          double* A, int lda, bint transA,
                          double* B, int ldb, bint transB,
                          double beta, double* Cm, int ldc) noexcept nogil:
    # Row-major C = alpha * op(A) @ op(B) + beta * C via column-major dgemm on the transposes.
    cdef char ta = b'T' if transB else b'N'
    cdef char tb = b'T' if transA else b'N'
    dgemm(&ta, &tb, &Ncol, &M, &K, &alpha, B, &ldb, A, &lda, &beta, Cm, &ldc)


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, double[::1] b):
    cdef Py_ssize_t N = x.shape[0], m = x.shape[1]
    cdef int din = x.shape[2]
    cdef Py_ssize_t f = w.shape[0]
    cdef int C = w.shape[2]
    cdef int T = m - f + 1
    cdef Py_ssize_t n, t, j, c
    out_arr = np.empty((N, T, C))
    cdef double[:, :, ::1] out = out_arr
    if N == 0 or T <= 0:
        return out_arr
    with nogil:
        for n in range(N):
            for t in range(T):
                for c in range(C):
                    out[n, t, c] = b[c]
            for j in range(f):
                _gemm_rm(T, C, din, 1.0, &x[n, j, 0], din, False,
                         &w[j, 0, 0], C, False, 1.0, &out[n, 0, 0], C)
    return out_arr


def conv1d_backward(double[:, :, ::1] x, double[:, :, ::1] w, double[:, :, ::1] g):
    cdef Py_ssize_t N = x.shape[0]
    cdef int din = x.shape[2]
    cdef Py_ssize_t f = w.shape[0]
    cdef int C = w.shape[2]
    cdef int T = g.shape[1]
    cdef Py_ssize_t n, t, j, c
    dx_arr = np.zeros((N, x.shape[1], din))
    dw_arr = np.zeros((f, din, C))
    db_arr = np.zeros(C)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    if N == 0 or T <= 0:
        return dx_arr, dw_arr, db_arr
    with nogil:
        for n in range(N):
            for t in range(T):
                for c in range(C):
                    db[c] += g[n, t, c]
            for j in range(f):
                # dW[j] += X[n, j:j+T]^T @ G[n]
                _gemm_rm(din, C, T, 1.0, &x[n, j, 0], din, True,
                         &g[n, 0, 0], C, False, 1.0, &dw[j, 0, 0], C)
                # dX[n, j:j+T] += G[n] @ W[j]^T
                _gemm_rm(T, din, C, 1.0, &g[n, 0, 0], C, False,
                         &w[j, 0, 0], C, True, 1.0, &dx[n, j, 0], din)
    return dx_arr, dw_arr, db_arr


def maxpool_forward(double[:, :, ::1] x):
    cdef Py_ssize_t N = x.shape[0], T = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t n, t, c
    out_arr = np.empty((N, C))
    idx_arr = np.zeros((N, C), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef cnp.int64_t[:, ::1] idx = idx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                out[n, c] = x[n, 0, c]
            for t in range(1, T):
                for c in range(C):
                    if x[n, t, c] > out[n, c]:
                        out[n, c] = x[n, t, c]
                        idx[n, c] = t
    return out_arr, idx_arr


def maxpool_backward(double[:, ::1] g, cnp.int64_t[:, ::1] idx, Py_ssize_t T):
    cdef Py_ssize_t N = g.shape[0], C = g.shape[1]
    cdef Py_ssize_t n, c
    dx_arr = np.zeros((N, T, C))
    cdef double[:, :, ::1] dx = dx_arr
    with nogil:
        for n in range(N):
            for c in range(C):
                dx[n, idx[n, c], c] = g[n, c]
    return dx_arr


def gibbs_sweep(cnp.int64_t[::1] words, cnp.int64_t[::1] docs, cnp.int64_t[::1] z,
                cnp.int64_t[:, ::1] n_dt, cnp.int64_t[:, ::1] n_tw, cnp.int64_t[::1] n_t,
                double alpha, double beta, double[::1] uniforms):
    cdef Py_ssize_t A = n_tw.shape[0], V = n_tw.shape[1]
    cdef Py_ssize_t i, k, w, d
    cdef double vbeta = V * beta
    cdef double total, target
    cum_arr = np.empty(A)
    cdef double[::1] cum = cum_arr
    with nogil:
        for i in range(words.shape[0]):
            w = words[i]
            d = docs[i]
            k = z[i]
            n_dt[d, k] -= 1
            n_tw[k, w] -= 1
            n_t[k] -= 1
            total = 0.0
            for k in range(A):
                total = total + ((<double>n_dt[d, k] + alpha) * (<double>n_tw[k, w] + beta)
                                 / (<double>n_t[k] + vbeta))
                cum[k] = total
            target = uniforms[i] * total
            k = 0
            while k < A - 1 and not (cum[k] > target):
                k += 1
            z[i] = k
            n_dt[d, k] += 1
            n_tw[k, w] += 1
            n_t[k] += 1
