# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the batched recognition-cell kernels.

Same contract as `_cell_np`: matmuls go through BLAS dgemm and the
offset/adjoint elementwise work is fused into single passes, so the hot
loop allocates nothing per cell beyond a few (B, d) scratch buffers.
tanh itself stays with numpy's vectorized implementation, which beats a
scalar libm loop by a wide margin.
"""

import numpy as np

from scipy.linalg.cython_blas cimport dgemm


# Row-major helpers on top of the column-major BLAS: C <- alpha*op(A)op(B) + beta*C.

cdef void _gemm_nn(const double* a, const double* b, double* c,
                   int m, int n, int k, double alpha, double beta) noexcept nogil:
    # c (m,n) = alpha * a (m,k) @ b (k,n) + beta * c
    dgemm("N", "N", &n, &m, &k, &alpha, <double*> b, &n, <double*> a, &k, &beta, c, &n)


cdef void _gemm_tn(const double* a, const double* b, double* c,
                   int m, int n, int k, double alpha, double beta) noexcept nogil:
    # c (m,n) = alpha * a.T @ b + beta * c, with a (k,m), b (k,n)
    dgemm("N", "T", &n, &m, &k, &alpha, <double*> b, &n, <double*> a, &m, &beta, c, &n)


cdef void _gemm_nt(const double* a, const double* b, double* c,
                   int m, int n, int k, double alpha, double beta) noexcept nogil:
    # c (m,n) = alpha * a @ b.T + beta * c, with a (m,k), b (n,k)
    dgemm("T", "N", &n, &m, &k, &alpha, <double*> b, &k, <double*> a, &k, &beta, c, &n)


def cell_forward(x, y, protos, w1, w2, w3, w4, b1, b2, b3, b4):
    """Run every cell over the batch; returns (u1, u2, u3, u4) as (K, B, d)."""
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] pv = np.ascontiguousarray(protos, dtype=np.float64)
    cdef const double[:, ::1] w1v = np.ascontiguousarray(w1, dtype=np.float64)
    cdef const double[:, ::1] w2v = np.ascontiguousarray(w2, dtype=np.float64)
    cdef const double[:, ::1] w3v = np.ascontiguousarray(w3, dtype=np.float64)
    cdef const double[:, ::1] w4v = np.ascontiguousarray(w4, dtype=np.float64)
    cdef const double[::1] b1v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef const double[::1] b2v = np.ascontiguousarray(b2, dtype=np.float64)
    cdef const double[::1] b3v = np.ascontiguousarray(b3, dtype=np.float64)
    cdef const double[::1] b4v = np.ascontiguousarray(b4, dtype=np.float64)

    cdef int bsz = xv.shape[0]
    cdef int d = xv.shape[1]
    cdef int k = pv.shape[0]

    u1 = np.empty((k, bsz, d))
    u2 = np.empty((k, bsz, d))
    u3 = np.empty((k, bsz, d))
    u4 = np.empty((k, bsz, d))
    cdef double[:, :, ::1] u1v = u1, u2v = u2, u3v = u3, u4v = u4

    xw = np.empty((bsz, d))
    yw = np.empty((bsz, d))
    pw1 = np.empty((k, d))
    pw2 = np.empty((k, d))
    tmp = np.empty((bsz, d))
    cdef double[:, ::1] xwv = xw, ywv = yw, pw1v = pw1, pw2v = pw2, tmpv = tmp

    cdef int j, b, i
    with nogil:
        # concept and prototype halves of the first-layer products
        _gemm_nn(&xv[0, 0], &w1v[0, 0], &xwv[0, 0], bsz, d, d, 1.0, 0.0)
        _gemm_nn(&yv[0, 0], &w2v[0, 0], &ywv[0, 0], bsz, d, d, 1.0, 0.0)
        _gemm_nn(&pv[0, 0], &w1v[d, 0], &pw1v[0, 0], k, d, d, 1.0, 0.0)
        _gemm_nn(&pv[0, 0], &w2v[d, 0], &pw2v[0, 0], k, d, d, 1.0, 0.0)

        for j in range(k):
            for i in range(d):
                pw1v[j, i] += b1v[i]
                pw2v[j, i] += b2v[i]
        for j in range(k):
            for b in range(bsz):
                for i in range(d):
                    u1v[j, b, i] = xwv[b, i] + pw1v[j, i]
                    u2v[j, b, i] = ywv[b, i] + pw2v[j, i]
    np.tanh(u1, out=u1)
    np.tanh(u2, out=u2)

    with nogil:
        for j in range(k):
            for b in range(bsz):
                for i in range(d):
                    tmpv[b, i] = u1v[j, b, i] - yv[b, i]
                    u3v[j, b, i] = b3v[i]  # gemm accumulates on top of the bias
            _gemm_nn(&tmpv[0, 0], &w3v[0, 0], &u3v[j, 0, 0], bsz, d, d, 1.0, 1.0)

            for b in range(bsz):
                for i in range(d):
                    tmpv[b, i] = u2v[j, b, i] - xv[b, i]
                    u4v[j, b, i] = b4v[i]
            _gemm_nn(&tmpv[0, 0], &w4v[0, 0], &u4v[j, 0, 0], bsz, d, d, 1.0, 1.0)
    np.tanh(u3, out=u3)
    np.tanh(u4, out=u4)

    return u1, u2, u3, u4


def cell_backward(x, y, protos, w1, w2, w3, w4, u1, u2, u3, u4, du3, du4):
    """Weight/bias gradients of the cell stack (prototypes are constants)."""
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:, ::1] pv = np.ascontiguousarray(protos, dtype=np.float64)
    cdef const double[:, ::1] w3v = np.ascontiguousarray(w3, dtype=np.float64)
    cdef const double[:, ::1] w4v = np.ascontiguousarray(w4, dtype=np.float64)
    cdef const double[:, :, ::1] u1v = np.ascontiguousarray(u1, dtype=np.float64)
    cdef const double[:, :, ::1] u2v = np.ascontiguousarray(u2, dtype=np.float64)
    cdef const double[:, :, ::1] u3v = np.ascontiguousarray(u3, dtype=np.float64)
    cdef const double[:, :, ::1] u4v = np.ascontiguousarray(u4, dtype=np.float64)
    cdef const double[:, :, ::1] du3v = np.ascontiguousarray(du3, dtype=np.float64)
    cdef const double[:, :, ::1] du4v = np.ascontiguousarray(du4, dtype=np.float64)

    cdef int k = pv.shape[0]
    cdef int bsz = xv.shape[0]
    cdef int d = xv.shape[1]

    dw1 = np.empty((2 * d, d))
    dw2 = np.empty((2 * d, d))
    dw3 = np.zeros((d, d))
    dw4 = np.zeros((d, d))
    db1 = np.zeros(d)
    db2 = np.zeros(d)
    db3 = np.zeros(d)
    db4 = np.zeros(d)
    cdef double[:, ::1] dw1v = dw1, dw2v = dw2, dw3v = dw3, dw4v = dw4
    cdef double[::1] db1v = db1, db2v = db2, db3v = db3, db4v = db4

    # running sums for the first-layer weight gradients
    acc1 = np.zeros((bsz, d))
    acc2 = np.zeros((bsz, d))
    s1 = np.zeros((k, d))
    s2 = np.zeros((k, d))
    tmp = np.empty((bsz, d))
    dz = np.empty((bsz, d))
    dzin = np.empty((bsz, d))
    cdef double[:, ::1] acc1v = acc1, acc2v = acc2, s1v = s1, s2v = s2
    cdef double[:, ::1] tmpv = tmp, dzv = dz, dzinv = dzin

    cdef int j, b, i
    cdef double v
    with nogil:
        for j in range(k):
            # u3 branch: adjoint through tanh, then dw3 += (u1 - y).T @ dz
            for b in range(bsz):
                for i in range(d):
                    v = du3v[j, b, i] * (1.0 - u3v[j, b, i] * u3v[j, b, i])
                    dzv[b, i] = v
                    db3v[i] += v
                    tmpv[b, i] = u1v[j, b, i] - yv[b, i]
            _gemm_tn(&tmpv[0, 0], &dzv[0, 0], &dw3v[0, 0], d, d, bsz, 1.0, 1.0)
            _gemm_nt(&dzv[0, 0], &w3v[0, 0], &dzinv[0, 0], bsz, d, d, 1.0, 0.0)
            for b in range(bsz):
                for i in range(d):
                    v = dzinv[b, i] * (1.0 - u1v[j, b, i] * u1v[j, b, i])
                    acc1v[b, i] += v
                    s1v[j, i] += v
                    db1v[i] += v

            # u4 branch, directions reversed
            for b in range(bsz):
                for i in range(d):
                    v = du4v[j, b, i] * (1.0 - u4v[j, b, i] * u4v[j, b, i])
                    dzv[b, i] = v
                    db4v[i] += v
                    tmpv[b, i] = u2v[j, b, i] - xv[b, i]
            _gemm_tn(&tmpv[0, 0], &dzv[0, 0], &dw4v[0, 0], d, d, bsz, 1.0, 1.0)
            _gemm_nt(&dzv[0, 0], &w4v[0, 0], &dzinv[0, 0], bsz, d, d, 1.0, 0.0)
            for b in range(bsz):
                for i in range(d):
                    v = dzinv[b, i] * (1.0 - u2v[j, b, i] * u2v[j, b, i])
                    acc2v[b, i] += v
                    s2v[j, i] += v
                    db2v[i] += v

        # top halves take the concept side, bottom halves the prototype side
        _gemm_tn(&xv[0, 0], &acc1v[0, 0], &dw1v[0, 0], d, d, bsz, 1.0, 0.0)
        _gemm_tn(&pv[0, 0], &s1v[0, 0], &dw1v[d, 0], d, d, k, 1.0, 0.0)
        _gemm_tn(&yv[0, 0], &acc2v[0, 0], &dw2v[0, 0], d, d, bsz, 1.0, 0.0)
        _gemm_tn(&pv[0, 0], &s2v[0, 0], &dw2v[d, 0], d, d, k, 1.0, 0.0)

    return dw1, dw2, dw3, dw4, db1, db2, db3, db4
