# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled recurrent kernels. Same contracts as ``_pykernels``."""

import numpy as np

from libc.math cimport exp, tanh
from scipy.linalg.cython_blas cimport dgemm, dgemv


cdef inline double _sigmoid(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


cdef void _mm(const double* A, const double* B, double* C,
              int m, int k, int n, int lda, int ldb, int ldc,
              double beta, bint trans_a, bint trans_b) noexcept nogil:
    # row-major C[m, n] = op(A)[m, k] @ op(B)[k, n] + beta * C
    cdef char ta = b'T' if trans_b else b'N'
    cdef char tb = b'T' if trans_a else b'N'
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    dgemm(&ta, &tb, &n, &m, &k, &alpha, <double*>B, &ldb, <double*>A, &lda,
          &beta, C, &ldc)


cdef void _mv(const double* x, const double* B, double* y, int k, int n, int ldb,
              double beta) noexcept nogil:
    # row-major y[n] = x[k] @ B[k, n] + beta * y
    cdef char tr = b'N'
    cdef double alpha = 1.0
    cdef int one = 1
    dgemv(&tr, &n, &k, &alpha, <double*>B, &ldb, <double*>x, &one, &beta, y, &one)


def gru_forward(const double[:, :, ::1] gx, const double[:, ::1] h0, const double[:, ::1] U):
    cdef Py_ssize_t T = gx.shape[0], B = gx.shape[1], H = gx.shape[2] // 3
    hs_arr = np.empty((T + 1, B, H))
    r_arr = np.empty((T, B, H))
    z_arr = np.empty((T, B, H))
    n_arr = np.empty((T, B, H))
    cdef double[:, :, ::1] hs = hs_arr, r = r_arr, z = z_arr, n = n_arr
    cdef double[:, ::1] a = np.empty((B, 2 * H)), rh = np.empty((B, H)), an = np.empty((B, H))
    cdef Py_ssize_t t, b, j
    cdef double rr, zz, nv
    hs[0, :, :] = h0
    with nogil:
        for t in range(T):
            _mm(&hs[t, 0, 0], &U[0, 0], &a[0, 0], B, H, 2 * H, H, 3 * H, 2 * H, 0.0, 0, 0)
            for b in range(B):
                for j in range(H):
                    rr = _sigmoid(gx[t, b, j] + a[b, j])
                    zz = _sigmoid(gx[t, b, H + j] + a[b, H + j])
                    r[t, b, j] = rr
                    z[t, b, j] = zz
                    rh[b, j] = rr * hs[t, b, j]
            _mm(&rh[0, 0], &U[0, 2 * H], &an[0, 0], B, H, H, H, 3 * H, H, 0.0, 0, 0)
            for b in range(B):
                for j in range(H):
                    nv = tanh(gx[t, b, 2 * H + j] + an[b, j])
                    n[t, b, j] = nv
                    zz = z[t, b, j]
                    hs[t + 1, b, j] = (1.0 - zz) * nv + zz * hs[t, b, j]
    return hs_arr, r_arr, z_arr, n_arr


def gru_backward(const double[:, :, ::1] dhs, const double[:, :, ::1] hs,
                 const double[:, :, ::1] r, const double[:, :, ::1] z,
                 const double[:, :, ::1] n, const double[:, ::1] U):
    cdef Py_ssize_t T = dhs.shape[0], B = dhs.shape[1], H = dhs.shape[2]
    dgx_arr = np.empty((T, B, 3 * H))
    dU_arr = np.zeros((H, 3 * H))
    dh_arr = np.zeros((B, H))
    cdef double[:, :, ::1] dgx = dgx_arr
    cdef double[:, ::1] dU = dU_arr, dh = dh_arr
    cdef double[:, ::1] dhp = np.empty((B, H)), rh = np.empty((B, H))
    cdef double[:, ::1] drh = np.empty((B, H)), dzv = np.empty((B, H))
    cdef Py_ssize_t t, b, j
    cdef double g, h, rt, zt, nt, dan
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    g = dh[b, j] + dhs[t, b, j]
                    h = hs[t, b, j]
                    rt = r[t, b, j]
                    zt = z[t, b, j]
                    nt = n[t, b, j]
                    dan = g * (1.0 - zt) * (1.0 - nt * nt)
                    dgx[t, b, 2 * H + j] = dan
                    dzv[b, j] = g * (h - nt)
                    dhp[b, j] = g * zt
                    rh[b, j] = rt * h
            _mm(&rh[0, 0], &dgx[t, 0, 2 * H], &dU[0, 2 * H], H, B, H, H, 3 * H, 3 * H, 1.0, 1, 0)
            _mm(&dgx[t, 0, 2 * H], &U[0, 2 * H], &drh[0, 0], B, H, H, 3 * H, 3 * H, H, 0.0, 0, 1)
            for b in range(B):
                for j in range(H):
                    h = hs[t, b, j]
                    rt = r[t, b, j]
                    zt = z[t, b, j]
                    dhp[b, j] += drh[b, j] * rt
                    dgx[t, b, j] = drh[b, j] * h * rt * (1.0 - rt)
                    dgx[t, b, H + j] = dzv[b, j] * zt * (1.0 - zt)
            _mm(&hs[t, 0, 0], &dgx[t, 0, 0], &dU[0, 0], H, B, 2 * H, H, 3 * H, 3 * H, 1.0, 1, 0)
            _mm(&dgx[t, 0, 0], &U[0, 0], &dhp[0, 0], B, 2 * H, H, 3 * H, 3 * H, H, 1.0, 0, 1)
            dh[:, :] = dhp
    return dgx_arr, dh_arr, dU_arr


def lstm_forward(const double[:, :, ::1] gx, const double[:, ::1] h0,
                 const double[:, ::1] c0, const double[:, ::1] U):
    cdef Py_ssize_t T = gx.shape[0], B = gx.shape[1], H = gx.shape[2] // 4
    hs_arr = np.empty((T + 1, B, H))
    cs_arr = np.empty((T + 1, B, H))
    acts_arr = np.empty((T, B, 4 * H))
    cdef double[:, :, ::1] hs = hs_arr, cs = cs_arr, acts = acts_arr
    cdef Py_ssize_t t, b, j
    cdef double i, f, g, o, c
    hs[0, :, :] = h0
    cs[0, :, :] = c0
    with nogil:
        for t in range(T):
            acts[t, :, :] = gx[t]
            _mm(&hs[t, 0, 0], &U[0, 0], &acts[t, 0, 0], B, H, 4 * H, H, 4 * H, 4 * H, 1.0, 0, 0)
            for b in range(B):
                for j in range(H):
                    i = _sigmoid(acts[t, b, j])
                    f = _sigmoid(acts[t, b, H + j])
                    g = tanh(acts[t, b, 2 * H + j])
                    o = _sigmoid(acts[t, b, 3 * H + j])
                    acts[t, b, j] = i
                    acts[t, b, H + j] = f
                    acts[t, b, 2 * H + j] = g
                    acts[t, b, 3 * H + j] = o
                    c = f * cs[t, b, j] + i * g
                    cs[t + 1, b, j] = c
                    hs[t + 1, b, j] = o * tanh(c)
    return hs_arr, cs_arr, acts_arr


def lstm_backward(const double[:, :, ::1] dhs, const double[:, :, ::1] hs,
                  const double[:, :, ::1] cs, const double[:, :, ::1] acts,
                  const double[:, ::1] U, dc_last=None):
    cdef Py_ssize_t T = dhs.shape[0], B = dhs.shape[1], H = dhs.shape[2]
    dgx_arr = np.empty((T, B, 4 * H))
    dU_arr = np.zeros((H, 4 * H))
    dh_arr = np.zeros((B, H))
    if dc_last is None:
        dc_arr = np.zeros((B, H))
    else:
        dc_arr = np.array(dc_last, dtype=np.float64, order="C")
    cdef double[:, :, ::1] dgx = dgx_arr
    cdef double[:, ::1] dU = dU_arr, dh = dh_arr, dc = dc_arr
    cdef Py_ssize_t t, b, j
    cdef double i, f, g, o, tc, gh, gc
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    i = acts[t, b, j]
                    f = acts[t, b, H + j]
                    g = acts[t, b, 2 * H + j]
                    o = acts[t, b, 3 * H + j]
                    tc = tanh(cs[t + 1, b, j])
                    gh = dh[b, j] + dhs[t, b, j]
                    gc = dc[b, j] + gh * o * (1.0 - tc * tc)
                    dgx[t, b, j] = gc * g * i * (1.0 - i)
                    dgx[t, b, H + j] = gc * cs[t, b, j] * f * (1.0 - f)
                    dgx[t, b, 2 * H + j] = gc * i * (1.0 - g * g)
                    dgx[t, b, 3 * H + j] = gh * tc * o * (1.0 - o)
                    dc[b, j] = gc * f
            _mm(&hs[t, 0, 0], &dgx[t, 0, 0], &dU[0, 0], H, B, 4 * H, H, 4 * H, 4 * H, 1.0, 1, 0)
            _mm(&dgx[t, 0, 0], &U[0, 0], &dh[0, 0], B, 4 * H, H, 4 * H, 4 * H, H, 0.0, 0, 1)
    return dgx_arr, dh_arr, dc_arr, dU_arr


def wavernn_generate(const double[:, ::1] cond_gx, const double[:, ::1] emb_gx,
                     const double[:, ::1] U, const double[:, ::1] W1, const double[::1] b1,
                     const double[:, ::1] W2, const double[::1] b2, uniforms, long start_class):
    cdef Py_ssize_t T = cond_gx.shape[0], H = U.shape[0], F = W1.shape[1], Q = W2.shape[1]
    cdef double[::1] h = np.zeros(H), a = np.empty(2 * H), rh = np.empty(H), an = np.empty(H)
    cdef double[::1] y = np.empty(F), logits = np.empty(Q)
    out_arr = np.empty(T, dtype=np.int64)
    cdef long[::1] out = out_arr
    cdef double[::1] u
    cdef bint sample = uniforms is not None
    if sample:
        u = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef Py_ssize_t t, j, best
    cdef long prev = start_class
    cdef double rr, zz, nv, top, total, acc, target
    with nogil:
        for t in range(T):
            _mv(&h[0], &U[0, 0], &a[0], H, 2 * H, 3 * H, 0.0)
            for j in range(H):
                rr = _sigmoid(cond_gx[t, j] + emb_gx[prev, j] + a[j])
                a[H + j] = _sigmoid(cond_gx[t, H + j] + emb_gx[prev, H + j] + a[H + j])
                rh[j] = rr * h[j]
            _mv(&rh[0], &U[0, 2 * H], &an[0], H, H, 3 * H, 0.0)
            for j in range(H):
                nv = tanh(cond_gx[t, 2 * H + j] + emb_gx[prev, 2 * H + j] + an[j])
                zz = a[H + j]
                h[j] = (1.0 - zz) * nv + zz * h[j]
            y[:] = b1
            _mv(&h[0], &W1[0, 0], &y[0], H, F, F, 1.0)
            for j in range(F):
                if y[j] < 0.0:
                    y[j] = 0.0
            logits[:] = b2
            _mv(&y[0], &W2[0, 0], &logits[0], F, Q, Q, 1.0)
            best = 0
            top = logits[0]
            for j in range(1, Q):
                if logits[j] > top:
                    top = logits[j]
                    best = j
            if sample:
                total = 0.0
                for j in range(Q):
                    logits[j] = exp(logits[j] - top)
                    total += logits[j]
                target = u[t] * total
                acc = 0.0
                best = Q - 1
                for j in range(Q):
                    acc += logits[j]
                    if acc > target:
                        best = j
                        break
            prev = best
            out[t] = best
    return out_arr
