# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled multi-channel 2-D convolution core.

All arrays are C-contiguous float64 in (batch, height, width, channel)
layout; kernels are (kh, kw, cin, cout). ``ch``/``cw`` give the kernel
center, so the forward map is a correlation

    y[n, i, j, o] = sum_{a, b, c} k[a, b, c, o] * x[n, i + a - ch, j + b - cw, c]

with out-of-range indices wrapped (periodic) or treated as zero.

Narrow layers run as direct loops; wide layers gather one shifted copy of
the input per kernel tap and hand the channel contraction to BLAS dgemm.
Accumulation order is fixed for a given build, so results are reproducible.
"""
import numpy as np

from libc.string cimport memcpy, memset
from scipy.linalg.cython_blas cimport dgemm

# channel product above which the dgemm path is used
cdef enum:
    GEMM_MIN_CHANNELS = 8
    SKINNY_COUT = 8


cdef Py_ssize_t[:, ::1] _index_table(Py_ssize_t taps, Py_ssize_t size,
                                     Py_ssize_t center, int sign, bint periodic):
    # idx[a, i] = i + sign * (a - center), wrapped or -1 when outside
    cdef Py_ssize_t[:, ::1] idx = np.empty((taps, size), dtype=np.intp)
    cdef Py_ssize_t a, i, t
    cdef Py_ssize_t shift
    for a in range(taps):
        shift = (sign * (a - center)) % size
        if shift < 0:
            shift += size
        for i in range(size):
            if periodic:
                t = i + shift
                if t >= size:
                    t -= size
            else:
                t = i + sign * (a - center)
                if t < 0 or t >= size:
                    t = -1
            idx[a, i] = t
    return idx


cdef void _gather_tap(const double* src, double* dst, Py_ssize_t N, Py_ssize_t H,
                      Py_ssize_t W, Py_ssize_t C, const Py_ssize_t* ih,
                      const Py_ssize_t* iw) noexcept nogil:
    # dst[n, i, j, :] = src[n, ih[i], iw[j], :] (zero where an index is -1)
    # consecutive source columns are copied as one run
    cdef Py_ssize_t n, i, j, ii, jj, run
    cdef size_t nbytes = C * sizeof(double)
    cdef double* drow
    for n in range(N):
        for i in range(H):
            ii = ih[i]
            drow = dst + ((n * H + i) * W) * C
            if ii < 0:
                memset(drow, 0, W * nbytes)
                continue
            j = 0
            while j < W:
                jj = iw[j]
                run = 1
                if jj < 0:
                    while j + run < W and iw[j + run] < 0:
                        run += 1
                    memset(drow + j * C, 0, run * nbytes)
                else:
                    while j + run < W and iw[j + run] == jj + run:
                        run += 1
                    memcpy(drow + j * C, src + ((n * H + ii) * W + jj) * C, run * nbytes)
                j += run


def conv_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] k,
                 Py_ssize_t ch, Py_ssize_t cw, bint periodic):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], Co = k.shape[3]
    out = np.zeros((N, H, W, Co), dtype=np.float64)
    if out.size == 0 or Ci == 0:
        return out
    cdef double[:, :, :, ::1] yv = out
    cdef Py_ssize_t[:, ::1] ih = _index_table(kh, H, ch, 1, periodic)
    cdef Py_ssize_t[:, ::1] iw = _index_table(kw, W, cw, 1, periodic)
    cdef double* y = &yv[0, 0, 0, 0]
    cdef const double* xp = &x[0, 0, 0, 0]
    cdef const double* kp = &k[0, 0, 0, 0]
    cdef Py_ssize_t n, i, j, a, b, c, o, ii, jj
    cdef double kv, xv
    cdef double* yrow
    cdef const double* xrow
    cdef const double* ktap
    cdef double[:, :, :, ::1] buf
    cdef int m_, n_, k_, lda, ldb, ldc
    cdef double one = 1.0
    cdef char tr_n = b'N'
    cdef char tr_t = b'T'
    cdef char ta
    cdef bint skinny
    cdef const double[:, :, :, ::1] ktv

    if Ci * Co >= GEMM_MIN_CHANNELS:
        buf = np.empty((N, H, W, Ci), dtype=np.float64)
        # few output channels: per-tap (Cout, Cin) copies, since the
        # transposed-A dgemm form is faster for skinny shapes
        skinny = Co < SKINNY_COUT
        if skinny:
            ktv = np.ascontiguousarray(np.asarray(k).transpose(0, 1, 3, 2))
            ta = tr_t
            lda = <int>Ci
        else:
            ktv = k
            ta = tr_n
            lda = <int>Co
        m_ = <int>Co
        n_ = <int>(N * H * W)
        k_ = <int>Ci
        ldb = <int>Ci
        ldc = <int>Co
        with nogil:
            for a in range(kh):
                for b in range(kw):
                    _gather_tap(xp, &buf[0, 0, 0, 0], N, H, W, Ci, &ih[a, 0], &iw[b, 0])
                    ktap = &ktv[a, b, 0, 0]
                    dgemm(&ta, &tr_n, &m_, &n_, &k_, &one, <double*>ktap, &lda,
                          &buf[0, 0, 0, 0], &ldb, &one, y, &ldc)
        return out

    with nogil:
        for n in range(N):
            for i in range(H):
                yrow = y + (n * H + i) * W * Co
                for a in range(kh):
                    ii = ih[a, i]
                    if ii < 0:
                        continue
                    xrow = xp + (n * H + ii) * W * Ci
                    for b in range(kw):
                        ktap = kp + (a * kw + b) * Ci * Co
                        if Ci == 1 and Co == 1:
                            kv = ktap[0]
                            for j in range(W):
                                jj = iw[b, j]
                                if jj >= 0:
                                    yrow[j] += kv * xrow[jj]
                            continue
                        for j in range(W):
                            jj = iw[b, j]
                            if jj < 0:
                                continue
                            for c in range(Ci):
                                xv = xrow[jj * Ci + c]
                                for o in range(Co):
                                    yrow[j * Co + o] += xv * ktap[c * Co + o]
    return out


def conv_adjoint(const double[:, :, :, ::1] y, const double[:, :, :, ::1] k,
                 Py_ssize_t ch, Py_ssize_t cw, bint periodic):
    cdef Py_ssize_t N = y.shape[0], H = y.shape[1], W = y.shape[2], Co = y.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], Ci = k.shape[2]
    out = np.zeros((N, H, W, Ci), dtype=np.float64)
    if out.size == 0 or Co == 0:
        return out
    cdef double[:, :, :, ::1] xv_ = out
    cdef Py_ssize_t[:, ::1] ih = _index_table(kh, H, ch, -1, periodic)
    cdef Py_ssize_t[:, ::1] iw = _index_table(kw, W, cw, -1, periodic)
    cdef double* x = &xv_[0, 0, 0, 0]
    cdef const double* yp = &y[0, 0, 0, 0]
    cdef const double* kp = &k[0, 0, 0, 0]
    cdef Py_ssize_t n, p, q, a, b, c, o, ii, jj
    cdef double acc, kv
    cdef double* xrow
    cdef const double* yrow
    cdef const double* ktap
    cdef double[:, :, :, ::1] buf
    cdef int m_, n_, k_, lda, ldb, ldc
    cdef double one = 1.0
    cdef char tr_n = b'N'
    cdef char tr_t = b'T'

    if Ci * Co >= GEMM_MIN_CHANNELS:
        buf = np.empty((N, H, W, Co), dtype=np.float64)
        m_ = <int>Ci
        n_ = <int>(N * H * W)
        k_ = <int>Co
        lda = <int>Co
        ldb = <int>Co
        ldc = <int>Ci
        with nogil:
            for a in range(kh):
                for b in range(kw):
                    _gather_tap(yp, &buf[0, 0, 0, 0], N, H, W, Co, &ih[a, 0], &iw[b, 0])
                    ktap = kp + (a * kw + b) * Ci * Co
                    dgemm(&tr_t, &tr_n, &m_, &n_, &k_, &one, <double*>ktap, &lda,
                          &buf[0, 0, 0, 0], &ldb, &one, x, &ldc)
        return out

    with nogil:
        for n in range(N):
            for p in range(H):
                xrow = x + (n * H + p) * W * Ci
                for a in range(kh):
                    ii = ih[a, p]
                    if ii < 0:
                        continue
                    yrow = yp + (n * H + ii) * W * Co
                    for b in range(kw):
                        ktap = kp + (a * kw + b) * Ci * Co
                        if Ci == 1 and Co == 1:
                            kv = ktap[0]
                            for q in range(W):
                                jj = iw[b, q]
                                if jj >= 0:
                                    xrow[q] += kv * yrow[jj]
                            continue
                        for q in range(W):
                            jj = iw[b, q]
                            if jj < 0:
                                continue
                            for c in range(Ci):
                                acc = 0.0
                                for o in range(Co):
                                    acc = acc + ktap[c * Co + o] * yrow[jj * Co + o]
                                xrow[q * Ci + c] += acc
    return out


def conv_kernel_grad(const double[:, :, :, ::1] x, const double[:, :, :, ::1] gy,
                     Py_ssize_t kh, Py_ssize_t kw,
                     Py_ssize_t ch, Py_ssize_t cw, bint periodic):
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2], Ci = x.shape[3]
    cdef Py_ssize_t Co = gy.shape[3]
    out = np.zeros((kh, kw, Ci, Co), dtype=np.float64)
    if out.size == 0 or N * H * W == 0:
        return out
    cdef double[:, :, :, ::1] gkv = out
    cdef Py_ssize_t[:, ::1] ih = _index_table(kh, H, ch, 1, periodic)
    cdef Py_ssize_t[:, ::1] iw = _index_table(kw, W, cw, 1, periodic)
    cdef double* gk = &gkv[0, 0, 0, 0]
    cdef const double* xp = &x[0, 0, 0, 0]
    cdef const double* gp = &gy[0, 0, 0, 0]
    cdef Py_ssize_t n, i, j, a, b, c, o, ii, jj
    cdef double xv, acc
    cdef double* gtap
    cdef const double* xrow
    cdef const double* grow
    cdef double[:, :, :, ::1] buf
    cdef int m_, n_, k_, lda, ldb, ldc
    cdef double one = 1.0
    cdef double zero = 0.0
    cdef char tr_n = b'N'
    cdef char tr_t = b'T'

    if Ci * Co >= GEMM_MIN_CHANNELS:
        buf = np.empty((N, H, W, Ci), dtype=np.float64)
        m_ = <int>Co
        n_ = <int>Ci
        k_ = <int>(N * H * W)
        lda = <int>Co
        ldb = <int>Ci
        ldc = <int>Co
        with nogil:
            for a in range(kh):
                for b in range(kw):
                    _gather_tap(xp, &buf[0, 0, 0, 0], N, H, W, Ci, &ih[a, 0], &iw[b, 0])
                    gtap = gk + (a * kw + b) * Ci * Co
                    dgemm(&tr_n, &tr_t, &m_, &n_, &k_, &one, <double*>gp, &lda,
                          &buf[0, 0, 0, 0], &ldb, &zero, gtap, &ldc)
        return out

    with nogil:
        for a in range(kh):
            for b in range(kw):
                gtap = gk + (a * kw + b) * Ci * Co
                if Ci == 1 and Co == 1:
                    acc = 0.0
                    for n in range(N):
                        for i in range(H):
                            ii = ih[a, i]
                            if ii < 0:
                                continue
                            xrow = xp + (n * H + ii) * W
                            grow = gp + (n * H + i) * W
                            for j in range(W):
                                jj = iw[b, j]
                                if jj >= 0:
                                    acc = acc + xrow[jj] * grow[j]
                    gtap[0] = acc
                    continue
                for n in range(N):
                    for i in range(H):
                        ii = ih[a, i]
                        if ii < 0:
                            continue
                        xrow = xp + (n * H + ii) * W * Ci
                        grow = gp + (n * H + i) * W * Co
                        for j in range(W):
                            jj = iw[b, j]
                            if jj < 0:
                                continue
                            for c in range(Ci):
                                xv = xrow[jj * Ci + c]
                                for o in range(Co):
                                    gtap[c * Co + o] += xv * grow[j * Co + o]
    return out
