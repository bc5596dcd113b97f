# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution kernels: C-level im2col/col2im around BLAS GEMM.

Beats the numpy fallback by fusing the padding/column-gather loops in C and
calling sgemm/dgemm directly on preallocated buffers. Same contract as
``_kernels_np``: NHWC, stride 1, same padding, odd kernel sizes.
"""

import numpy as np

cimport numpy as cnp
from cython cimport floating
from scipy.linalg.cython_blas cimport dgemm, sgemm

cnp.import_array()

BACKEND = "cython-blas"


cdef void _gemm_rowmajor(floating *a, floating *b, floating *c,
                         int m, int n, int k, floating beta) noexcept nogil:
    # C (m,n) = A (m,k) @ B (k,n), all row-major: compute C^T = B^T A^T
    # through the column-major BLAS interface.
    cdef char *nt = b'N'
    cdef floating alpha = 1.0
    if floating is double:
        dgemm(nt, nt, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)
    else:
        sgemm(nt, nt, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef void _im2col(floating[:, :, :, ::1] x, floating[:, ::1] cols,
                  int kh, int kw) noexcept nogil:
    cdef int b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    cdef int bi, r, cc, i, j, rr, cj, tap, ch, row
    for bi in range(b):
        for r in range(h):
            for cc in range(w):
                row = (bi * h + r) * w + cc
                for i in range(kh):
                    rr = r + i - ph
                    for j in range(kw):
                        cj = cc + j - pw
                        tap = (i * kw + j) * c
                        if 0 <= rr < h and 0 <= cj < w:
                            for ch in range(c):
                                cols[row, tap + ch] = x[bi, rr, cj, ch]
                        else:
                            for ch in range(c):
                                cols[row, tap + ch] = 0.0


cdef void _col2im(floating[:, ::1] gcols, floating[:, :, :, ::1] gx,
                  int kh, int kw) noexcept nogil:
    cdef int b = gx.shape[0], h = gx.shape[1], w = gx.shape[2], c = gx.shape[3]
    cdef int ph = kh // 2, pw = kw // 2
    cdef int bi, r, cc, i, j, rr, cj, tap, ch, row
    for bi in range(b):
        for r in range(h):
            for cc in range(w):
                row = (bi * h + r) * w + cc
                for i in range(kh):
                    rr = r + i - ph
                    if rr < 0 or rr >= h:
                        continue
                    for j in range(kw):
                        cj = cc + j - pw
                        if cj < 0 or cj >= w:
                            continue
                        tap = (i * kw + j) * c
                        for ch in range(c):
                            gx[bi, rr, cj, ch] += gcols[row, tap + ch]


def _fwd(floating[:, :, :, ::1] x, floating[:, ::1] w2, floating[:, ::1] cols,
         floating[:, ::1] y2, int kh, int kw):
    cdef int rows = y2.shape[0], cout = y2.shape[1], k = w2.shape[0]
    with nogil:
        _im2col(x, cols, kh, kw)
        _gemm_rowmajor(&cols[0, 0], &w2[0, 0], &y2[0, 0], rows, cout, k, <floating>0.0)


def _im2col_entry(floating[:, :, :, ::1] x, floating[:, ::1] cols, int kh, int kw):
    with nogil:
        _im2col(x, cols, kh, kw)


def _bwd_cached(floating[:, :, :, ::1] x, floating[:, ::1] w2, floating[:, ::1] gy2,
                floating[:, ::1] cols, floating[:, ::1] gcols, floating[:, ::1] gw2,
                floating[:, :, :, ::1] gx, int kh, int kw):
    cdef int rows = gy2.shape[0], cout = gy2.shape[1], k = w2.shape[0]
    with nogil:
        # gw (k, cout) = cols^T (k, rows) @ gy (rows, cout)
        _gemm_rowmajor_at(&cols[0, 0], &gy2[0, 0], &gw2[0, 0], k, cout, rows)
        # gcols (rows, k) = gy2 (rows, cout) @ w2^T (cout, k)
        _gemm_rowmajor_bt(&gy2[0, 0], &w2[0, 0], &gcols[0, 0], rows, k, cout)
        _col2im(gcols, gx, kh, kw)


cdef void _gemm_rowmajor_at(floating *a, floating *b, floating *c,
                            int m, int n, int k) noexcept nogil:
    # C (m,n) = A^T @ B where A is (k,m) row-major, B is (k,n) row-major.
    # Column-major: C^T = B^T @ A, i.e. gemm('N','T').
    cdef char *nt = b'N'
    cdef char *tt = b'T'
    cdef floating alpha = 1.0, beta = 0.0
    if floating is double:
        dgemm(nt, tt, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)
    else:
        sgemm(nt, tt, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


cdef void _gemm_rowmajor_bt(floating *a, floating *b, floating *c,
                            int m, int n, int k) noexcept nogil:
    # C (m,n) = A @ B^T where A is (m,k) row-major, B is (n,k) row-major.
    # Column-major: C^T = B @ A^T, i.e. gemm('T','N').
    cdef char *nt = b'N'
    cdef char *tt = b'T'
    cdef floating alpha = 1.0, beta = 0.0
    if floating is double:
        dgemm(tt, nt, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)
    else:
        sgemm(tt, nt, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


def conv2d_forward(x, w, return_cols=False):
    b, h, ww, cin = x.shape
    kh, kw, _, cout = w.shape
    if kh == 1 and kw == 1:
        y = x.reshape(-1, cin) @ w.reshape(cin, cout)
        y = y.reshape(b, h, ww, cout)
        return (y, None) if return_cols else y
    x = np.ascontiguousarray(x)
    w2 = np.ascontiguousarray(w.reshape(-1, cout))
    rows = b * h * ww
    cols = np.empty((rows, kh * kw * cin), dtype=x.dtype)
    y2 = np.empty((rows, cout), dtype=x.dtype)
    _fwd(x, w2, cols, y2, kh, kw)
    y = y2.reshape(b, h, ww, cout)
    return (y, cols) if return_cols else y


def conv2d_backward(x, w, gy, cols=None):
    b, h, ww, cin = x.shape
    kh, kw, _, cout = w.shape
    gy2 = np.ascontiguousarray(gy.reshape(-1, cout))
    if kh == 1 and kw == 1:
        gw = x.reshape(-1, cin).T @ gy2
        gx = gy2 @ w.reshape(cin, cout).T
        return gx.reshape(x.shape), gw.reshape(w.shape)
    x = np.ascontiguousarray(x)
    w2 = np.ascontiguousarray(w.reshape(-1, cout))
    rows = b * h * ww
    k = kh * kw * cin
    if cols is None:
        cols = np.empty((rows, k), dtype=x.dtype)
        _im2col_entry(x, cols, kh, kw)
    gcols = np.empty((rows, k), dtype=x.dtype)
    gw2 = np.empty((k, cout), dtype=x.dtype)
    gx = np.zeros(x.shape, dtype=x.dtype)
    _bwd_cached(x, w2, gy2, cols, gcols, gw2, gx, kh, kw)
    return gx, gw2.reshape(w.shape)
