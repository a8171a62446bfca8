# cython: language_level=3
"""Compiled hot kernels: polynomial-filter network forward/backward.

Same contract as ``_kernels_py`` (node-major (N, B, F) signal stacks);
all matrix products go straight to BLAS dgemm and the elementwise work
runs in C loops.  The backend is selected in ``_backend``.
"""

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND_NAME = "cython"

ACT_IDENTITY = 0
ACT_RELU = 1


cdef void _gemm_rm(bint trans_a, bint trans_b, int m, int n, int k,
                   double alpha, const double* a, int a_cols,
                   const double* b, int b_cols,
                   double beta, double* c) noexcept nogil:
    """C(m,n) = alpha*op(A)@op(B) + beta*C on row-major buffers.

    a_cols/b_cols are the stored row widths of A and B.  Row-major C is
    column-major C^T, so the call computes C^T = op(B)^T op(A)^T.
    """
    cdef char ta = 84 if trans_a else 78  # 'T' / 'N'
    cdef char tb = 84 if trans_b else 78
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &b_cols, a, &a_cols, &beta, c, &n)


def layer_forward(const double[:, ::1] weights, const double[:, :, ::1] x,
                  const double[:, :, ::1] h, int activation):
    cdef int k_taps = h.shape[0]
    cdef int n = x.shape[0]
    cdef int b = x.shape[1]
    cdef int f_in = x.shape[2]
    cdef int f_out = h.shape[2]
    cdef int k
    cdef Py_ssize_t i, total

    taps_arr = np.empty((k_taps, n, b, f_in), dtype=np.float64)
    cdef double[:, :, :, ::1] taps = taps_arr
    taps_arr[0] = np.asarray(x)
    for k in range(1, k_taps):
        with nogil:
            _gemm_rm(False, False, n, b * f_in, n, 1.0,
                     &weights[0, 0], n,
                     &taps[k - 1, 0, 0, 0], b * f_in,
                     0.0, &taps[k, 0, 0, 0])

    out_arr = np.empty((n, b, f_out), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for k in range(k_taps):
        with nogil:
            _gemm_rm(False, False, n * b, f_out, f_in, 1.0,
                     &taps[k, 0, 0, 0], f_in,
                     &h[k, 0, 0], f_out,
                     0.0 if k == 0 else 1.0, &out[0, 0, 0])

    if activation != ACT_RELU:
        return out_arr, taps_arr, None

    mask_arr = np.empty((n, b, f_out), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] mask = mask_arr
    cdef double* op = &out[0, 0, 0]
    cdef cnp.uint8_t* mp = &mask[0, 0, 0]
    total = <Py_ssize_t> n * b * f_out
    with nogil:
        for i in range(total):
            if op[i] > 0.0:
                mp[i] = 1
            else:
                mp[i] = 0
                op[i] = 0.0
    return out_arr, taps_arr, mask_arr


def layer_backward(const double[:, ::1] weights, const double[:, :, ::1] h,
                   const double[:, :, :, ::1] taps, mask, const double[:, :, ::1] d_out):
    cdef int k_taps = taps.shape[0]
    cdef int n = taps.shape[1]
    cdef int b = taps.shape[2]
    cdef int f_in = taps.shape[3]
    cdef int f_out = h.shape[2]
    cdef int k
    cdef Py_ssize_t i, total

    gated_arr = np.empty((n, b, f_out), dtype=np.float64)
    cdef double[:, :, ::1] gated = gated_arr
    cdef const cnp.uint8_t[:, :, ::1] mview
    cdef double* gp = &gated[0, 0, 0]
    cdef const double* dp = &d_out[0, 0, 0]
    cdef const cnp.uint8_t* mp
    total = <Py_ssize_t> n * b * f_out
    if mask is None:
        with nogil:
            for i in range(total):
                gp[i] = dp[i]
    else:
        mview = mask
        mp = &mview[0, 0, 0]
        with nogil:
            for i in range(total):
                gp[i] = dp[i] if mp[i] else 0.0

    grad_h_arr = np.empty((k_taps, f_in, f_out), dtype=np.float64)
    cdef double[:, :, ::1] grad_h = grad_h_arr
    for k in range(k_taps):
        with nogil:
            _gemm_rm(True, False, f_in, f_out, n * b, 1.0,
                     &taps[k, 0, 0, 0], f_in,
                     &gated[0, 0, 0], f_out,
                     0.0, &grad_h[k, 0, 0])

    # d_x = sum_k W^k (gated @ H_k^T), innermost term first (W symmetric)
    dx_arr = np.empty((n, b, f_in), dtype=np.float64)
    tmp_arr = np.empty((n, b, f_in), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] tmp = tmp_arr
    with nogil:
        _gemm_rm(False, True, n * b, f_in, f_out, 1.0,
                 &gated[0, 0, 0], f_out,
                 &h[k_taps - 1, 0, 0], f_out,
                 0.0, &dx[0, 0, 0])
    for k in range(k_taps - 2, -1, -1):
        with nogil:
            _gemm_rm(False, True, n * b, f_in, f_out, 1.0,
                     &gated[0, 0, 0], f_out,
                     &h[k, 0, 0], f_out,
                     0.0, &tmp[0, 0, 0])
            _gemm_rm(False, False, n, b * f_in, n, 1.0,
                     &weights[0, 0], n,
                     &dx[0, 0, 0], b * f_in,
                     1.0, &tmp[0, 0, 0])
        dx_arr, tmp_arr = tmp_arr, dx_arr
        dx = dx_arr
        tmp = tmp_arr
    return grad_h_arr, dx_arr


def model_forward(weights, x, hs, acts):
    taps_list = []
    mask_list = []
    cur = x
    for h, act in zip(hs, acts):
        cur, taps, mask = layer_forward(weights, cur, h, act)
        taps_list.append(taps)
        mask_list.append(mask)
    return cur, taps_list, mask_list


def model_backward(weights, hs, acts, taps_list, mask_list, d_out):
    grad_hs = [None] * len(hs)
    cur = d_out
    for l in range(len(hs) - 1, -1, -1):
        grad_hs[l], cur = layer_backward(weights, hs[l], taps_list[l], mask_list[l], cur)
    return grad_hs, cur
