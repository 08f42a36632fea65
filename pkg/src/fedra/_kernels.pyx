# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled residual-stack kernels (BLAS via scipy.linalg.cython_blas).

Signatures mirror ``fedra._kernels_py``; that module documents the array
layout. Workspace is allocated once per call, so a training step makes a
single Python-level call regardless of depth.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, tanh
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef enum:
    RELU = 0


cdef inline void _gemm(bint ta, bint tb, int m, int n, int kk, double alpha,
                       const double* A, int lda, const double* B, int ldb,
                       double beta, double* C, int ldc) noexcept nogil:
    # row-major C(m,n) = alpha*op(A)(m,kk) @ op(B)(kk,n) + beta*C,
    # computed as column-major C^T = op(B)^T @ op(A)^T
    cdef char cta = b'T' if ta else b'N'
    cdef char ctb = b'T' if tb else b'N'
    dgemm(&ctb, &cta, &n, &m, &kk, &alpha, <double*>B, &ldb, <double*>A, &lda,
          &beta, C, &ldc)


cdef inline void _block_forward(int B, int d, int r, const double* H,
                                const double* W, const double* bias,
                                const double* D, const double* U, double s,
                                int act, double* P, double* A) noexcept nogil:
    """A = act(H W^T + bias + s * (H D^T) U^T); P receives H D^T."""
    cdef Py_ssize_t i, c
    cdef double z
    _gemm(False, True, B, r, d, 1.0, H, d, D, d, 0.0, P, r)
    _gemm(False, True, B, d, d, 1.0, H, d, W, d, 0.0, A, d)
    if s != 0.0:
        _gemm(False, True, B, d, r, s, P, r, U, r, 1.0, A, d)
    for i in range(B):
        for c in range(d):
            z = A[i * d + c] + bias[c]
            if act == RELU:
                A[i * d + c] = z if z > 0.0 else 0.0
            else:
                A[i * d + c] = tanh(z)


def forward_features(double[:, ::1] H0, double[:, :, ::1] W, double[:, ::1] b,
                     double[:, :, ::1] D, double[:, :, ::1] U,
                     double[::1] scale, int act):
    cdef int B = H0.shape[0]
    cdef int d = H0.shape[1]
    cdef int k = W.shape[0]
    cdef int r = D.shape[1]
    out = np.array(H0, dtype=np.float64, copy=True)
    cdef double[:, ::1] H = out
    cdef double[:, ::1] P = np.empty((B, max(r, 1)), dtype=np.float64)
    cdef double[:, ::1] A = np.empty((B, d), dtype=np.float64)
    cdef Py_ssize_t j, i, c
    if B == 0:
        return out
    with nogil:
        for j in range(k):
            _block_forward(B, d, r, &H[0, 0], &W[j, 0, 0], &b[j, 0],
                           &D[j, 0, 0], &U[j, 0, 0], scale[j], act,
                           &P[0, 0], &A[0, 0])
            for i in range(B):
                for c in range(d):
                    H[i, c] += A[i, c]
    return out


def forward_logits(double[:, ::1] H0, double[:, :, ::1] W, double[:, ::1] b,
                   double[:, :, ::1] D, double[:, :, ::1] U, double[::1] scale,
                   int act, double[:, ::1] Wh, double[::1] bh):
    cdef int B = H0.shape[0]
    cdef int d = H0.shape[1]
    cdef int C = Wh.shape[0]
    feats = forward_features(H0, W, b, D, U, scale, act)
    cdef double[:, ::1] H = feats
    logits = np.empty((B, C), dtype=np.float64)
    cdef double[:, ::1] Lg = logits
    cdef Py_ssize_t i, c
    if B == 0:
        return logits
    with nogil:
        for i in range(B):
            for c in range(C):
                Lg[i, c] = bh[c]
        _gemm(False, True, B, C, d, 1.0, &H[0, 0], d, &Wh[0, 0], d, 1.0,
              &Lg[0, 0], C)
    return logits


def forward_backward(double[:, ::1] H0, double[:, :, ::1] W, double[:, ::1] b,
                     double[:, :, ::1] D, double[:, :, ::1] U, double[::1] scale,
                     int act, double[:, ::1] Wh, double[::1] bh,
                     Py_ssize_t[::1] labels, double[:, :, ::1] gD,
                     double[:, :, ::1] gU, double[:, ::1] gWh, double[::1] gbh):
    cdef int B = H0.shape[0]
    cdef int d = H0.shape[1]
    cdef int k = W.shape[0]
    cdef int r = D.shape[1]
    cdef int C = Wh.shape[0]
    cdef Py_ssize_t i, c, j
    cdef double m, tot, loss = 0.0, s, a, invB
    if B == 0:
        raise ValueError("empty batch")
    invB = 1.0 / B
    for i in range(B):
        if labels[i] < 0 or labels[i] >= C:
            raise IndexError(f"label {labels[i]} out of range for {C} classes")

    # Hs[j] is the input of block j; Hs[k] feeds the head
    Hs_arr = np.empty((k + 1, B, d), dtype=np.float64)
    Ps_arr = np.empty((max(k, 1), B, max(r, 1)), dtype=np.float64)
    As_arr = np.empty((max(k, 1), B, d), dtype=np.float64)
    G_arr = np.empty((B, C), dtype=np.float64)
    dH_arr = np.empty((B, d), dtype=np.float64)
    dZ_arr = np.empty((B, d), dtype=np.float64)
    dP_arr = np.empty((B, max(r, 1)), dtype=np.float64)
    cdef double[:, :, ::1] Hs = Hs_arr
    cdef double[:, :, ::1] Ps = Ps_arr
    cdef double[:, :, ::1] As = As_arr
    cdef double[:, ::1] G = G_arr
    cdef double[:, ::1] dH = dH_arr
    cdef double[:, ::1] dZ = dZ_arr
    cdef double[:, ::1] dP = dP_arr

    with nogil:
        for i in range(B):
            for c in range(d):
                Hs[0, i, c] = H0[i, c]
        for j in range(k):
            _block_forward(B, d, r, &Hs[j, 0, 0], &W[j, 0, 0], &b[j, 0],
                           &D[j, 0, 0], &U[j, 0, 0], scale[j], act,
                           &Ps[j, 0, 0], &As[j, 0, 0])
            for i in range(B):
                for c in range(d):
                    Hs[j + 1, i, c] = Hs[j, i, c] + As[j, i, c]

        for i in range(B):
            for c in range(C):
                G[i, c] = bh[c]
        _gemm(False, True, B, C, d, 1.0, &Hs[k, 0, 0], d, &Wh[0, 0], d, 1.0,
              &G[0, 0], C)
        for i in range(B):
            m = G[i, 0]
            for c in range(1, C):
                if G[i, c] > m:
                    m = G[i, c]
            tot = 0.0
            for c in range(C):
                G[i, c] = G[i, c] - m
                tot = tot + exp(G[i, c])
            tot = log(tot)
            loss = loss + (tot - G[i, labels[i]])
            for c in range(C):
                G[i, c] = exp(G[i, c] - tot) * invB
            G[i, labels[i]] -= invB
        loss = loss * invB

        _gemm(True, False, C, d, B, 1.0, &G[0, 0], C, &Hs[k, 0, 0], d, 0.0,
              &gWh[0, 0], d)
        for c in range(C):
            gbh[c] = 0.0
        for i in range(B):
            for c in range(C):
                gbh[c] += G[i, c]
        _gemm(False, False, B, d, C, 1.0, &G[0, 0], C, &Wh[0, 0], d, 0.0,
              &dH[0, 0], d)

        for j in range(k - 1, -1, -1):
            s = scale[j]
            for i in range(B):
                for c in range(d):
                    a = As[j, i, c]
                    if act == RELU:
                        dZ[i, c] = dH[i, c] if a > 0.0 else 0.0
                    else:
                        dZ[i, c] = dH[i, c] * (1.0 - a * a)
            if r > 0:
                # gU = s dZ^T P ; dP = s dZ U ; gD = dP^T H_j
                _gemm(True, False, d, r, B, s, &dZ[0, 0], d, &Ps[j, 0, 0], r,
                      0.0, &gU[j, 0, 0], r)
                _gemm(False, False, B, r, d, s, &dZ[0, 0], d, &U[j, 0, 0], r,
                      0.0, &dP[0, 0], r)
                _gemm(True, False, r, d, B, 1.0, &dP[0, 0], r, &Hs[j, 0, 0], d,
                      0.0, &gD[j, 0, 0], d)
            # dH += dZ W + dP D
            _gemm(False, False, B, d, d, 1.0, &dZ[0, 0], d, &W[j, 0, 0], d,
                  1.0, &dH[0, 0], d)
            if r > 0:
                _gemm(False, False, B, d, r, 1.0, &dP[0, 0], r, &D[j, 0, 0], d,
                      1.0, &dH[0, 0], d)
    return loss
