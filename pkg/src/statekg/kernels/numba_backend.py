"""Numba-jitted twins of the scan kernels in ``numpy_backend``.

Explicit loops instead of BLAS calls: results may differ from the numpy
path in the last ulp (different summation order) but agree to ~1e-12.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_jit = njit(cache=True, fastmath=False)


@_jit
def _matvec(W, x, out):
    d_out, d_in = W.shape
    for i in range(d_out):
        acc = 0.0
        for j in range(d_in):
            acc += W[i, j] * x[j]
        out[i] = acc


@_jit
def _matvec_t(W, x, out):
    # out = W.T @ x without materializing the transpose
    d_out, d_in = W.shape
    for j in range(d_in):
        out[j] = 0.0
    for i in range(d_out):
        xi = x[i]
        for j in range(d_in):
            out[j] += W[i, j] * xi


@_jit
def _add_outer(M, a, b):
    n, m = M.shape
    for i in range(n):
        ai = a[i]
        for j in range(m):
            M[i, j] += ai * b[j]


@_jit
def rnn_forward(U, Wu, Wh):
    L, d = U.shape
    H = np.empty((L, d))
    h = np.zeros(d)
    tmp = np.empty(d)
    rec = np.empty(d)
    for k in range(L):
        _matvec(Wu, U[k], tmp)
        _matvec(Wh, h, rec)
        for i in range(d):
            h[i] = np.tanh(tmp[i] + rec[i])
        H[k] = h
    return H


@_jit
def rnn_backward(U, Wu, Wh, H, dH):
    L, d = U.shape
    dU = np.empty((L, d))
    dWu = np.zeros((d, d))
    dWh = np.zeros((d, d))
    carry = np.zeros(d)
    da = np.empty(d)
    for k in range(L - 1, -1, -1):
        for i in range(d):
            da[i] = (dH[k, i] + carry[i]) * (1.0 - H[k, i] * H[k, i])
        _add_outer(dWu, da, U[k])
        if k > 0:
            _add_outer(dWh, da, H[k - 1])
        _matvec_t(Wu, da, dU[k])
        _matvec_t(Wh, da, carry)
    return dU, dWu, dWh


@_jit
def lstm_forward(U, W, Uh, b):
    L, d = U.shape
    H = np.empty((L, d))
    C = np.empty((L, d))
    G = np.empty((L, 4, d))
    h = np.zeros(d)
    c = np.zeros(d)
    zx = np.empty(d)
    zh = np.empty(d)
    z = np.empty((4, d))
    for k in range(L):
        for g in range(4):
            _matvec(W[g], U[k], zx)
            _matvec(Uh[g], h, zh)
            for i in range(d):
                z[g, i] = zx[i] + zh[i] + b[g, i]
        for i in range(d):
            gi = 1.0 / (1.0 + np.exp(-z[0, i]))
            gf = 1.0 / (1.0 + np.exp(-z[1, i]))
            go = 1.0 / (1.0 + np.exp(-z[2, i]))
            gc = np.tanh(z[3, i])
            c[i] = gf * c[i] + gi * gc
            h[i] = go * np.tanh(c[i])
            G[k, 0, i], G[k, 1, i], G[k, 2, i], G[k, 3, i] = gi, gf, go, gc
            C[k, i] = c[i]
            H[k, i] = h[i]
    return H, C, G


@_jit
def lstm_backward(U, W, Uh, b, H, C, G, dH):
    L, d = U.shape
    dU = np.empty((L, d))
    dW = np.zeros((4, d, d))
    dUh = np.zeros((4, d, d))
    db = np.zeros((4, d))
    dh_carry = np.zeros(d)
    dc_carry = np.zeros(d)
    dz = np.empty((4, d))
    tmp = np.empty(d)
    for k in range(L - 1, -1, -1):
        for i in range(d):
            gi = G[k, 0, i]
            gf = G[k, 1, i]
            go = G[k, 2, i]
            gc = G[k, 3, i]
            c_prev = C[k - 1, i] if k > 0 else 0.0
            tc = np.tanh(C[k, i])
            dh = dH[k, i] + dh_carry[i]
            dz[2, i] = dh * tc * go * (1.0 - go)
            dc = dh * go * (1.0 - tc * tc) + dc_carry[i]
            dz[0, i] = dc * gc * gi * (1.0 - gi)
            dz[3, i] = dc * gi * (1.0 - gc * gc)
            dz[1, i] = dc * c_prev * gf * (1.0 - gf)
            dc_carry[i] = dc * gf
        for i in range(d):
            dU[k, i] = 0.0
            dh_carry[i] = 0.0
        for g in range(4):
            _add_outer(dW[g], dz[g], U[k])
            if k > 0:
                _add_outer(dUh[g], dz[g], H[k - 1])
            for i in range(d):
                db[g, i] += dz[g, i]
            _matvec_t(W[g], dz[g], tmp)
            for i in range(d):
                dU[k, i] += tmp[i]
            _matvec_t(Uh[g], dz[g], tmp)
            for i in range(d):
                dh_carry[i] += tmp[i]
    return dU, dW, dUh, db


@_jit
def ssm_forward(U, A, Wd, bd, Wb, Wc):
    L, d = U.shape
    H = np.empty((L, d))
    S = np.empty((L, d))
    STEP = np.empty((L, d))
    SIG = np.empty((L, d))
    B = np.empty((L, d))
    Cm = np.empty((L, d))
    ABAR = np.empty((L, d))
    s = np.zeros(d)
    zd = np.empty(d)
    bk = np.empty(d)
    ck = np.empty(d)
    for k in range(L):
        _matvec(Wd, U[k], zd)
        _matvec(Wb, U[k], bk)
        _matvec(Wc, U[k], ck)
        for i in range(d):
            z = zd[i] + bd[i]
            SIG[k, i] = 1.0 / (1.0 + np.exp(-z))
            step = np.logaddexp(0.0, z)
            abar = np.exp(step * A[i])
            s[i] = abar * s[i] + step * bk[i] * U[k, i]
            H[k, i] = ck[i] * s[i]
            S[k, i] = s[i]
            STEP[k, i] = step
            B[k, i] = bk[i]
            Cm[k, i] = ck[i]
            ABAR[k, i] = abar
    return H, S, STEP, SIG, B, Cm, ABAR


@_jit
def ssm_backward(U, A, Wd, bd, Wb, Wc, S, STEP, SIG, B, Cm, ABAR, dH):
    L, d = U.shape
    dU = np.empty((L, d))
    dA = np.zeros(d)
    dWd = np.zeros((d, d))
    dbd = np.zeros(d)
    dWb = np.zeros((d, d))
    dWc = np.zeros((d, d))
    ds_carry = np.zeros(d)
    dzd = np.empty(d)
    dB = np.empty(d)
    dC = np.empty(d)
    du_direct = np.empty(d)
    tmp = np.empty(d)
    for k in range(L - 1, -1, -1):
        for i in range(d):
            s_prev = S[k - 1, i] if k > 0 else 0.0
            dC[i] = dH[k, i] * S[k, i]
            ds = dH[k, i] * Cm[k, i] + ds_carry[i]
            dabar = ds * s_prev
            dA[i] += dabar * STEP[k, i] * ABAR[k, i]
            dstep = dabar * A[i] * ABAR[k, i] + ds * B[k, i] * U[k, i]
            dB[i] = ds * STEP[k, i] * U[k, i]
            du_direct[i] = ds * STEP[k, i] * B[k, i]
            ds_carry[i] = ds * ABAR[k, i]
            dzd[i] = dstep * SIG[k, i]
        _matvec_t(Wd, dzd, dU[k])
        _matvec_t(Wb, dB, tmp)
        for i in range(d):
            dU[k, i] += tmp[i] + du_direct[i]
        _matvec_t(Wc, dC, tmp)
        for i in range(d):
            dU[k, i] += tmp[i]
        _add_outer(dWd, dzd, U[k])
        _add_outer(dWb, dB, U[k])
        _add_outer(dWc, dC, U[k])
        for i in range(d):
            dbd[i] += dzd[i]
    return dU, dA, dWd, dbd, dWb, dWc
