"""Pure-numpy reference implementations of the sequential scan kernels.

These are the fallback path for the numba-jitted twins in
``numba_backend``; both must produce identical results. All arrays are
float64, sequences are (L, d) with the step axis first.
"""

from __future__ import annotations

import numpy as np


# -- simple recurrence: h_k = tanh(Wu u_k + Wh h_{k-1}) ----------------------

def rnn_forward(U: np.ndarray, Wu: np.ndarray, Wh: np.ndarray) -> np.ndarray:
    L, d = U.shape
    H = np.empty((L, d))
    pre = U @ Wu.T
    h = np.zeros(d)
    for k in range(L):
        h = np.tanh(pre[k] + Wh @ h)
        H[k] = h
    return H


def rnn_backward(U, Wu, Wh, H, dH):
    L, d = U.shape
    dU = np.empty((L, d))
    dWu = np.zeros((d, d))
    dWh = np.zeros((d, d))
    carry = np.zeros(d)
    for k in range(L - 1, -1, -1):
        da = (dH[k] + carry) * (1.0 - H[k] * H[k])
        dWu += np.outer(da, U[k])
        if k > 0:
            dWh += np.outer(da, H[k - 1])
        dU[k] = Wu.T @ da
        carry = Wh.T @ da
    return dU, dWu, dWh


# -- gated recurrence with an additive cell ----------------------------------
# Gate order along the leading axis of W/Uh/b and of the returned gate
# activations: input, forget, output, candidate.

def lstm_forward(U, W, Uh, b):
    L, d = U.shape
    H = np.empty((L, d))
    C = np.empty((L, d))
    G = np.empty((L, 4, d))
    h = np.zeros(d)
    c = np.zeros(d)
    for k in range(L):
        zi = W[0] @ U[k] + Uh[0] @ h + b[0]
        zf = W[1] @ U[k] + Uh[1] @ h + b[1]
        zo = W[2] @ U[k] + Uh[2] @ h + b[2]
        zc = W[3] @ U[k] + Uh[3] @ h + b[3]
        gi = 1.0 / (1.0 + np.exp(-zi))
        gf = 1.0 / (1.0 + np.exp(-zf))
        go = 1.0 / (1.0 + np.exp(-zo))
        gc = np.tanh(zc)
        c = gf * c + gi * gc
        h = go * np.tanh(c)
        G[k, 0], G[k, 1], G[k, 2], G[k, 3] = gi, gf, go, gc
        C[k] = c
        H[k] = h
    return H, C, G


def lstm_backward(U, W, Uh, b, H, C, G, dH):
    L, d = U.shape
    dU = np.empty((L, d))
    dW = np.zeros((4, d, d))
    dUh = np.zeros((4, d, d))
    db = np.zeros((4, d))
    dh_carry = np.zeros(d)
    dc_carry = np.zeros(d)
    for k in range(L - 1, -1, -1):
        gi, gf, go, gc = G[k, 0], G[k, 1], G[k, 2], G[k, 3]
        c_prev = C[k - 1] if k > 0 else np.zeros(d)
        h_prev = H[k - 1] if k > 0 else np.zeros(d)
        tc = np.tanh(C[k])
        dh = dH[k] + dh_carry
        dzo = dh * tc * go * (1.0 - go)
        dc = dh * go * (1.0 - tc * tc) + dc_carry
        dzi = dc * gc * gi * (1.0 - gi)
        dzc = dc * gi * (1.0 - gc * gc)
        dzf = dc * c_prev * gf * (1.0 - gf)
        dc_carry = dc * gf
        dz = (dzi, dzf, dzo, dzc)
        du = np.zeros(d)
        dh_carry = np.zeros(d)
        for g in range(4):
            dW[g] += np.outer(dz[g], U[k])
            dUh[g] += np.outer(dz[g], h_prev)
            db[g] += dz[g]
            du += W[g].T @ dz[g]
            dh_carry += Uh[g].T @ dz[g]
        dU[k] = du
    return dU, dW, dUh, db


# -- input-dependent linear scan ----------------------------------------------
# Per-channel scalar state: s_k = exp(step_k * A) * s_{k-1} + step_k * B_k * u_k,
# h_k = C_k * s_k, with step_k = softplus(Wd u_k + bd), B_k = Wb u_k,
# C_k = Wc u_k, and A a diagonal of negative reals.

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
    for k in range(L):
        zd = Wd @ U[k] + bd
        sig = 1.0 / (1.0 + np.exp(-zd))
        step = np.logaddexp(0.0, zd)
        bk = Wb @ U[k]
        ck = Wc @ U[k]
        abar = np.exp(step * A)
        s = abar * s + step * bk * U[k]
        H[k] = ck * s
        S[k] = s
        STEP[k] = step
        SIG[k] = sig
        B[k] = bk
        Cm[k] = ck
        ABAR[k] = abar
    return H, S, STEP, SIG, B, Cm, ABAR


def ssm_backward(U, A, Wd, bd, Wb, Wc, S, STEP, SIG, B, Cm, ABAR, dH):
    L, d = U.shape
    dU = np.empty((L, d))
    dA = np.zeros(d)
    dWd = np.zeros((d, d))
    dbd = np.zeros(d)
    dWb = np.zeros((d, d))
    dWc = np.zeros((d, d))
    ds_carry = np.zeros(d)
    for k in range(L - 1, -1, -1):
        s_prev = S[k - 1] if k > 0 else np.zeros(d)
        dC = dH[k] * S[k]
        ds = dH[k] * Cm[k] + ds_carry
        dabar = ds * s_prev
        dA += dabar * STEP[k] * ABAR[k]
        dstep = dabar * A * ABAR[k] + ds * B[k] * U[k]
        dB = ds * STEP[k] * U[k]
        du_direct = ds * STEP[k] * B[k]
        ds_carry = ds * ABAR[k]
        dzd = dstep * SIG[k]
        dU[k] = Wd.T @ dzd + Wb.T @ dB + Wc.T @ dC + du_direct
        dWd += np.outer(dzd, U[k])
        dbd += dzd
        dWb += np.outer(dB, U[k])
        dWc += np.outer(dC, U[k])
    return dU, dA, dWd, dbd, dWb, dWc
