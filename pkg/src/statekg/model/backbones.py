"""Pluggable causal sequence encoders sharing one projection head.

Every backbone maps a calibrated event sequence U (n, d) to outputs
Y (n, d) with y_k a function of u_1..u_k only. The recurrent kinds run
through the scan-kernel backend; the attention kind is pure matrix algebra.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ValidationError
from .layers import sigmoid, softplus

BACKBONE_KINDS = ("rnn", "lstm", "transformer", "mamba")


def backbone_param_specs(kind: str, dim: int, window: int) -> list[tuple[str, tuple, str]]:
    """(name, shape, init) triples for one backbone kind."""
    d = dim
    if kind == "rnn":
        return [("rnn_wu", (d, d), "fanin"), ("rnn_wh", (d, d), "fanin")]
    if kind == "lstm":
        return [
            ("lstm_w", (4, d, d), "fanin"),
            ("lstm_u", (4, d, d), "fanin"),
            ("lstm_b", (4, d), "zeros"),
        ]
    if kind == "transformer":
        return [
            ("attn_wq", (d, d), "fanin"),
            ("attn_wk", (d, d), "fanin"),
            ("attn_wv", (d, d), "fanin"),
            ("attn_wo", (d, d), "fanin"),
            ("attn_pos", (window, d), "fanin"),
        ]
    if kind == "mamba":
        return [
            ("ssm_a_raw", (d,), "ssm_a"),
            ("ssm_wd", (d, d), "fanin"),
            ("ssm_bd", (d,), "zeros"),
            ("ssm_wb", (d, d), "fanin"),
            ("ssm_wc", (d, d), "fanin"),
        ]
    raise ValidationError(f"unknown backbone {kind!r}; expected one of {BACKBONE_KINDS}")


def _causal_attention_forward(params, heads: int, u: np.ndarray):
    n, d = u.shape
    dh = d // heads
    x = u + params["attn_pos"][:n]
    q = x @ params["attn_wq"].T
    k = x @ params["attn_wk"].T
    v = x @ params["attn_wv"].T
    mask = np.triu(np.full((n, n), -np.inf), k=1)
    attn = np.empty((heads, n, n))
    mixed = np.empty((n, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = (q[:, sl] @ k[:, sl].T) / np.sqrt(dh) + mask
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        a = e / e.sum(axis=1, keepdims=True)
        attn[h] = a
        mixed[:, sl] = a @ v[:, sl]
    out = mixed @ params["attn_wo"].T
    return out, (x, q, k, v, attn, mixed)


def _causal_attention_backward(params, grads, heads, cache, d_out):
    x, q, k, v, attn, mixed = cache
    n, d = x.shape
    dh = d // heads
    grads["attn_wo"] += d_out.T @ mixed
    d_mixed = d_out @ params["attn_wo"]
    d_q = np.empty((n, d))
    d_k = np.empty((n, d))
    d_v = np.empty((n, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        a = attn[h]
        d_a = d_mixed[:, sl] @ v[:, sl].T
        d_v[:, sl] = a.T @ d_mixed[:, sl]
        d_scores = a * (d_a - (d_a * a).sum(axis=1, keepdims=True))
        d_scores /= np.sqrt(dh)
        d_q[:, sl] = d_scores @ k[:, sl]
        d_k[:, sl] = d_scores.T @ q[:, sl]
    grads["attn_wq"] += d_q.T @ x
    grads["attn_wk"] += d_k.T @ x
    grads["attn_wv"] += d_v.T @ x
    d_x = d_q @ params["attn_wq"] + d_k @ params["attn_wk"] + d_v @ params["attn_wv"]
    grads["attn_pos"][:n] += d_x
    return d_x


def run_backbone(params, kind: str, heads: int, u: np.ndarray):
    """Encode the sequence and apply the shared projection head."""
    if u.ndim != 2 or u.shape[0] < 1:
        raise ValidationError("backbone input must be a non-empty (n, d) sequence")
    if kind == "rnn":
        h = kernels.get("rnn_forward")(u, params["rnn_wu"], params["rnn_wh"])
        cache = (u, h)
    elif kind == "lstm":
        h, c, g = kernels.get("lstm_forward")(u, params["lstm_w"], params["lstm_u"], params["lstm_b"])
        cache = (u, h, c, g)
    elif kind == "mamba":
        a = -softplus(params["ssm_a_raw"])
        h, s, step, sig, b, cm, abar = kernels.get("ssm_forward")(
            u, a, params["ssm_wd"], params["ssm_bd"], params["ssm_wb"], params["ssm_wc"]
        )
        cache = (u, a, s, step, sig, b, cm, abar)
    elif kind == "transformer":
        h, cache = _causal_attention_forward(params, heads, u)
    else:
        raise ValidationError(f"unknown backbone {kind!r}; expected one of {BACKBONE_KINDS}")
    y = h @ params["proj_w"].T
    return y, (kind, heads, h, cache)


def backbone_backward(params, grads, cache, d_y):
    kind, heads, h, inner = cache
    grads["proj_w"] += d_y.T @ h
    d_h = d_y @ params["proj_w"]
    if kind == "rnn":
        u, hh = inner
        d_u, d_wu, d_wh = kernels.get("rnn_backward")(u, params["rnn_wu"], params["rnn_wh"], hh, d_h)
        grads["rnn_wu"] += d_wu
        grads["rnn_wh"] += d_wh
        return d_u
    if kind == "lstm":
        u, hh, c, g = inner
        d_u, d_w, d_uh, d_b = kernels.get("lstm_backward")(
            u, params["lstm_w"], params["lstm_u"], params["lstm_b"], hh, c, g, d_h
        )
        grads["lstm_w"] += d_w
        grads["lstm_u"] += d_uh
        grads["lstm_b"] += d_b
        return d_u
    if kind == "mamba":
        u, a, s, step, sig, b, cm, abar = inner
        d_u, d_a, d_wd, d_bd, d_wb, d_wc = kernels.get("ssm_backward")(
            u, a, params["ssm_wd"], params["ssm_bd"], params["ssm_wb"], params["ssm_wc"],
            s, step, sig, b, cm, abar, d_h,
        )
        grads["ssm_a_raw"] += -d_a * sigmoid(params["ssm_a_raw"])
        grads["ssm_wd"] += d_wd
        grads["ssm_bd"] += d_bd
        grads["ssm_wb"] += d_wb
        grads["ssm_wc"] += d_wc
        return d_u
    return _causal_attention_backward(params, grads, heads, inner, d_h)
