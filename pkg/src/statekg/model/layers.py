"""Differentiable building blocks of the forecaster, written as explicit
forward/backward pairs over float64 numpy arrays.

Every forward returns (output, cache); the matching backward consumes the
cache plus the upstream gradient and accumulates parameter gradients into a
dict keyed like the parameter dict. Shapes: event batches are (n, d) with
the event axis first.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


# -- state-augmentation gate --------------------------------------------------

def fuse_forward(params, e_obj: np.ndarray, s_obj: np.ndarray):
    """Blend static embeddings with entity states through a sigmoid gate.

    gate = sigma(W [e ; s] + b); fused = gate * e + (1 - gate) * s.
    """
    z = np.concatenate([e_obj, s_obj], axis=1)
    gate = sigmoid(z @ params["gate_w"].T + params["gate_b"])
    fused = gate * e_obj + (1.0 - gate) * s_obj
    return fused, gate, (z, gate, e_obj, s_obj)


def fuse_backward(params, grads, cache, d_fused):
    """Gradient wrt e_obj only; the state rows are non-trainable constants."""
    z, gate, e_obj, s_obj = cache
    d = e_obj.shape[1]
    d_gate = d_fused * (e_obj - s_obj)
    d_pre = d_gate * gate * (1.0 - gate)
    grads["gate_w"] += d_pre.T @ z
    grads["gate_b"] += d_pre.sum(axis=0)
    d_e = d_fused * gate + d_pre @ params["gate_w"][:, :d]
    return d_e


# -- two-layer perceptron with a tanh hidden layer ----------------------------

def mlp2_forward(params, prefix: str, x: np.ndarray):
    hidden = np.tanh(x @ params[f"{prefix}_w1"].T + params[f"{prefix}_b1"])
    out = hidden @ params[f"{prefix}_w2"].T + params[f"{prefix}_b2"]
    return out, (x, hidden)


def mlp2_backward(params, grads, prefix: str, cache, d_out):
    x, hidden = cache
    grads[f"{prefix}_w2"] += d_out.T @ hidden
    grads[f"{prefix}_b2"] += d_out.sum(axis=0)
    d_hidden = d_out @ params[f"{prefix}_w2"]
    d_pre = d_hidden * (1.0 - hidden * hidden)
    grads[f"{prefix}_w1"] += d_pre.T @ x
    grads[f"{prefix}_b1"] += d_pre.sum(axis=0)
    return d_pre @ params[f"{prefix}_w1"]


# -- elapsed-time projection ---------------------------------------------------

def time_forward(params, deltas: np.ndarray):
    """Project log(1 + dt) scalars to the time-encoding space."""
    feat = np.log1p(deltas.astype(np.float64))
    out = feat[:, None] * params["time_w"][None, :] + params["time_b"]
    return out, feat


def time_backward(grads, feat, d_out):
    grads["time_w"] += (d_out * feat[:, None]).sum(axis=0)
    grads["time_b"] += d_out.sum(axis=0)


# -- query-aware attention pooling ---------------------------------------------

def attend_forward(params, y: np.ndarray, e_rel: np.ndarray, e_time: np.ndarray):
    """Softmax pooling of encoder outputs keyed by the query relation and time.

    Logits are v . tanh(W [y_k ; e_rel ; e_time]); the max logit is subtracted
    before exponentiation.
    """
    n = y.shape[0]
    z = np.concatenate(
        [y, np.broadcast_to(e_rel, (n, e_rel.shape[0])),
         np.broadcast_to(e_time, (n, e_time.shape[0]))], axis=1
    )
    hidden = np.tanh(z @ params["att_w"].T + params["att_b"])
    logits = hidden @ params["att_v"]
    shifted = np.exp(logits - logits.max())
    alpha = shifted / shifted.sum()
    context = alpha @ y
    return context, alpha, (z, hidden, alpha, y)


def attend_backward(params, grads, cache, d_context):
    z, hidden, alpha, y = cache
    d = y.shape[1]
    d_y = alpha[:, None] * d_context[None, :]
    d_alpha = y @ d_context
    d_logits = alpha * (d_alpha - float(alpha @ d_alpha))
    grads["att_v"] += hidden.T @ d_logits
    d_hidden = d_logits[:, None] * params["att_v"][None, :]
    d_pre = d_hidden * (1.0 - hidden * hidden)
    grads["att_w"] += d_pre.T @ z
    grads["att_b"] += d_pre.sum(axis=0)
    d_z = d_pre @ params["att_w"]
    d_y += d_z[:, :d]
    d_rel = d_z[:, d : 2 * d].sum(axis=0)
    d_time = d_z[:, 2 * d :].sum(axis=0)
    return d_y, d_rel, d_time
