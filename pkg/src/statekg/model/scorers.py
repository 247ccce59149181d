"""Decoders mapping (context, relation, candidate object) to a logit.

All four kinds support batched scoring of many candidate objects at once;
the batched values equal the per-object ones. The complex and rotational
kinds split the embedding into real/imaginary halves and need an even dim.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError

SCORER_KINDS = ("distmult", "mlp", "complex", "rotate")

_ROTATE_EPS = 1e-12


def scorer_param_specs(kind: str, dim: int) -> list[tuple[str, tuple, str]]:
    if kind == "mlp":
        return [
            ("score_w1", (dim, 3 * dim), "fanin"),
            ("score_b1", (dim,), "zeros"),
            ("score_w2", (dim,), "fanin"),
            ("score_b2", (1,), "zeros"),
        ]
    if kind in SCORER_KINDS:
        return []
    raise ValidationError(f"unknown scorer {kind!r}; expected one of {SCORER_KINDS}")


def check_scorer_dim(kind: str, dim: int) -> None:
    if kind in ("complex", "rotate") and dim % 2 != 0:
        raise ValidationError(f"{kind} scorer needs an even embedding dim, got {dim}")


def score_forward(params, kind: str, context: np.ndarray, rel: int, cand_ids: np.ndarray):
    """Logits for each candidate object id. Returns (logits, cache)."""
    e_r = params["relation_embed"][rel]
    e_o = params["entity_embed"][cand_ids]
    d = context.shape[0]
    if kind == "distmult":
        cr = context * e_r
        logits = e_o @ cr
        return logits, (kind, rel, cand_ids, context, e_r, e_o)
    if kind == "complex":
        h = d // 2
        c_re, c_im = context[:h], context[h:]
        r_re, r_im = e_r[:h], e_r[h:]
        a = c_re * r_re - c_im * r_im
        b = c_re * r_im + c_im * r_re
        logits = e_o[:, :h] @ a + e_o[:, h:] @ b
        return logits, (kind, rel, cand_ids, context, e_r, e_o, a, b)
    if kind == "rotate":
        h = d // 2
        th = np.tanh(e_r[:h])
        theta = np.pi * th
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        c_re, c_im = context[:h], context[h:]
        rot_re = c_re * cos_t - c_im * sin_t
        rot_im = c_re * sin_t + c_im * cos_t
        diff_re = rot_re[None, :] - e_o[:, :h]
        diff_im = rot_im[None, :] - e_o[:, h:]
        norms = np.sqrt((diff_re * diff_re + diff_im * diff_im).sum(axis=1) + _ROTATE_EPS)
        logits = -norms
        return logits, (kind, rel, cand_ids, context, e_r, th, cos_t, sin_t,
                        diff_re, diff_im, norms)
    if kind == "mlp":
        n = cand_ids.shape[0]
        z = np.concatenate(
            [np.broadcast_to(context, (n, d)), np.broadcast_to(e_r, (n, d)), e_o], axis=1
        )
        hidden = np.tanh(z @ params["score_w1"].T + params["score_b1"])
        logits = hidden @ params["score_w2"] + params["score_b2"][0]
        return logits, (kind, rel, cand_ids, z, hidden)
    raise ValidationError(f"unknown scorer {kind!r}; expected one of {SCORER_KINDS}")


def score_backward(params, grads, cache, d_logits):
    """Backprop to the context vector; embedding/parameter grads accumulate."""
    kind = cache[0]
    if kind == "distmult":
        _, rel, cand_ids, context, e_r, e_o = cache
        w = d_logits @ e_o
        d_context = w * e_r
        grads["relation_embed"][rel] += w * context
        np.add.at(grads["entity_embed"], cand_ids, d_logits[:, None] * (context * e_r)[None, :])
        return d_context
    if kind == "complex":
        _, rel, cand_ids, context, e_r, e_o, a, b = cache
        h = a.shape[0]
        c_re, c_im = context[:h], context[h:]
        r_re, r_im = e_r[:h], e_r[h:]
        d_a = d_logits @ e_o[:, :h]
        d_b = d_logits @ e_o[:, h:]
        d_context = np.concatenate([d_a * r_re + d_b * r_im, -d_a * r_im + d_b * r_re])
        grads["relation_embed"][rel, :h] += d_a * c_re + d_b * c_im
        grads["relation_embed"][rel, h:] += -d_a * c_im + d_b * c_re
        d_eo = np.concatenate(
            [d_logits[:, None] * a[None, :], d_logits[:, None] * b[None, :]], axis=1
        )
        np.add.at(grads["entity_embed"], cand_ids, d_eo)
        return d_context
    if kind == "rotate":
        (_, rel, cand_ids, context, e_r, th, cos_t, sin_t,
         diff_re, diff_im, norms) = cache
        h = th.shape[0]
        c_re, c_im = context[:h], context[h:]
        scale = (-d_logits / norms)[:, None]
        dd_re = scale * diff_re
        dd_im = scale * diff_im
        d_eo = np.concatenate([-dd_re, -dd_im], axis=1)
        np.add.at(grads["entity_embed"], cand_ids, d_eo)
        d_rot_re = dd_re.sum(axis=0)
        d_rot_im = dd_im.sum(axis=0)
        d_context = np.concatenate(
            [d_rot_re * cos_t + d_rot_im * sin_t, -d_rot_re * sin_t + d_rot_im * cos_t]
        )
        d_theta = d_rot_re * (-c_re * sin_t - c_im * cos_t) + d_rot_im * (
            c_re * cos_t - c_im * sin_t
        )
        grads["relation_embed"][rel, :h] += d_theta * np.pi * (1.0 - th * th)
        return d_context
    if kind == "mlp":
        _, rel, cand_ids, z, hidden = cache
        d = z.shape[1] // 3
        grads["score_w2"] += hidden.T @ d_logits
        grads["score_b2"][0] += d_logits.sum()
        d_hidden = d_logits[:, None] * params["score_w2"][None, :]
        d_pre = d_hidden * (1.0 - hidden * hidden)
        grads["score_w1"] += d_pre.T @ z
        grads["score_b1"] += d_pre.sum(axis=0)
        d_z = d_pre @ params["score_w1"]
        d_context = d_z[:, :d].sum(axis=0)
        grads["relation_embed"][rel] += d_z[:, d : 2 * d].sum(axis=0)
        np.add.at(grads["entity_embed"], cand_ids, d_z[:, 2 * d :])
        return d_context
    raise ValidationError(f"unknown scorer {kind!r}")
