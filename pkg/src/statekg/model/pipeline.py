"""End-to-end query computation: history lookup, state-augmented event
encoding, backbone pass, query attention, scoring, and the ranking loss.

Entity states read from memory enter as plain constants; no gradient flows
into the buffers. Queries with an empty history (and the context-free
ablation) fall back to a learned representation of (subject, relation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericError
from .backbones import backbone_backward, run_backbone
from .layers import (
    attend_backward,
    attend_forward,
    fuse_backward,
    fuse_forward,
    mlp2_backward,
    mlp2_forward,
    time_backward,
    time_forward,
)
from .scorers import score_backward, score_forward


@dataclass
class QueryContext:
    """Per-query outputs that callers feed onward to memory bookkeeping."""

    context: np.ndarray  # pooled context vector (d,)
    attention: np.ndarray  # event weights, empty when no history was used
    gate_means: np.ndarray  # per-event perceiver-gate means over dimensions
    objects: np.ndarray  # history object ids aligned with gate_means
    used_history: bool


def build_context(model, memory, kg, subject: int, relation: int, qtime: int,
                  *, wo_state: bool = False, wo_context: bool = False):
    """Compute the query context c_s. Returns (QueryContext, backward cache)."""
    params = model.params
    hist = None if wo_context else kg.get_history(subject, qtime, model.cfg.window)
    if hist is None or hist.length == 0:
        x = np.concatenate(
            [params["entity_embed"][subject], params["relation_embed"][relation]]
        )[None, :]
        out, mlp_cache = mlp2_forward(params, "query", x)
        qc = QueryContext(
            context=out[0],
            attention=np.zeros(0),
            gate_means=np.zeros(0),
            objects=np.zeros(0, dtype=np.int64),
            used_history=False,
        )
        return qc, ("query", mlp_cache, subject, relation)

    obj_ids = hist.objects
    rel_ids = hist.relations
    e_o = params["entity_embed"][obj_ids]
    if wo_state:
        s_o = np.zeros_like(e_o)
    else:
        s_o = memory.read_slow_many(obj_ids)
    fused, gate, fuse_cache = fuse_forward(params, e_o, s_o)
    e_r = params["relation_embed"][rel_ids]
    x_ev, struct_cache = mlp2_forward(params, "struct", np.concatenate([fused, e_r], axis=1))
    t_feat, t_scalars = time_forward(params, (qtime - hist.times).astype(np.float64))
    u, calib_cache = mlp2_forward(
        params, "calib", np.concatenate([x_ev, e_r, t_feat], axis=1)
    )
    y, bb_cache = run_backbone(params, model.cfg.backbone, model.cfg.heads, u)
    # Query-time encoding keyed to recency: gap to the newest history event.
    gap = np.array([qtime - int(hist.times[-1])], dtype=np.float64)
    e_t_rows, gap_scalars = time_forward(params, gap)
    context, alpha, att_cache = attend_forward(
        params, y, params["relation_embed"][relation], e_t_rows[0]
    )
    qc = QueryContext(
        context=context,
        attention=alpha,
        gate_means=gate.mean(axis=1),
        objects=obj_ids.copy(),
        used_history=True,
    )
    cache = (
        "history", obj_ids, rel_ids, relation,
        fuse_cache, struct_cache, t_scalars, calib_cache,
        bb_cache, att_cache, gap_scalars,
    )
    return qc, cache


def context_backward(model, grads, cache, d_context: np.ndarray) -> None:
    params = model.params
    d = model.cfg.dim
    if cache[0] == "query":
        _, mlp_cache, subject, relation = cache
        d_x = mlp2_backward(params, grads, "query", mlp_cache, d_context[None, :])
        grads["entity_embed"][subject] += d_x[0, :d]
        grads["relation_embed"][relation] += d_x[0, d:]
        return
    (_, obj_ids, rel_ids, relation, fuse_cache, struct_cache, t_scalars,
     calib_cache, bb_cache, att_cache, gap_scalars) = cache
    d_y, d_rel_q, d_et = attend_backward(params, grads, att_cache, d_context)
    grads["relation_embed"][relation] += d_rel_q
    time_backward(grads, gap_scalars, d_et[None, :])
    d_u = backbone_backward(params, grads, bb_cache, d_y)
    d_zc = mlp2_backward(params, grads, "calib", calib_cache, d_u)
    time_backward(grads, t_scalars, d_zc[:, 2 * d :])
    d_zs = mlp2_backward(params, grads, "struct", struct_cache, d_zc[:, :d])
    np.add.at(grads["relation_embed"], rel_ids, d_zc[:, d : 2 * d] + d_zs[:, d:])
    d_eo = fuse_backward(params, grads, fuse_cache, d_zs[:, :d])
    np.add.at(grads["entity_embed"], obj_ids, d_eo)


def forward_scores(model, memory, kg, subject: int, relation: int, qtime: int,
                   *, wo_state: bool = False, wo_context: bool = False):
    """Score every entity as the object of (subject, relation, ?, qtime)."""
    qc, _ = build_context(
        model, memory, kg, subject, relation, qtime,
        wo_state=wo_state, wo_context=wo_context,
    )
    cand = np.arange(model.cfg.entity_count)
    logits, _ = score_forward(model.params, model.cfg.scorer, qc.context, relation, cand)
    return logits, qc


def _nll(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of candidate 0 under a stabilized softmax."""
    m = logits.max()
    exps = np.exp(logits - m)
    z = exps.sum()
    loss = float(np.log(z) + m - logits[0])
    probs = exps / z
    return loss, probs


def query_loss(model, memory, kg, subject: int, relation: int, qtime: int,
               cand_ids: np.ndarray, *, wo_state: bool = False,
               wo_context: bool = False) -> float:
    """Forward-only loss over candidates (gold first); used by FD checks."""
    qc, _ = build_context(
        model, memory, kg, subject, relation, qtime,
        wo_state=wo_state, wo_context=wo_context,
    )
    logits, _ = score_forward(model.params, model.cfg.scorer, qc.context, relation, cand_ids)
    loss, _ = _nll(logits)
    return loss


def query_loss_and_grads(model, memory, kg, subject: int, relation: int, qtime: int,
                         cand_ids: np.ndarray, grads, *, wo_state: bool = False,
                         wo_context: bool = False):
    """Loss over candidates (gold first) plus accumulated parameter grads."""
    qc, cache = build_context(
        model, memory, kg, subject, relation, qtime,
        wo_state=wo_state, wo_context=wo_context,
    )
    logits, sc_cache = score_forward(
        model.params, model.cfg.scorer, qc.context, relation, cand_ids
    )
    loss, probs = _nll(logits)
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite loss for query ({subject}, {relation}, ?, {qtime})"
        )
    d_logits = probs.copy()
    d_logits[0] -= 1.0
    d_context = score_backward(model.params, grads, sc_cache, d_logits)
    context_backward(model, grads, cache, d_context)
    return loss, qc
