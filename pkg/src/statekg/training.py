"""Training: counterfactual negative sampling, ranking loss over sampled
candidates, warmup+cosine schedule, decoupled-weight-decay Adam, and the
closed-loop epoch driver that interleaves gradient steps with memory writes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import TemporalKG
from .errors import ConfigError, NumericError, ValidationError
from .memory import DualMemory
from .model import ForecastModel, query_loss_and_grads

ABLATIONS = ("wo_context", "wo_state", "wo_ccl")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    lr: float = 5e-3
    weight_decay: float = 1e-4
    warmup_epochs: int = 2
    min_lr_factor: float = 0.1
    neg_count: int = 64
    lam: float = 0.2
    kappa: float = 5.0
    gamma: float = 0.5
    window: int = 32
    grad_clip: float = 5.0
    ablation: frozenset = field(default_factory=frozenset)
    seed: int = 0

    def __post_init__(self):
        self.ablation = frozenset(self.ablation)
        unknown = self.ablation - set(ABLATIONS)
        if unknown:
            raise ConfigError(
                f"unknown ablation flags {sorted(unknown)}; valid: {ABLATIONS}"
            )
        if self.epochs < 1 or self.batch_size < 1 or self.neg_count < 1:
            raise ConfigError("epochs, batch_size, and neg_count must be positive")
        if self.window < 1:
            raise ConfigError("history window must be >= 1")


@dataclass
class NegativeSet:
    candidates: np.ndarray  # int64, length <= K, gold excluded
    counterfactual_count: int
    filler_count: int


def _same_time_objects(kg: TemporalKG, subject: int, relation: int, qtime: int) -> set[int]:
    """Objects o' with (subject, relation, o', qtime) present in the facts."""
    times = kg.facts[:, 3]
    lo = int(np.searchsorted(times, qtime, side="left"))
    hi = int(np.searchsorted(times, qtime, side="right"))
    block = kg.facts[lo:hi]
    mask = (block[:, 0] == subject) & (block[:, 1] == relation)
    return set(int(o) for o in block[mask, 2])


def sample_negatives(kg: TemporalKG, subject: int, relation: int, gold: int,
                     qtime: int, k: int, rng: np.random.Generator,
                     mode: str = "counterfactual") -> NegativeSet:
    """Draw up to ``k`` negative object candidates for one query.

    Counterfactual mode prefers distinct past interaction partners of the
    subject (historically plausible but wrong now), excluding the gold object
    and anything correct at the query timestamp, then fills the remainder
    uniformly. Uniform mode excludes only the gold object.
    """
    if kg.entity_count <= 1:
        raise ValidationError("negative sampling needs at least 2 entities")
    if k < 1:
        raise ValidationError("neg_count must be >= 1")
    excluded = {gold}
    if mode == "uniform":
        pool = np.array([e for e in range(kg.entity_count) if e not in excluded])
        take = min(k, pool.shape[0])
        cands = rng.choice(pool, size=take, replace=False)
        return NegativeSet(np.sort(cands), 0, int(take))
    if mode != "counterfactual":
        raise ValidationError(f"unknown negative sampling mode {mode!r}")
    excluded |= _same_time_objects(kg, subject, relation, qtime)
    lo, hi = int(kg.hist_offsets[subject]), int(kg.hist_offsets[subject + 1])
    cut = lo + int(np.searchsorted(kg.hist_times[lo:hi], qtime, side="left"))
    past = np.unique(kg.hist_objects[lo:cut])
    past = np.array([o for o in past if int(o) not in excluded], dtype=np.int64)
    n_cf = min(k, past.shape[0])
    chosen = rng.choice(past, size=n_cf, replace=False) if n_cf else np.zeros(0, np.int64)
    taken = excluded | set(int(o) for o in chosen)
    remaining = np.array([e for e in range(kg.entity_count) if e not in taken])
    n_fill = min(k - n_cf, remaining.shape[0])
    fillers = (
        rng.choice(remaining, size=n_fill, replace=False) if n_fill else np.zeros(0, np.int64)
    )
    cands = np.concatenate([np.sort(chosen), np.sort(fillers)]).astype(np.int64)
    return NegativeSet(cands, int(n_cf), int(n_fill))


def ccl_loss_value(gold_logit: float, all_logits: np.ndarray) -> float:
    """Stabilized -[gold - logsumexp(candidates)]; candidates include gold."""
    m = float(all_logits.max())
    return float(np.log(np.exp(all_logits - m).sum()) + m - gold_logit)


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to the base rate, then cosine annealing to its floor."""
    if not 0 <= step < total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps})")
    warmup_steps = int(round(total_steps * cfg.warmup_epochs / cfg.epochs))
    if total_steps <= warmup_steps:
        raise ConfigError(
            f"total_steps {total_steps} must exceed warmup steps {warmup_steps}"
        )
    if step < warmup_steps:
        return cfg.lr * (step + 1) / warmup_steps
    lr_min = cfg.min_lr_factor * cfg.lr
    span = total_steps - 1 - warmup_steps
    progress = (step - warmup_steps) / span if span > 0 else 1.0
    return lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + np.cos(np.pi * progress))


class AdamW:
    """Adam moments with decoupled weight decay over a parameter dict."""

    def __init__(self, params: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float, weight_decay: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= lr * (update + weight_decay * p)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def _epoch_order(facts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ascending-time order with a fresh shuffle inside each timestamp."""
    times = facts[:, 3]
    perm = np.arange(facts.shape[0])
    for t in np.unique(times):
        lo = int(np.searchsorted(times, t, side="left"))
        hi = int(np.searchsorted(times, t, side="right"))
        perm[lo:hi] = lo + rng.permutation(hi - lo)
    return perm


def apply_memory_updates(memory: DualMemory, subjects, contexts, qcs) -> None:
    """Write severed contexts in event order and record perceiver gates."""
    for subject, context, qc in zip(subjects, contexts, qcs):
        memory.update(int(subject), context)
        if qc is not None and qc.gate_means.shape[0]:
            memory.record_gate_means(qc.objects, qc.gate_means)


def train(kg: TemporalKG, model: ForecastModel, memory: DualMemory,
          cfg: TrainConfig, *, filter_mode: str = "rolling",
          compute_valid: bool = True, progress=None) -> list[dict]:
    """Run the closed-loop training epochs; returns per-step log rows.

    Per batch: forward every query against the current memory, take one
    clipped AdamW step, then apply that batch's memory writes (contexts all
    come from the pre-step parameter snapshot). Memory persists across
    epochs; validation runs on a clone and is discarded.
    """
    from .evaluation import evaluate  # local import to avoid a cycle

    train_facts = kg.split_facts("train")
    if train_facts.shape[0] == 0:
        raise ConfigError("training split is empty")
    wo_state = "wo_state" in cfg.ablation
    wo_context = "wo_context" in cfg.ablation
    neg_mode = "uniform" if "wo_ccl" in cfg.ablation else "counterfactual"
    ss = np.random.SeedSequence(cfg.seed)
    rng_shuffle, rng_neg = (np.random.default_rng(c) for c in ss.spawn(2))
    steps_per_epoch = (train_facts.shape[0] + cfg.batch_size - 1) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs
    optimizer = AdamW(model.params)
    rows: list[dict] = []
    global_step = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_start = time.perf_counter()
        order = _epoch_order(train_facts, rng_shuffle)
        for b in range(steps_per_epoch):
            batch = train_facts[order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            grads = model.new_grads()
            batch_loss = 0.0
            writes: list[tuple[int, np.ndarray, object]] = []
            for s, r, o, t in batch:
                s, r, o, t = int(s), int(r), int(o), int(t)
                negs = sample_negatives(kg, s, r, o, t, cfg.neg_count, rng_neg, neg_mode)
                cand = np.concatenate([[o], negs.candidates]).astype(np.int64)
                try:
                    loss, qc = query_loss_and_grads(
                        model, memory, kg, s, r, t, cand, grads,
                        wo_state=wo_state, wo_context=wo_context,
                    )
                except NumericError as exc:
                    raise NumericError(
                        f"epoch {epoch} batch {b}: {exc}"
                    ) from exc
                batch_loss += loss
                if not wo_state:
                    writes.append((s, qc.context, qc))
            n = batch.shape[0]
            for g in grads.values():
                g /= n
            clip_gradients(grads, cfg.grad_clip)
            lr = lr_at(global_step, total_steps, cfg)
            optimizer.step(model.params, grads, lr, cfg.weight_decay)
            if not model.all_finite():
                bad = [k for k, v in model.params.items() if not np.all(np.isfinite(v))]
                raise NumericError(
                    f"epoch {epoch} batch {b}: non-finite parameter {bad[0]!r} after step"
                )
            apply_memory_updates(
                memory, [w[0] for w in writes], [w[1] for w in writes], [w[2] for w in writes]
            )
            rows.append({
                "epoch": epoch, "step": global_step, "lr": lr,
                "loss": batch_loss / n, "valid_mrr": "", "wall_clock_s": "",
            })
            global_step += 1
        if compute_valid:
            report = evaluate(kg, model, memory, "valid", cfg, filter_mode=filter_mode)
            rows[-1]["valid_mrr"] = report.mrr
        rows[-1]["wall_clock_s"] = round(time.perf_counter() - epoch_start, 3)
        if progress is not None:
            progress(epoch, rows[-1])
    return rows


def write_log_csv(rows: list[dict], stream) -> None:
    cols = ["epoch", "step", "lr", "loss", "valid_mrr", "wall_clock_s"]
    stream.write(",".join(cols) + "\n")
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:.12g}" if isinstance(v, float) else str(v))
        stream.write(",".join(cells) + "\n")
