"""Rolling time-consistent filtered ranking, MRR/Hits aggregation,
chronological truncation sweeps, and entity-state analysis reports.

Queries are scored timestamp by timestamp in ascending order; each
timestamp's facts are revealed to the filter and folded into entity memory
only after all of its queries have been scored, so no query ever sees
same-time or future information.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import TemporalKG
from .errors import ConfigError, ValidationError
from .memory import DualMemory
from .model import ForecastModel, build_context, forward_scores

FILTER_MODES = ("rolling", "standard")


@dataclass
class RankingReport:
    per_query: list[tuple[int, int, int, int, int]]  # (subject, relation, time, gold, rank)
    mrr: float
    hits: dict[int, float]
    query_count: int


class RollingFilter:
    """Tracks, per (subject, relation), the tails observed strictly earlier.

    In rolling mode the filter set for a query at time t holds exactly the
    objects seen for that (subject, relation) at some earlier timestamp; in
    standard mode it holds the other gold objects at exactly time t.
    """

    def __init__(self, mode: str = "rolling"):
        if mode not in FILTER_MODES:
            raise ValidationError(f"unknown filter mode {mode!r}; expected {FILTER_MODES}")
        self.mode = mode
        self._seen: dict[tuple[int, int], set[int]] = {}

    def seed(self, facts: np.ndarray) -> None:
        if self.mode == "rolling":
            self.add_facts(facts)

    def add_facts(self, facts: np.ndarray) -> None:
        if self.mode != "rolling":
            return
        for s, r, o, _t in facts:
            self._seen.setdefault((int(s), int(r)), set()).add(int(o))

    def lookup(self, subject: int, relation: int, same_time: dict | None) -> set[int]:
        if self.mode == "rolling":
            return self._seen.get((subject, relation), set())
        assert same_time is not None
        return same_time.get((subject, relation), set())


def filtered_rank(scores: np.ndarray, gold: int, filter_set: set[int]) -> int:
    """Optimistic filtered rank: 1 + #unfiltered non-gold strictly better."""
    if not 0 <= gold < scores.shape[0]:
        raise ValidationError(f"gold entity {gold} out of range")
    mask = np.ones(scores.shape[0], dtype=bool)
    for e in filter_set:
        if 0 <= e < scores.shape[0]:
            mask[e] = False
    mask[gold] = False
    return 1 + int((scores[mask] > scores[gold]).sum())


def metrics_from_ranks(ranks: np.ndarray) -> tuple[float, dict[int, float]]:
    mrr = float((1.0 / ranks).mean())
    hits = {k: float((ranks <= k).mean()) for k in (1, 3, 10)}
    return mrr, hits


def _same_time_map(facts: np.ndarray) -> dict[tuple[int, int], set[int]]:
    out: dict[tuple[int, int], set[int]] = {}
    for s, r, o, _t in facts:
        out.setdefault((int(s), int(r)), set()).add(int(o))
    return out


def _facts_at(facts: np.ndarray, t: int) -> np.ndarray:
    times = facts[:, 3]
    lo = int(np.searchsorted(times, t, side="left"))
    hi = int(np.searchsorted(times, t, side="right"))
    return facts[lo:hi]


def _replay_updates(kg, model, memory, facts, cfg) -> None:
    """Advance memory through facts chronologically without scoring."""
    wo_context = "wo_context" in cfg.ablation
    for t in np.unique(facts[:, 3]):
        block = _facts_at(facts, int(t))
        pending = []
        for s, r, o, tt in block:
            qc, _ = build_context(
                model, memory, kg, int(s), int(r), int(tt), wo_context=wo_context
            )
            pending.append((int(s), qc))
        for s, qc in pending:
            memory.update(s, qc.context)
            if qc.gate_means.shape[0]:
                memory.record_gate_means(qc.objects, qc.gate_means)


def evaluate(kg: TemporalKG, model: ForecastModel, memory: DualMemory,
             split: str, cfg, *, filter_mode: str = "rolling",
             replay_from: int | None = None) -> RankingReport:
    """Filtered ranking over one split under the chronological protocol.

    The passed memory is cloned, never mutated. For the test split the clone
    is first advanced through every fact after the training period and before
    the test period (``replay_from`` overrides that boundary, e.g. after
    truncated training).
    """
    split_facts = kg.split_facts(split)
    if split_facts.shape[0] == 0:
        raise ConfigError(f"split {split!r} is empty")
    wo_state = "wo_state" in cfg.ablation
    wo_context = "wo_context" in cfg.ablation
    mem = memory.clone()
    split_lo, _ = kg.split_range(split)
    if replay_from is None and split == "test":
        replay_from = kg.valid_range[0]
    if replay_from is not None and not wo_state and replay_from < split_lo:
        _replay_updates(kg, model, mem, kg.facts[replay_from:split_lo], cfg)
    filt = RollingFilter(filter_mode)
    filt.seed(kg.facts[: split_lo])

    per_query: list[tuple[int, int, int, int, int]] = []
    ranks: list[int] = []
    for t in np.unique(split_facts[:, 3]):
        t = int(t)
        block = _facts_at(split_facts, t)
        same_time = _same_time_map(_facts_at(kg.facts, t)) if filter_mode == "standard" else None
        pending = []
        for s, r, o, _tt in block:
            s, r, o = int(s), int(r), int(o)
            scores, qc = forward_scores(
                model, mem, kg, s, r, t, wo_state=wo_state, wo_context=wo_context
            )
            rank = filtered_rank(scores, o, filt.lookup(s, r, same_time))
            per_query.append((s, r, t, o, rank))
            ranks.append(rank)
            pending.append((s, qc))
        filt.add_facts(block)
        if not wo_state:
            for s, qc in pending:
                mem.update(s, qc.context)
                if qc.gate_means.shape[0]:
                    mem.record_gate_means(qc.objects, qc.gate_means)
    rank_arr = np.asarray(ranks, dtype=np.int64)
    mrr, hits = metrics_from_ranks(rank_arr)
    return RankingReport(per_query=per_query, mrr=mrr, hits=hits, query_count=len(ranks))


@dataclass
class TruncationResult:
    fraction: int
    report: RankingReport | None
    warning: str = ""


def truncation_experiment(kg: TemporalKG, model_cfg, cfg, fractions,
                          *, filter_mode: str = "rolling",
                          progress=None) -> list[TruncationResult]:
    """Retrain from scratch on the earliest X% of training timestamps per X.

    The test split stays untouched; before test scoring the fresh memory is
    replayed through everything between the truncated boundary and the test
    period so test-time state still reflects full chronology.
    """
    from .model import ForecastModel as Model
    from .training import train

    train_times = np.unique(kg.split_facts("train")[:, 3])
    results: list[TruncationResult] = []
    for frac in fractions:
        if not 0 < frac <= 100:
            raise ValidationError(f"truncation fraction {frac} outside (0, 100]")
        keep = int(np.ceil(frac / 100.0 * train_times.shape[0]))
        if keep < 3:
            results.append(TruncationResult(
                int(frac), None,
                f"skipped: {frac}% keeps only {keep} training timestamps (< 3)",
            ))
            continue
        boundary_time = int(train_times[keep - 1])
        cut = int(np.searchsorted(kg.facts[:, 3], boundary_time, side="right"))
        kg_frac = dataclasses.replace(kg, train_range=(0, cut))
        model = Model(model_cfg, seed=cfg.seed)
        mem = DualMemory(kg.entity_count, model_cfg.dim, cfg.lam, cfg.kappa, cfg.gamma)
        train(kg_frac, model, mem, cfg, filter_mode=filter_mode, compute_valid=False)
        report = evaluate(
            kg_frac, model, mem, "test", cfg, filter_mode=filter_mode, replay_from=cut
        )
        results.append(TruncationResult(int(frac), report))
        if progress is not None:
            progress(frac, report)
    return results


def analyze_states(memory: DualMemory, baseline_slow: np.ndarray,
                   id_names: dict[int, str] | None, top_k: int
                   ) -> list[tuple[int, str, float, float, float]]:
    """Top movers by slow-state displacement since the baseline snapshot.

    Rows are (rank, entity label, displacement, gate mean, gate std); zero
    displacement rows are dropped so an untouched memory yields no rows.
    """
    if baseline_slow is None:
        raise ValidationError("missing baseline snapshot")
    rows = []
    for rank, (entity, disp, g_mu, g_sigma) in enumerate(
        memory.displacement_report(baseline_slow, top_k), start=1
    ):
        if disp == 0.0:
            continue
        label = id_names.get(entity, str(entity)) if id_names else str(entity)
        rows.append((rank, label, disp, g_mu, g_sigma))
    return rows
