"""Temporal knowledge graph ingestion, indexing, splitting, and synthesis.

Facts are integer quadruples (subject, relation, object, time). After optional
inverse augmentation every query is an object query: the fact (s, r, o, t)
gains a twin (o, r + R, s, t) so subject-side prediction reduces to object
prediction under the shifted relation id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import (
    EntityLookupError,
    GenerationError,
    ParseError,
    SplitError,
    ValidationError,
)


class Quadruple(NamedTuple):
    subject: int
    relation: int
    object: int
    time: int


@dataclass
class HistoryWindow:
    """The most recent past interactions of one subject, time-ascending."""

    objects: np.ndarray  # int64 (length,)
    relations: np.ndarray  # int64 (length,)
    times: np.ndarray  # int64 (length,)
    query_time: int

    @property
    def length(self) -> int:
        return int(self.objects.shape[0])


def parse_quadruples(lines: Iterable[str], time_step: int = 1) -> list[Quadruple]:
    """Parse tab-separated integer fact lines into quadruples.

    Each non-empty line must carry at least four integer fields
    (subject, relation, object, raw_time); extra columns are ignored.
    Raw times are bucketed into snapshot indices via floor(raw / time_step).
    """
    if time_step < 1:
        raise ValidationError(f"time_step must be positive, got {time_step}")
    facts: list[Quadruple] = []
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped:
            continue
        parts = stripped.split("\t")
        if len(parts) < 4:
            raise ParseError(
                f"line {lineno}: expected at least 4 tab-separated fields, got {len(parts)}"
            )
        try:
            s, r, o, raw_time = (int(parts[i]) for i in range(4))
        except ValueError as exc:
            raise ParseError(f"line {lineno}: non-integer field ({exc})") from None
        if s < 0 or r < 0 or o < 0:
            raise ValidationError(f"line {lineno}: negative id in ({s}, {r}, {o})")
        if raw_time < 0:
            raise ValidationError(f"line {lineno}: negative time {raw_time}")
        facts.append(Quadruple(s, r, o, raw_time // time_step))
    return facts


def add_inverse_relations(
    facts: Sequence[Quadruple], relation_count_base: int
) -> list[Quadruple]:
    """Return each fact followed by its inverse (o, r + R, s, t)."""
    out: list[Quadruple] = []
    for f in facts:
        if f.relation >= relation_count_base:
            raise ValidationError(
                f"relation id {f.relation} >= relation_count_base {relation_count_base}"
            )
        out.append(f)
        out.append(Quadruple(f.object, f.relation + relation_count_base, f.subject, f.time))
    return out


def _facts_to_array(facts: Sequence[Quadruple]) -> np.ndarray:
    if len(facts) == 0:
        return np.zeros((0, 4), dtype=np.int64)
    return np.asarray(facts, dtype=np.int64).reshape(len(facts), 4)


def _split_boundaries(
    times: np.ndarray, ratios: tuple[float, float, float]
) -> tuple[int, int]:
    """Pick (train_max_time, valid_max_time) snapped to timestamp boundaries.

    The boundary is the smallest timestamp whose cumulative fact fraction
    reaches the target ratio; a snapshot never straddles two splits.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"split ratios must sum to 1, got {ratios}")
    if np.any(np.diff(times) < 0):
        raise SplitError("facts must be sorted ascending by time before splitting")
    uniq = np.unique(times)
    if uniq.shape[0] < 3:
        raise SplitError(
            f"need at least 3 distinct timestamps to split, got {uniq.shape[0]}"
        )
    n = times.shape[0]
    cum = np.searchsorted(times, uniq, side="right") / n
    i1 = int(np.argmax(cum >= ratios[0] - 1e-12))
    # Validation must start strictly after the training period.
    later = np.nonzero(cum >= ratios[0] + ratios[1] - 1e-12)[0]
    later = later[later > i1]
    if later.shape[0] == 0 or i1 >= uniq.shape[0] - 1:
        raise SplitError("no timestamps left for the validation split")
    i2 = int(later[0])
    if i2 >= uniq.shape[0] - 1:
        raise SplitError("no timestamps left for the test split")
    return int(uniq[i1]), int(uniq[i2])


@dataclass
class TemporalKG:
    """Indexed fact store with chronological splits and per-entity history.

    ``facts`` is time-sorted (stable within a timestamp) and already contains
    inverse-augmented twins when ``add_inverse`` is set. Split ranges index
    into ``facts``. The history index is CSR-shaped: entity ``e`` owns rows
    ``hist_offsets[e]:hist_offsets[e+1]`` of the three parallel arrays, where
    it appears as the subject.
    """

    entity_count: int
    relation_count_base: int
    add_inverse: bool
    facts: np.ndarray  # int64 (N, 4)
    train_range: tuple[int, int]
    valid_range: tuple[int, int]
    test_range: tuple[int, int]
    hist_objects: np.ndarray = field(repr=False)
    hist_relations: np.ndarray = field(repr=False)
    hist_times: np.ndarray = field(repr=False)
    hist_offsets: np.ndarray = field(repr=False)

    @property
    def relation_count(self) -> int:
        """Relation vocabulary size actually used by facts (2R if augmented)."""
        return self.relation_count_base * 2 if self.add_inverse else self.relation_count_base

    def split_range(self, split: str) -> tuple[int, int]:
        try:
            return {"train": self.train_range, "valid": self.valid_range, "test": self.test_range}[split]
        except KeyError:
            raise ValidationError(f"unknown split {split!r}") from None

    def split_facts(self, split: str) -> np.ndarray:
        lo, hi = self.split_range(split)
        return self.facts[lo:hi]

    def raw_split_size(self, split: str) -> int:
        """Number of source facts in a split (augmented twins not counted)."""
        lo, hi = self.split_range(split)
        return (hi - lo) // 2 if self.add_inverse else hi - lo

    @property
    def snapshot_count(self) -> int:
        return int(np.unique(self.facts[:, 3]).shape[0])

    def get_history(self, subject: int, query_time: int, window: int) -> HistoryWindow:
        """Return the ``window`` most recent interactions strictly before ``query_time``."""
        if not 0 <= subject < self.entity_count:
            raise EntityLookupError(f"unknown subject {subject}")
        if window < 1:
            raise ValidationError(f"history window must be >= 1, got {window}")
        lo, hi = int(self.hist_offsets[subject]), int(self.hist_offsets[subject + 1])
        times = self.hist_times[lo:hi]
        cut = int(np.searchsorted(times, query_time, side="left"))
        start = max(0, cut - window)
        return HistoryWindow(
            objects=self.hist_objects[lo + start : lo + cut].copy(),
            relations=self.hist_relations[lo + start : lo + cut].copy(),
            times=self.hist_times[lo + start : lo + cut].copy(),
            query_time=query_time,
        )


def _build_history_index(
    facts: np.ndarray, entity_count: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    counts = np.bincount(facts[:, 0], minlength=entity_count)
    offsets = np.zeros(entity_count + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    objects = np.empty(facts.shape[0], dtype=np.int64)
    relations = np.empty(facts.shape[0], dtype=np.int64)
    times = np.empty(facts.shape[0], dtype=np.int64)
    cursor = offsets[:-1].copy()
    for s, r, o, t in facts:
        i = cursor[s]
        objects[i] = o
        relations[i] = r
        times[i] = t
        cursor[s] += 1
    return objects, relations, times, offsets


def build_kg(
    facts: Sequence[Quadruple],
    *,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    entity_count: int | None = None,
    relation_count: int | None = None,
    add_inverse: bool = True,
    presplit_sizes: tuple[int, int, int] | None = None,
) -> TemporalKG:
    """Assemble a TemporalKG: sort, split on timestamp boundaries, augment, index.

    When ``presplit_sizes`` is given the first/middle/last blocks of ``facts``
    are taken as train/valid/test verbatim (their timestamps must already be
    chronologically disjoint) and ``ratios`` is ignored.
    """
    arr = _facts_to_array(facts)
    if arr.shape[0] == 0:
        raise SplitError("cannot build a dataset from zero facts")
    ent = int(entity_count) if entity_count is not None else int(max(arr[:, 0].max(), arr[:, 2].max())) + 1
    rel = int(relation_count) if relation_count is not None else int(arr[:, 1].max()) + 1
    if arr[:, 0].max() >= ent or arr[:, 2].max() >= ent:
        raise ValidationError("entity id out of range for declared entity_count")
    if arr[:, 1].max() >= rel:
        raise ValidationError("relation id out of range for declared relation_count")

    if presplit_sizes is not None:
        n1, n2, n3 = presplit_sizes
        if n1 + n2 + n3 != arr.shape[0]:
            raise SplitError("presplit sizes do not cover the fact list")
        blocks = [arr[:n1], arr[n1 : n1 + n2], arr[n1 + n2 :]]
        for b in blocks:
            if b.shape[0] == 0:
                raise SplitError("presplit blocks must be non-empty")
            if np.any(np.diff(b[:, 3]) < 0):
                raise SplitError("presplit blocks must each be time-sorted")
        if not (blocks[0][:, 3].max() < blocks[1][:, 3].min() <= blocks[1][:, 3].max() < blocks[2][:, 3].min()):
            raise SplitError("presplit blocks are not chronologically disjoint")
        t_train_max = int(blocks[0][:, 3].max())
        t_valid_max = int(blocks[1][:, 3].max())
    else:
        order = np.argsort(arr[:, 3], kind="stable")
        arr = arr[order]
        t_train_max, t_valid_max = _split_boundaries(arr[:, 3], ratios)

    if add_inverse:
        inv = arr[:, [2, 1, 0, 3]].copy()
        inv[:, 1] += rel
        interleaved = np.empty((arr.shape[0] * 2, 4), dtype=np.int64)
        interleaved[0::2] = arr
        interleaved[1::2] = inv
        arr = interleaved

    order = np.argsort(arr[:, 3], kind="stable")
    arr = arr[order]
    times = arr[:, 3]
    n1 = int(np.searchsorted(times, t_train_max, side="right"))
    n2 = int(np.searchsorted(times, t_valid_max, side="right"))
    kg_facts = np.ascontiguousarray(arr)
    h_obj, h_rel, h_time, h_off = _build_history_index(kg_facts, ent)
    return TemporalKG(
        entity_count=ent,
        relation_count_base=rel,
        add_inverse=add_inverse,
        facts=kg_facts,
        train_range=(0, n1),
        valid_range=(n1, n2),
        test_range=(n2, kg_facts.shape[0]),
        hist_objects=h_obj,
        hist_relations=h_rel,
        hist_times=h_time,
        hist_offsets=h_off,
    )


def chronological_split(
    facts: Sequence[Quadruple],
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    **kwargs,
) -> TemporalKG:
    """Split time-sorted facts into train/valid/test on timestamp boundaries."""
    return build_kg(facts, ratios=ratios, **kwargs)


@dataclass
class SyntheticSpec:
    """Parameters of the synthetic dataset generators.

    Modes:
      periodic     each subject cycles through a fixed (relation, object)
                   schedule, so the answer is always visible in a short window.
      long_memory  each subject's current partners are announced by tag events
                   that a run of self-loop distractors pushes out of any
                   length-``window`` history before the partners are queried;
                   answering requires information persisted outside the window.
      noise        uniform random facts.
    """

    mode: str
    entities: int
    relations: int
    timestamps: int
    max_period: int = 3
    window: int = 8
    distractors: int = 10
    partner_slots: int = 5
    segments: int = 6
    fact_count: int = 1000
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    add_inverse: bool = True


def _generate_periodic(spec: SyntheticSpec, rng: np.random.Generator) -> list[Quadruple]:
    if spec.max_period < 1:
        raise GenerationError("max_period must be >= 1")
    if spec.relations < spec.max_period:
        raise GenerationError(
            f"periodic mode needs relations >= max_period ({spec.relations} < {spec.max_period})"
        )
    if spec.entities * spec.relations < spec.entities * spec.max_period:
        raise GenerationError("not enough (relation, object) pairs for unique schedules")
    # Assign each subject a cycle of globally unique (relation, object) pairs so
    # both the forward query (s, r) -> o and the inverse query (o, r+R) -> s
    # have a single correct answer.
    used_pairs: set[tuple[int, int]] = set()
    schedule: list[list[tuple[int, int]]] = []
    for s in range(spec.entities):
        period = int(rng.integers(2, spec.max_period + 1)) if spec.max_period >= 2 else 1
        pairs: list[tuple[int, int]] = []
        used_rels: set[int] = set()
        for _ in range(period):
            for _attempt in range(1000):
                r = int(rng.integers(0, spec.relations))
                o = int(rng.integers(0, spec.entities))
                if r not in used_rels and (r, o) not in used_pairs:
                    used_rels.add(r)
                    used_pairs.add((r, o))
                    pairs.append((r, o))
                    break
            else:
                raise GenerationError("could not assign unique periodic schedules")
        schedule.append(pairs)
    facts = []
    for t in range(spec.timestamps):
        for s in range(spec.entities):
            r, o = schedule[s][t % len(schedule[s])]
            facts.append(Quadruple(s, r, o, t))
    return facts


def _generate_long_memory(spec: SyntheticSpec, rng: np.random.Generator) -> list[Quadruple]:
    n_subjects = spec.entities // 2
    n_objects = spec.entities - n_subjects
    if n_subjects < 1 or n_objects < spec.segments:
        raise GenerationError(
            f"long_memory needs entities//2 subjects and >= {spec.segments} partner "
            f"candidates, got {n_subjects}/{n_objects}"
        )
    if spec.distractors <= spec.window:
        raise GenerationError(
            f"distractors ({spec.distractors}) must exceed the history window "
            f"({spec.window}) or tag events stay visible"
        )
    expected_rel = 1 + 2 * spec.partner_slots
    if spec.relations != expected_rel:
        raise GenerationError(
            f"long_memory with {spec.partner_slots} partner slots needs exactly "
            f"{expected_rel} relations, got {spec.relations}"
        )
    seg_len = 1 + spec.distractors + spec.partner_slots
    if spec.timestamps != spec.segments * seg_len:
        raise GenerationError(
            f"long_memory timeline is segments * (1 + distractors + partner_slots) "
            f"= {spec.segments * seg_len}, got timestamps={spec.timestamps}"
        )
    noise_rel = 0
    tag_rel = [1 + j for j in range(spec.partner_slots)]
    query_rel = [1 + spec.partner_slots + j for j in range(spec.partner_slots)]
    object_ids = np.arange(n_subjects, spec.entities)
    # One partner per (subject, slot, segment); no repeats across segments so a
    # stale partner is never accidentally correct again.
    partners = np.empty((n_subjects, spec.partner_slots, spec.segments), dtype=np.int64)
    for s in range(n_subjects):
        for j in range(spec.partner_slots):
            partners[s, j] = rng.choice(object_ids, size=spec.segments, replace=False)
    facts = []
    for seg in range(spec.segments):
        t0 = seg * seg_len
        for s in range(n_subjects):
            for j in range(spec.partner_slots):
                facts.append(Quadruple(s, tag_rel[j], int(partners[s, j, seg]), t0))
        for k in range(spec.distractors):
            t = t0 + 1 + k
            for s in range(n_subjects):
                facts.append(Quadruple(s, noise_rel, s, t))
        for j in range(spec.partner_slots):
            t = t0 + 1 + spec.distractors + j
            for s in range(n_subjects):
                facts.append(Quadruple(s, query_rel[j], int(partners[s, j, seg]), t))
    return facts


def _generate_noise(spec: SyntheticSpec, rng: np.random.Generator) -> list[Quadruple]:
    if spec.fact_count < 3 or spec.timestamps < 3:
        raise GenerationError("noise mode needs fact_count >= 3 and timestamps >= 3")
    s = rng.integers(0, spec.entities, size=spec.fact_count)
    r = rng.integers(0, spec.relations, size=spec.fact_count)
    o = rng.integers(0, spec.entities, size=spec.fact_count)
    t = np.sort(rng.integers(0, spec.timestamps, size=spec.fact_count))
    if np.unique(t).shape[0] < 3:
        raise GenerationError("noise draw produced fewer than 3 distinct timestamps")
    return [Quadruple(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(s, r, o, t)]


_GENERATORS = {
    "periodic": _generate_periodic,
    "long_memory": _generate_long_memory,
    "noise": _generate_noise,
}


def generate_synthetic(spec: SyntheticSpec, seed: int) -> TemporalKG:
    """Deterministically synthesize a TemporalKG for the given spec and seed."""
    if spec.mode not in _GENERATORS:
        raise GenerationError(
            f"unknown mode {spec.mode!r}; expected one of {sorted(_GENERATORS)}"
        )
    if spec.entities < 2:
        raise GenerationError("need at least 2 entities")
    if spec.relations < 1:
        raise GenerationError("need at least 1 relation")
    rng = np.random.default_rng(seed)
    facts = _GENERATORS[spec.mode](spec, rng)
    return build_kg(
        facts,
        ratios=spec.ratios,
        entity_count=spec.entities,
        relation_count=spec.relations,
        add_inverse=spec.add_inverse,
    )


def load_id_names(lines: Iterable[str]) -> dict[int, str]:
    """Parse "id<TAB>name" mapping lines (used by the analysis reports)."""
    names: dict[int, str] = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.rstrip("\n")
        if not stripped.strip():
            continue
        parts = stripped.split("\t")
        if len(parts) < 2:
            raise ParseError(f"line {lineno}: expected 'id<TAB>name'")
        try:
            names[int(parts[0])] = parts[1]
        except ValueError:
            raise ParseError(f"line {lineno}: non-integer id {parts[0]!r}") from None
    return names
