"""Persistent per-entity state buffers with a fast/slow dual-track update.

The fast buffer is an exponential moving average of incoming context vectors
(working memory). The slow buffer moves toward the fast one only when the
divergence between them crosses a sigmoid energy barrier, so it consolidates
genuine shifts and filters transient noise. Both buffers live outside the
trainable parameter set: callers must hand in plain constant vectors.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .errors import CheckpointError, EntityLookupError, NumericError, ValidationError

_MAGIC = b"SKGM"
_VERSION = 1


def barrier_gate(delta: float, kappa: float, gamma: float) -> float:
    """Sigmoid consolidation gate sigma(kappa * (delta - gamma))."""
    return float(1.0 / (1.0 + np.exp(-kappa * (delta - gamma))))


class DualMemory:
    """Global fast/slow entity-state buffers, all-zero at construction."""

    def __init__(self, entity_count: int, dim: int, lam: float = 0.2,
                 kappa: float = 5.0, gamma: float = 0.5):
        if entity_count < 1 or dim < 1:
            raise ValidationError("entity_count and dim must be positive")
        if not 0.0 < lam < 1.0:
            raise ValidationError(f"lambda must lie in (0, 1), got {lam}")
        if kappa <= 0.0 or gamma < 0.0:
            raise ValidationError("kappa must be positive and gamma non-negative")
        self.entity_count = entity_count
        self.dim = dim
        self.lam = float(lam)
        self.kappa = float(kappa)
        self.gamma = float(gamma)
        self.fast = np.zeros((entity_count, dim), dtype=np.float64)
        self.slow = np.zeros((entity_count, dim), dtype=np.float64)
        self.update_count = np.zeros(entity_count, dtype=np.int64)
        # Welford accumulators for the applied slow-gate values.
        self._sg_mean = np.zeros(entity_count, dtype=np.float64)
        self._sg_m2 = np.zeros(entity_count, dtype=np.float64)
        # Welford accumulators for perceiver-gate scalars recorded per event
        # in which the entity appeared as a history object.
        self._pg_count = np.zeros(entity_count, dtype=np.int64)
        self._pg_mean = np.zeros(entity_count, dtype=np.float64)
        self._pg_m2 = np.zeros(entity_count, dtype=np.float64)

    def _check_entity(self, entity: int) -> None:
        if not 0 <= entity < self.entity_count:
            raise EntityLookupError(f"entity {entity} out of range [0, {self.entity_count})")

    def read_slow(self, entity: int) -> np.ndarray:
        self._check_entity(entity)
        return self.slow[entity].copy()

    def read_slow_many(self, entities: np.ndarray) -> np.ndarray:
        if entities.size and (entities.min() < 0 or entities.max() >= self.entity_count):
            raise EntityLookupError("entity id out of range")
        return self.slow[entities]

    def update(self, entity: int, context: np.ndarray) -> float:
        """Fold one context vector into the entity's fast/slow states.

        fast <- (1-lam) fast + lam c; the slow state then moves toward the new
        fast state by the barrier gate applied to their l2 divergence. Returns
        the applied gate. Buffers stay untouched on a non-finite context.
        """
        self._check_entity(entity)
        context = np.asarray(context, dtype=np.float64)
        if context.shape != (self.dim,):
            raise ValidationError(f"context shape {context.shape} != ({self.dim},)")
        if not np.all(np.isfinite(context)):
            raise NumericError(f"non-finite context for entity {entity}")
        fast_new = (1.0 - self.lam) * self.fast[entity] + self.lam * context
        delta = float(np.linalg.norm(fast_new - self.slow[entity]))
        gate = barrier_gate(delta, self.kappa, self.gamma)
        self.slow[entity] += gate * (fast_new - self.slow[entity])
        self.fast[entity] = fast_new
        self.update_count[entity] += 1
        n = self.update_count[entity]
        d = gate - self._sg_mean[entity]
        self._sg_mean[entity] += d / n
        self._sg_m2[entity] += d * (gate - self._sg_mean[entity])
        return gate

    def record_gate_means(self, entities: np.ndarray, gate_means: np.ndarray) -> None:
        """Accumulate per-event perceiver-gate scalars for history objects."""
        for entity, g in zip(entities, gate_means):
            e = int(entity)
            self._check_entity(e)
            self._pg_count[e] += 1
            n = self._pg_count[e]
            d = float(g) - self._pg_mean[e]
            self._pg_mean[e] += d / n
            self._pg_m2[e] += d * (float(g) - self._pg_mean[e])

    def gate_stats(self, entity: int) -> tuple[float, float]:
        """(mean, population std) of recorded perceiver-gate scalars."""
        self._check_entity(entity)
        n = int(self._pg_count[entity])
        if n == 0:
            return 0.0, 0.0
        return float(self._pg_mean[entity]), float(np.sqrt(self._pg_m2[entity] / n))

    def snapshot_slow(self) -> np.ndarray:
        return self.slow.copy()

    def displacement_report(
        self, baseline_slow: np.ndarray, top_k: int
    ) -> list[tuple[int, float, float, float]]:
        """Entities ranked by l2 slow-state displacement since ``baseline_slow``.

        Rows are (entity, displacement, gate mean, gate std); ties break by
        ascending entity id. Gate statistics are the recorded perceiver-gate
        aggregates.
        """
        baseline_slow = np.asarray(baseline_slow, dtype=np.float64)
        if baseline_slow.shape != self.slow.shape:
            raise ValidationError(
                f"baseline shape {baseline_slow.shape} != {self.slow.shape}"
            )
        if top_k < 1:
            raise ValidationError("top_k must be >= 1")
        disp = np.linalg.norm(self.slow - baseline_slow, axis=1)
        order = np.lexsort((np.arange(self.entity_count), -disp))
        rows = []
        for e in order[:top_k]:
            mean, std = self.gate_stats(int(e))
            rows.append((int(e), float(disp[e]), mean, std))
        return rows

    def clone(self) -> "DualMemory":
        other = DualMemory(self.entity_count, self.dim, self.lam, self.kappa, self.gamma)
        other.fast = self.fast.copy()
        other.slow = self.slow.copy()
        other.update_count = self.update_count.copy()
        other._sg_mean = self._sg_mean.copy()
        other._sg_m2 = self._sg_m2.copy()
        other._pg_count = self._pg_count.copy()
        other._pg_mean = self._pg_mean.copy()
        other._pg_m2 = self._pg_m2.copy()
        return other

    # -- serialization ------------------------------------------------------

    def save(self, stream) -> None:
        """Write a versioned binary checkpoint (little-endian float64 rows)."""
        stream.write(_MAGIC)
        stream.write(struct.pack("<IQQ", _VERSION, self.entity_count, self.dim))
        stream.write(struct.pack("<ddd", self.lam, self.kappa, self.gamma))
        for arr in (self.fast, self.slow):
            stream.write(arr.astype("<f8").tobytes())
        stream.write(self.update_count.astype("<i8").tobytes())
        for arr in (self._sg_mean, self._sg_m2):
            stream.write(arr.astype("<f8").tobytes())
        stream.write(self._pg_count.astype("<i8").tobytes())
        for arr in (self._pg_mean, self._pg_m2):
            stream.write(arr.astype("<f8").tobytes())

    def save_path(self, path) -> None:
        with open(path, "wb") as fh:
            self.save(fh)

    @classmethod
    def load(cls, stream) -> "DualMemory":
        def take(n: int) -> bytes:
            buf = stream.read(n)
            if len(buf) != n:
                raise CheckpointError("truncated memory checkpoint")
            return buf

        if take(4) != _MAGIC:
            raise CheckpointError("bad magic; not a memory checkpoint")
        version, ent, dim = struct.unpack("<IQQ", take(20))
        if version != _VERSION:
            raise CheckpointError(f"unsupported memory checkpoint version {version}")
        lam, kappa, gamma = struct.unpack("<ddd", take(24))
        mem = cls(int(ent), int(dim), lam, kappa, gamma)

        def read_f8(shape) -> np.ndarray:
            n = int(np.prod(shape))
            return np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).copy()

        def read_i8(shape) -> np.ndarray:
            n = int(np.prod(shape))
            return np.frombuffer(take(8 * n), dtype="<i8").reshape(shape).copy()

        mem.fast = read_f8((ent, dim))
        mem.slow = read_f8((ent, dim))
        mem.update_count = read_i8((ent,))
        mem._sg_mean = read_f8((ent,))
        mem._sg_m2 = read_f8((ent,))
        mem._pg_count = read_i8((ent,))
        mem._pg_mean = read_f8((ent,))
        mem._pg_m2 = read_f8((ent,))
        if stream.read(1):
            raise CheckpointError("trailing bytes after memory checkpoint")
        return mem

    @classmethod
    def load_path(cls, path) -> "DualMemory":
        with open(path, "rb") as fh:
            return cls.load(fh)

    def export_slow_csv(self, stream: io.TextIOBase) -> None:
        """One row per entity: id plus its slow-state vector (for projection)."""
        header = "entity," + ",".join(f"s{i}" for i in range(self.dim))
        stream.write(header + "\n")
        for e in range(self.entity_count):
            row = ",".join(f"{v:.17g}" for v in self.slow[e])
            stream.write(f"{e},{row}\n")

    def equal_state(self, other: "DualMemory") -> bool:
        return (
            self.entity_count == other.entity_count
            and self.dim == other.dim
            and np.array_equal(self.fast, other.fast)
            and np.array_equal(self.slow, other.slow)
            and np.array_equal(self.update_count, other.update_count)
            and np.array_equal(self._sg_mean, other._sg_mean)
            and np.array_equal(self._sg_m2, other._sg_m2)
            and np.array_equal(self._pg_count, other._pg_count)
            and np.array_equal(self._pg_mean, other._pg_mean)
            and np.array_equal(self._pg_m2, other._pg_m2)
        )
