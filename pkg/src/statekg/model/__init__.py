"""Trainable forecaster: embeddings, perceiver gate, structural and
calibration MLPs, pluggable sequence backbone, query attention, and scorer.

Parameters live in an ordered dict of float64 arrays; gradients use a
matching dict produced by ``new_grads``. Initialization draws from one
seeded generator in a fixed parameter order, so (config, seed) pins every
weight bit-for-bit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import CheckpointError, ValidationError
from .backbones import BACKBONE_KINDS, backbone_param_specs
from .scorers import SCORER_KINDS, check_scorer_dim, scorer_param_specs

_MAGIC = b"SKGP"
_VERSION = 1


@dataclass
class ModelConfig:
    entity_count: int
    relation_count_base: int
    dim: int = 64
    time_dim: int = 32
    backbone: str = "transformer"
    scorer: str = "distmult"
    heads: int = 1
    window: int = 32

    def __post_init__(self):
        if self.backbone not in BACKBONE_KINDS:
            raise ValidationError(
                f"unknown backbone {self.backbone!r}; expected one of {BACKBONE_KINDS}"
            )
        if self.scorer not in SCORER_KINDS:
            raise ValidationError(
                f"unknown scorer {self.scorer!r}; expected one of {SCORER_KINDS}"
            )
        check_scorer_dim(self.scorer, self.dim)
        if self.dim % self.heads != 0:
            raise ValidationError(f"heads {self.heads} must divide dim {self.dim}")
        if min(self.entity_count, self.relation_count_base, self.dim,
               self.time_dim, self.window) < 1:
            raise ValidationError("all model dimensions must be positive")


def _param_specs(cfg: ModelConfig) -> list[tuple[str, tuple, str, int]]:
    """Ordered (name, shape, init, fan_in) list; the order fixes RNG use."""
    d, dt = cfg.dim, cfg.time_dim
    specs: list[tuple[str, tuple, str, int]] = [
        ("entity_embed", (cfg.entity_count, d), "uniform", d),
        ("relation_embed", (2 * cfg.relation_count_base, d), "uniform", d),
        ("gate_w", (d, 2 * d), "uniform", 2 * d),
        ("gate_b", (d,), "zeros", 0),
        ("struct_w1", (d, 2 * d), "uniform", 2 * d),
        ("struct_b1", (d,), "zeros", 0),
        ("struct_w2", (d, d), "uniform", d),
        ("struct_b2", (d,), "zeros", 0),
        ("time_w", (dt,), "uniform", 1),
        ("time_b", (dt,), "zeros", 0),
        ("calib_w1", (d, 2 * d + dt), "uniform", 2 * d + dt),
        ("calib_b1", (d,), "zeros", 0),
        ("calib_w2", (d, d), "uniform", d),
        ("calib_b2", (d,), "zeros", 0),
    ]
    for name, shape, kind in backbone_param_specs(cfg.backbone, d, cfg.window):
        fan = shape[-1] if kind == "uniform" or kind == "fanin" else 0
        specs.append((name, shape, "uniform" if kind == "fanin" else kind, fan))
    specs += [
        ("proj_w", (d, d), "uniform", d),
        ("att_w", (d, 2 * d + dt), "uniform", 2 * d + dt),
        ("att_b", (d,), "zeros", 0),
        ("att_v", (d,), "uniform", d),
        ("query_w1", (d, 2 * d), "uniform", 2 * d),
        ("query_b1", (d,), "zeros", 0),
        ("query_w2", (d, d), "uniform", d),
        ("query_b2", (d,), "zeros", 0),
    ]
    for name, shape, kind in scorer_param_specs(cfg.scorer, d):
        fan = shape[-1] if kind == "fanin" else 0
        specs.append((name, shape, "uniform" if kind == "fanin" else kind, fan))
    return specs


class ForecastModel:
    """Parameter container plus (de)serialization; math lives in pipeline."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, _init: bool = True):
        self.cfg = cfg
        self.params: dict[str, np.ndarray] = {}
        if _init:
            rng = np.random.default_rng(seed)
            for name, shape, init, fan in _param_specs(cfg):
                if init == "zeros":
                    arr = np.zeros(shape, dtype=np.float64)
                elif init == "uniform":
                    bound = 1.0 / np.sqrt(max(fan, 1))
                    arr = rng.uniform(-bound, bound, size=shape)
                elif init == "ssm_a":
                    # raw value whose -softplus lands in [-1.0, -0.1]
                    y = rng.uniform(0.1, 1.0, size=shape)
                    arr = np.log(np.expm1(y))
                else:
                    raise ValidationError(f"unknown init kind {init!r}")
                self.params[name] = np.ascontiguousarray(arr, dtype=np.float64)

    def new_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.params.values())

    def param_checksum(self) -> str:
        digest = hashlib.sha256()
        for name, arr in self.params.items():
            digest.update(name.encode())
            digest.update(arr.tobytes())
        return digest.hexdigest()

    def clone(self) -> "ForecastModel":
        other = ForecastModel(self.cfg, _init=False)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    # -- checkpoint ----------------------------------------------------------

    def save(self, stream) -> None:
        cfg = self.cfg
        stream.write(_MAGIC)
        stream.write(struct.pack("<I", _VERSION))
        stream.write(
            struct.pack(
                "<QQQQQQ",
                cfg.dim, cfg.time_dim, cfg.entity_count,
                cfg.relation_count_base, cfg.heads, cfg.window,
            )
        )
        for label in (cfg.backbone, cfg.scorer):
            raw = label.encode()
            stream.write(struct.pack("<I", len(raw)))
            stream.write(raw)
        stream.write(struct.pack("<Q", len(self.params)))
        for name, arr in self.params.items():
            raw = name.encode()
            stream.write(struct.pack("<I", len(raw)))
            stream.write(raw)
            stream.write(struct.pack("<I", arr.ndim))
            stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            stream.write(arr.astype("<f8").tobytes())

    def save_path(self, path) -> None:
        with open(path, "wb") as fh:
            self.save(fh)

    @classmethod
    def load(cls, stream) -> "ForecastModel":
        def take(n: int) -> bytes:
            buf = stream.read(n)
            if len(buf) != n:
                raise CheckpointError("truncated model checkpoint")
            return buf

        if take(4) != _MAGIC:
            raise CheckpointError("bad magic; not a model checkpoint")
        (version,) = struct.unpack("<I", take(4))
        if version != _VERSION:
            raise CheckpointError(f"unsupported model checkpoint version {version}")
        dim, time_dim, ents, rels, heads, window = struct.unpack("<QQQQQQ", take(48))
        labels = []
        for _ in range(2):
            (n,) = struct.unpack("<I", take(4))
            labels.append(take(n).decode())
        cfg = ModelConfig(
            entity_count=int(ents), relation_count_base=int(rels), dim=int(dim),
            time_dim=int(time_dim), backbone=labels[0], scorer=labels[1],
            heads=int(heads), window=int(window),
        )
        model = cls(cfg, _init=False)
        (count,) = struct.unpack("<Q", take(8))
        expected = _param_specs(cfg)
        if count != len(expected):
            raise CheckpointError(
                f"checkpoint has {count} tensors, model expects {len(expected)}"
            )
        for name, shape, _init_kind, _fan in expected:
            (n,) = struct.unpack("<I", take(4))
            found = take(n).decode()
            if found != name:
                raise CheckpointError(f"tensor order mismatch: {found!r} != {name!r}")
            (ndim,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{ndim}Q", take(8 * ndim))
            if tuple(dims) != shape:
                raise CheckpointError(f"tensor {name}: shape {dims} != {shape}")
            size = int(np.prod(shape))
            model.params[name] = (
                np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).copy()
            )
        if stream.read(1):
            raise CheckpointError("trailing bytes after model checkpoint")
        return model

    @classmethod
    def load_path(cls, path) -> "ForecastModel":
        with open(path, "rb") as fh:
            return cls.load(fh)


from .pipeline import (  # noqa: E402  (re-export the functional API)
    QueryContext,
    build_context,
    context_backward,
    forward_scores,
    query_loss,
    query_loss_and_grads,
)

__all__ = [
    "ModelConfig",
    "ForecastModel",
    "QueryContext",
    "build_context",
    "context_backward",
    "forward_scores",
    "query_loss",
    "query_loss_and_grads",
    "BACKBONE_KINDS",
    "SCORER_KINDS",
]
