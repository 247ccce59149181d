"""Flat key-value run configuration: schema, defaults, loading, resolution.

Configs are YAML mappings with scalar values only. Unknown keys fail fast;
missing keys take the documented defaults; the fully resolved mapping is
written verbatim into the output directory of every run.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
import yaml

from .data import SyntheticSpec, TemporalKG, build_kg, generate_synthetic, parse_quadruples
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

# name -> (default, type). A None default means an optional string (path).
SCHEMA: dict[str, tuple[object, type]] = {
    # data source
    "mode": ("synthetic", str),  # synthetic | tsv
    "data_file": (None, str),
    "train_file": (None, str),
    "valid_file": (None, str),
    "test_file": (None, str),
    "prepared_dataset": (None, str),
    "entity_count": (0, int),  # 0 = infer from data
    "relation_count": (0, int),
    "time_step": (1, int),
    "add_inverse": (True, bool),
    "split_ratios": ("0.8,0.1,0.1", str),
    "entity_names_file": (None, str),
    "relation_names_file": (None, str),
    # synthetic generator
    "synthetic_mode": ("periodic", str),
    "synthetic_entities": (16, int),
    "synthetic_relations": (8, int),
    "synthetic_timestamps": (48, int),
    "synthetic_max_period": (3, int),
    "synthetic_window": (8, int),
    "synthetic_distractors": (10, int),
    "synthetic_partner_slots": (5, int),
    "synthetic_segments": (6, int),
    "synthetic_facts": (1000, int),
    "synthetic_seed": (0, int),
    # model
    "dim": (64, int),
    "time_dim": (32, int),
    "backbone": ("transformer", str),
    "scorer": ("distmult", str),
    "heads": (1, int),
    # training
    "epochs": (20, int),
    "batch_size": (128, int),
    "lr": (5e-3, float),
    "weight_decay": (1e-4, float),
    "warmup_epochs": (2, int),
    "min_lr_factor": (0.1, float),
    "neg_count": (64, int),
    "lambda": (0.2, float),
    "kappa": (5.0, float),
    "gamma": (0.5, float),
    "history_len": (32, int),
    "grad_clip": (5.0, float),
    "ablation": ("", str),
    "seed": (0, int),
    "checkpoint_every": (0, int),
    # evaluation
    "filter": ("rolling", str),
    "dump_ranks": (False, bool),
    "truncate_fractions": ("50,60,70,80,90", str),
    "analyze_top_k": (5, int),
    # output
    "out_dir": ("run_out", str),
}


def _coerce(key: str, value, default, typ: type):
    if value is None:
        return None if default is None else default
    if default is None or typ is str:
        if not isinstance(value, (str, int, float, bool)):
            raise ConfigError(f"config key {key!r}: expected a scalar, got {type(value)}")
        return str(value)
    if typ is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ConfigError(f"config key {key!r}: expected a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}")
        try:
            iv = int(value)
        except ValueError:
            raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}") from None
        if isinstance(value, float) and iv != value:
            raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}")
        return iv
    if typ is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r}: expected a number, got {value!r}") from None
    raise ConfigError(f"config key {key!r}: unsupported schema type {typ}")


def default_config() -> dict:
    return {k: d for k, (d, _t) in SCHEMA.items()}


def load_config(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a flat key-value mapping")
    cfg = default_config()
    for key, value in raw.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        default, typ = SCHEMA[key]
        cfg[key] = _coerce(key, value, default, typ)
    return cfg


def apply_overrides(cfg: dict, **overrides) -> dict:
    out = dict(cfg)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        default, typ = SCHEMA[key]
        out[key] = _coerce(key, value, default, typ)
    return out


def resolved_text(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(resolved_text(cfg).encode()).hexdigest()[:12]


def run_id(cfg: dict) -> str:
    return hashlib.sha256((config_hash(cfg) + f":{cfg['seed']}").encode()).hexdigest()[:12]


def parse_ratios(text: str) -> tuple[float, float, float]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"split_ratios must have 3 comma-separated values, got {text!r}")
    try:
        vals = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"split_ratios must be numeric, got {text!r}") from None
    return vals  # type: ignore[return-value]


def parse_ablation(text: str) -> frozenset[str]:
    flags = [p.strip().lower() for p in str(text).split(",") if p.strip()]
    return frozenset(flags)


def parse_fractions(text: str) -> list[int]:
    try:
        return [int(p.strip()) for p in str(text).split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"truncate_fractions must be integers, got {text!r}") from None


def synthetic_spec(cfg: dict) -> SyntheticSpec:
    return SyntheticSpec(
        mode=cfg["synthetic_mode"],
        entities=cfg["synthetic_entities"],
        relations=cfg["synthetic_relations"],
        timestamps=cfg["synthetic_timestamps"],
        max_period=cfg["synthetic_max_period"],
        window=cfg["synthetic_window"],
        distractors=cfg["synthetic_distractors"],
        partner_slots=cfg["synthetic_partner_slots"],
        segments=cfg["synthetic_segments"],
        fact_count=cfg["synthetic_facts"],
        ratios=parse_ratios(cfg["split_ratios"]),
        add_inverse=cfg["add_inverse"],
    )


def save_dataset_npz(kg: TemporalKG, path: str | Path) -> None:
    np.savez(
        path,
        facts=kg.facts,
        meta=np.array(
            [kg.entity_count, kg.relation_count_base, int(kg.add_inverse)], dtype=np.int64
        ),
        ranges=np.array(
            [*kg.train_range, *kg.valid_range, *kg.test_range], dtype=np.int64
        ),
    )


def load_dataset_npz(path: str | Path) -> TemporalKG:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"prepared dataset not found: {path}")
    with np.load(path) as blob:
        facts = blob["facts"]
        ent, rel, inv = (int(v) for v in blob["meta"])
        r = [int(v) for v in blob["ranges"]]
    from .data import _build_history_index

    h_obj, h_rel, h_time, h_off = _build_history_index(facts, ent)
    return TemporalKG(
        entity_count=ent,
        relation_count_base=rel,
        add_inverse=bool(inv),
        facts=facts,
        train_range=(r[0], r[1]),
        valid_range=(r[2], r[3]),
        test_range=(r[4], r[5]),
        hist_objects=h_obj,
        hist_relations=h_rel,
        hist_times=h_time,
        hist_offsets=h_off,
    )


def _read_fact_file(path_text: str, time_step: int) -> list:
    path = Path(path_text)
    if not path.exists():
        raise ConfigError(f"fact file not found: {path}")
    with open(path) as fh:
        return parse_quadruples(fh, time_step)


def build_dataset(cfg: dict) -> TemporalKG:
    """Construct the TemporalKG this config describes."""
    if cfg["prepared_dataset"]:
        return load_dataset_npz(cfg["prepared_dataset"])
    if cfg["mode"] == "synthetic":
        return generate_synthetic(synthetic_spec(cfg), cfg["synthetic_seed"])
    if cfg["mode"] != "tsv":
        raise ConfigError(f"unknown dataset mode {cfg['mode']!r}; use 'synthetic' or 'tsv'")
    ent = cfg["entity_count"] or None
    rel = cfg["relation_count"] or None
    if cfg["train_file"] or cfg["valid_file"] or cfg["test_file"]:
        if not (cfg["train_file"] and cfg["valid_file"] and cfg["test_file"]):
            raise ConfigError("pre-split input needs train_file, valid_file, and test_file")
        blocks = [
            _read_fact_file(cfg[k], cfg["time_step"])
            for k in ("train_file", "valid_file", "test_file")
        ]
        facts = blocks[0] + blocks[1] + blocks[2]
        return build_kg(
            facts,
            entity_count=ent,
            relation_count=rel,
            add_inverse=cfg["add_inverse"],
            presplit_sizes=(len(blocks[0]), len(blocks[1]), len(blocks[2])),
        )
    if not cfg["data_file"]:
        raise ConfigError("tsv mode needs data_file or train/valid/test_file")
    facts = _read_fact_file(cfg["data_file"], cfg["time_step"])
    return build_kg(
        facts,
        ratios=parse_ratios(cfg["split_ratios"]),
        entity_count=ent,
        relation_count=rel,
        add_inverse=cfg["add_inverse"],
    )


def model_config(cfg: dict, kg: TemporalKG) -> ModelConfig:
    return ModelConfig(
        entity_count=kg.entity_count,
        relation_count_base=kg.relation_count_base,
        dim=cfg["dim"],
        time_dim=cfg["time_dim"],
        backbone=cfg["backbone"],
        scorer=cfg["scorer"],
        heads=cfg["heads"],
        window=cfg["history_len"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        warmup_epochs=cfg["warmup_epochs"],
        min_lr_factor=cfg["min_lr_factor"],
        neg_count=cfg["neg_count"],
        lam=cfg["lambda"],
        kappa=cfg["kappa"],
        gamma=cfg["gamma"],
        window=cfg["history_len"],
        grad_clip=cfg["grad_clip"],
        ablation=parse_ablation(cfg["ablation"]),
        seed=cfg["seed"],
    )


def dataset_summary(kg: TemporalKG) -> dict:
    return {
        "entities": kg.entity_count,
        "relations": kg.relation_count_base,
        "train": kg.raw_split_size("train"),
        "valid": kg.raw_split_size("valid"),
        "test": kg.raw_split_size("test"),
        "snapshots": kg.snapshot_count,
    }
