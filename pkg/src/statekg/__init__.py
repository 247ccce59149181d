"""Stateful temporal knowledge graph forecasting toolkit.

Facts are (subject, relation, object, time) quadruples; each entity carries
a persistent fast/slow state pair that evolves closed-loop with the query
context, on top of pluggable sequence backbones and scoring functions, under
a rolling time-consistent filtered evaluation protocol.
"""

from .data import (
    HistoryWindow,
    Quadruple,
    SyntheticSpec,
    TemporalKG,
    add_inverse_relations,
    build_kg,
    chronological_split,
    generate_synthetic,
    parse_quadruples,
)
from .memory import DualMemory
from .model import BACKBONE_KINDS, SCORER_KINDS, ForecastModel, ModelConfig, forward_scores
from .training import NegativeSet, TrainConfig, sample_negatives, train
from .evaluation import RankingReport, RollingFilter, evaluate, filtered_rank

__version__ = "0.1.0"

__all__ = [
    "Quadruple",
    "HistoryWindow",
    "TemporalKG",
    "SyntheticSpec",
    "parse_quadruples",
    "add_inverse_relations",
    "chronological_split",
    "build_kg",
    "generate_synthetic",
    "DualMemory",
    "ModelConfig",
    "ForecastModel",
    "forward_scores",
    "BACKBONE_KINDS",
    "SCORER_KINDS",
    "TrainConfig",
    "NegativeSet",
    "sample_negatives",
    "train",
    "RankingReport",
    "RollingFilter",
    "evaluate",
    "filtered_rank",
    "__version__",
]
