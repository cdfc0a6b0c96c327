"""Ranking-based K-ary hashing with spatial attention.

A library and CLI for learnable winner-take-all hash functions over ingested
spatial/global feature pairs: attention-weighted local awareness fused with
global awareness, trained with a pairwise agreement loss under exact analytic
gradients, plus K-ary code generation, exact nearest-neighbor search, and
retrieval evaluation.
"""

__version__ = "0.1.0"

from .attention import AttentionModel, attention_map, global_average_pool, train_classifier
from .dataio import DatasetManifest, FeatureRecord, load_dataset, sample_pairs, save_dataset, synth_generate
from .hashhead import HashHeadParams, encode, init_params, ordinal_representation
from .index import CodeDatabase, bit_budget, distance, search
from .lossgrad import analytic_gradients, finite_difference_oracle, pair_agreement, sequence_agreement
from .metrics import MetricsReport, average_precision, mean_average_precision, pr_curve, precision_at
from .trainer import TrainConfig, train

__all__ = [
    "AttentionModel",
    "CodeDatabase",
    "DatasetManifest",
    "FeatureRecord",
    "HashHeadParams",
    "MetricsReport",
    "TrainConfig",
    "analytic_gradients",
    "attention_map",
    "average_precision",
    "bit_budget",
    "distance",
    "encode",
    "finite_difference_oracle",
    "global_average_pool",
    "init_params",
    "load_dataset",
    "mean_average_precision",
    "ordinal_representation",
    "pair_agreement",
    "pr_curve",
    "precision_at",
    "sample_pairs",
    "save_dataset",
    "search",
    "sequence_agreement",
    "synth_generate",
    "train",
    "train_classifier",
]
