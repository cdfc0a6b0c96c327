"""Spatial attention: a linear classifier on globally average-pooled feature
maps, per-category local response maps, and the attention map that weights
spatial locations by their relevance to the predicted categories.

The classifier is trained once on frozen features and then held fixed; all
downstream hash-head training treats the attention map of a record as a
constant input.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .dataio import FeatureRecord
from .numerics import as_f64, matvec, require_finite, softmax_stable

ATTENTION_MAGIC = b"DOHA"
ATTENTION_VERSION = 0x01


class TrainingDataError(Exception):
    """The records cannot support classifier training."""


@dataclass
class AttentionModel:
    """Linear classification head: weights (M, C) and bias (C,)."""

    weights: np.ndarray
    bias: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def n_categories(self) -> int:
        return self.weights.shape[1]


def global_average_pool(fmap) -> np.ndarray:
    """Spatial mean of each channel: (M, Y, X) -> (M,)."""
    fmap = as_f64(fmap)
    if fmap.ndim != 3:
        raise ValueError(f"expected a 3-D feature map, got ndim={fmap.ndim}")
    return fmap.mean(axis=(1, 2))


def class_response_map(model: AttentionModel, fmap, c: int) -> np.ndarray:
    """Rectified per-location response of category c: max(w_c . z_yx, 0)."""
    fmap = as_f64(fmap)
    if not 0 <= c < model.n_categories:
        raise ValueError(f"category {c} out of range [0, {model.n_categories})")
    raw = np.tensordot(model.weights[:, c], fmap, axes=(0, 0))
    return np.maximum(raw, 0.0)


def class_probabilities(model: AttentionModel, fmap) -> np.ndarray:
    """softmax(W^T pooled + b); strictly positive, sums to 1."""
    pooled = global_average_pool(fmap)
    return softmax_stable(matvec(model.weights, pooled) + model.bias)


def attention_map(model: AttentionModel, fmap) -> np.ndarray:
    """Probability-weighted mix of the rectified response maps, (Y, X).

    The denominator is the probability total, which is 1 for softmax outputs;
    the division is kept so the formula also holds for unnormalized weights.
    """
    fmap = as_f64(fmap)
    probs = class_probabilities(model, fmap)
    raw = np.tensordot(model.weights, fmap, axes=(0, 0))  # (C, Y, X)
    maps = np.maximum(raw, 0.0)
    return np.tensordot(probs, maps, axes=(0, 0)) / probs.sum()


def _pooled_targets(records: list[FeatureRecord], n_categories: int):
    pooled = np.stack([global_average_pool(r.fmap) for r in records])
    targets = np.zeros((len(records), n_categories))
    for row, rec in enumerate(records):
        labs = sorted(rec.labels)
        targets[row, labs] = 1.0 / len(labs)
    return pooled, targets


def train_classifier(records: list[FeatureRecord], n_categories: int, *,
                     epochs: int, lr: float, seed: int,
                     batch_size: int = 32) -> AttentionModel:
    """Fit multinomial logistic regression on pooled features by mini-batch
    gradient descent.

    Multi-label records use the uniform distribution over their labels as
    the target. Weights start at zero, so zero epochs returns the zero
    model; the seed drives only the shuffle order.
    """
    if epochs < 0 or lr <= 0 or batch_size < 1:
        raise ValueError("epochs must be >= 0, lr > 0, batch_size >= 1")
    if not records:
        raise TrainingDataError("no records to train on")
    present = set()
    for rec in records:
        present |= rec.labels
    if len(present) < 2:
        raise TrainingDataError(
            f"training needs at least 2 categories, found {len(present)}"
        )

    pooled, targets = _pooled_targets(records, n_categories)
    n, m = pooled.shape
    weights = np.zeros((m, n_categories))
    bias = np.zeros(n_categories)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            sel = order[start : start + batch_size]
            logits = pooled[sel] @ weights + bias
            probs = softmax_stable(logits)
            delta = (probs - targets[sel]) / len(sel)
            weights -= lr * (pooled[sel].T @ delta)
            bias -= lr * delta.sum(axis=0)
    require_finite(weights, "classifier weights")
    require_finite(bias, "classifier bias")
    return AttentionModel(weights=weights, bias=bias)


def classifier_loss(model: AttentionModel, records: list[FeatureRecord]) -> float:
    """Mean cross-entropy between predicted probabilities and label targets."""
    pooled, targets = _pooled_targets(records, model.n_categories)
    probs = softmax_stable(pooled @ model.weights + model.bias)
    return float(-(targets * np.log(probs)).sum(axis=1).mean())


def classifier_accuracy(model: AttentionModel, records: list[FeatureRecord]) -> float:
    """Fraction of records whose top predicted category is among their labels."""
    pooled, _ = _pooled_targets(records, model.n_categories)
    top = np.argmax(pooled @ model.weights + model.bias, axis=1)
    hits = [int(top[i]) in rec.labels for i, rec in enumerate(records)]
    return float(np.mean(hits))


def save_attention(model: AttentionModel, path):
    w = binio.ByteWriter()
    w.raw(ATTENTION_MAGIC)
    w.u8(ATTENTION_VERSION)
    w.u32(model.n_channels)
    w.u32(model.n_categories)
    w.raw(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
    w.raw(np.ascontiguousarray(model.bias, dtype="<f8").tobytes())
    Path(path).write_bytes(w.getvalue())


def load_attention(path) -> AttentionModel:
    r = binio.ByteReader(Path(path).read_bytes(), context=str(path))
    r.expect_magic(ATTENTION_MAGIC)
    r.expect_version(ATTENTION_VERSION)
    m = r.u32("channel count")
    c = r.u32("category count")
    weights = np.frombuffer(r.take(8 * m * c, "weights"), dtype="<f8").reshape(m, c)
    bias = np.frombuffer(r.take(8 * c, "bias"), dtype="<f8")
    r.expect_end()
    model = AttentionModel(weights=as_f64(weights), bias=as_f64(bias))
    require_finite(model.weights, "classifier weights")
    require_finite(model.bias, "classifier bias")
    return model


def dump_attention_maps(model: AttentionModel, records: list[FeatureRecord],
                        out_dir):
    """Write each record's attention map as a CSV grid under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        grid = attention_map(model, rec.fmap)
        lines = [",".join(str(v) for v in row) for row in grid]
        (out / f"{rec.id}.csv").write_text("\n".join(lines) + "\n")
