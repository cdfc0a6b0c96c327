"""Ranked-retrieval quality metrics: average precision, P@N, PR curves.

All functions consume relevance vectors: sequences of {0, 1} flags, one per
ranked database item for a query, in rank order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _as_relevance(rel) -> np.ndarray:
    rel = np.asarray(rel, dtype=np.int64)
    if rel.ndim != 1 or rel.size == 0:
        raise ValueError("relevance vector must be a non-empty 1-D sequence")
    if not np.all((rel == 0) | (rel == 1)):
        raise ValueError("relevance flags must be 0 or 1")
    return rel


def average_precision(rel, depth: int | None = None) -> float:
    """Mean of precision@p over the relevant positions p, divided by the
    total relevant count in the full ranking; 0 when nothing is relevant.

    ``depth`` truncates the numerator to the first ``depth`` positions while
    keeping the full-ranking denominator, so it is non-decreasing in depth
    and equals the full AP at depth >= len(rel).
    """
    rel = _as_relevance(rel)
    total = int(rel.sum())
    if total == 0:
        return 0.0
    if depth is None:
        depth = rel.size
    if depth < 1:
        raise ValueError("depth must be positive")
    hits = 0
    terms = []
    for pos in range(min(depth, rel.size)):
        if rel[pos]:
            hits += 1
            terms.append(hits / (pos + 1))
    return math.fsum(terms) / total


def mean_average_precision(rels, depth: int | None = None) -> float:
    rels = list(rels)
    if not rels:
        raise ValueError("need at least one query")
    return math.fsum(average_precision(r, depth) for r in rels) / len(rels)


def precision_at(rel, n: int) -> float:
    """Fraction of the first n ranked items that are relevant."""
    rel = _as_relevance(rel)
    if not 1 <= n <= rel.size:
        raise ValueError(f"N must lie in [1, {rel.size}], got {n}")
    return float(int(rel[:n].sum()) / n)


def pr_curve(rel) -> np.ndarray:
    """One (recall, precision) point per rank position, as an (L, 2) array.

    A query with no relevant items has no defined recall; the empty (0, 2)
    array is the signal for that.
    """
    rel = _as_relevance(rel)
    total = int(rel.sum())
    if total == 0:
        return np.empty((0, 2))
    cum = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return np.stack([cum / total, cum / ranks], axis=1)


@dataclass
class MetricsReport:
    """Aggregate metrics over a query set."""

    map: float
    p_at: dict[int, float]
    pr: np.ndarray  # (L, 2) position-wise mean (recall, precision)
    n_queries: int


def build_report(rels, p_at_values, depth: int | None = None) -> MetricsReport:
    """Aggregate per-query metrics: mean AP, mean P@N, and the position-wise
    mean PR curve over queries that have at least one relevant item."""
    rels = [_as_relevance(r) for r in rels]
    if not rels:
        raise ValueError("need at least one query")
    lengths = {r.size for r in rels}
    if len(lengths) != 1:
        raise ValueError(f"all rankings must share one length, got {sorted(lengths)}")
    p_at = {n: math.fsum(precision_at(r, n) for r in rels) / len(rels)
            for n in sorted(p_at_values)}
    curves = [pr_curve(r) for r in rels]
    curves = [c for c in curves if len(c)]
    pr = np.mean(curves, axis=0) if curves else np.empty((0, 2))
    return MetricsReport(map=mean_average_precision(rels, depth), p_at=p_at,
                         pr=pr, n_queries=len(rels))


def write_report(report: MetricsReport, out_dir) -> dict[str, Path]:
    """Serialize the report as map.csv, p_at.csv, pr.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "map": out / "map.csv",
        "p_at": out / "p_at.csv",
        "pr": out / "pr.csv",
    }
    paths["map"].write_text(f"map\n{report.map!r}\n")
    p_lines = ["N,precision"] + [f"{n},{v!r}" for n, v in report.p_at.items()]
    paths["p_at"].write_text("\n".join(p_lines) + "\n")
    pr_lines = ["recall,precision"] + [f"{rc!r},{pc!r}" for rc, pc in report.pr]
    paths["pr"].write_text("\n".join(pr_lines) + "\n")
    return paths
