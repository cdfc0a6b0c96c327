import itertools
from fractions import Fraction

import numpy as np
import pytest

from ordhash.metrics import (
    average_precision,
    build_report,
    mean_average_precision,
    pr_curve,
    precision_at,
    write_report,
)


def _ap_oracle(rel, depth=None):
    """Brute-force average precision in exact rational arithmetic."""
    total = sum(rel)
    if total == 0:
        return Fraction(0)
    if depth is None:
        depth = len(rel)
    acc = Fraction(0)
    hits = 0
    for pos in range(min(depth, len(rel))):
        if rel[pos]:
            hits += 1
            acc += Fraction(hits, pos + 1)
    return acc / total


def _pr_oracle(rel):
    total = sum(rel)
    points = []
    hits = 0
    for pos, flag in enumerate(rel, start=1):
        hits += flag
        points.append((Fraction(hits, total), Fraction(hits, pos)))
    return points


class TestAveragePrecision:
    def test_all_relevant(self):
        assert average_precision([1, 1, 1]) == 1.0

    def test_textbook_case(self):
        assert average_precision([1, 0, 1]) == pytest.approx(5.0 / 6.0, abs=1e-15)
        assert _ap_oracle([1, 0, 1]) == Fraction(5, 6)

    def test_none_relevant(self):
        assert average_precision([0, 0, 0]) == 0.0

    def test_matches_rational_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            rel = (rng.random(int(rng.integers(1, 60))) < 0.3).astype(int)
            assert abs(average_precision(rel) - float(_ap_oracle(rel.tolist()))) \
                <= 1e-12

    def test_front_loaded_is_one(self):
        assert average_precision([1, 1, 0, 0]) == 1.0

    def test_back_loaded_is_minimum_over_permutations(self):
        for length in range(2, 9):
            for n_rel in range(1, length):
                base = [0] * (length - n_rel) + [1] * n_rel
                values = {average_precision(p)
                          for p in set(itertools.permutations(base))}
                assert average_precision(base) == min(values)

    def test_depth_truncation(self):
        rel = [0, 1, 0, 1, 1]
        assert average_precision(rel, depth=2) == pytest.approx(
            float(_ap_oracle(rel, 2)), abs=1e-15)
        assert average_precision(rel, depth=5) == average_precision(rel)
        prev = 0.0
        for depth in range(1, 6):
            cur = average_precision(rel, depth=depth)
            assert cur >= prev
            prev = cur


class TestMeanAveragePrecision:
    def test_single_query(self):
        rel = [1, 0, 1, 0]
        assert mean_average_precision([rel]) == average_precision(rel)

    def test_mean(self):
        assert mean_average_precision([[1, 1], [0, 1]]) == pytest.approx(0.75)

    def test_identical_queries_collapse(self):
        rel = [1, 0, 0, 1]
        assert mean_average_precision([rel] * 5) == pytest.approx(
            average_precision(rel), abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="query"):
            mean_average_precision([])


class TestPrecisionAt:
    def test_examples(self):
        assert precision_at([1, 0, 1], 2) == 0.5
        assert precision_at([1, 0, 1], 1) == 1.0
        assert precision_at([1, 0, 1], 3) == float(2) / 3

    def test_exact_ratios(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            rel = (rng.random(int(rng.integers(1, 50))) < 0.4).astype(int)
            n = int(rng.integers(1, rel.size + 1))
            assert precision_at(rel, n) == float(Fraction(int(rel[:n].sum()), n))

    def test_non_increasing_when_front_loaded(self):
        rel = [1, 1, 1, 0, 0, 0]
        values = [precision_at(rel, n) for n in range(1, 7)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="N must lie"):
            precision_at([1, 0], 3)
        with pytest.raises(ValueError, match="N must lie"):
            precision_at([1, 0], 0)


class TestPrCurve:
    def test_single_relevant(self):
        np.testing.assert_array_equal(pr_curve([1]), [[1.0, 1.0]])

    def test_two_point_curve(self):
        np.testing.assert_array_equal(pr_curve([0, 1]), [[0.0, 0.0], [1.0, 0.5]])

    def test_matches_rational_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            rel = (rng.random(50) < 0.3).astype(int)
            if rel.sum() == 0:
                continue
            curve = pr_curve(rel)
            oracle = _pr_oracle(rel.tolist())
            assert curve.shape == (50, 2)
            for (rc, pc), (ro, po) in zip(curve, oracle):
                assert rc == float(ro)
                assert pc == float(po)

    def test_recalls_non_decreasing(self):
        rng = np.random.default_rng(3)
        rel = (rng.random(40) < 0.5).astype(int)
        curve = pr_curve(rel)
        assert np.all(np.diff(curve[:, 0]) >= 0)

    def test_no_relevant_items_signals_empty(self):
        assert pr_curve([0, 0, 0]).shape == (0, 2)


class TestReport:
    def test_aggregation(self):
        rels = [[1, 0, 1, 0], [0, 1, 0, 0]]
        report = build_report(rels, [1, 2])
        assert report.map == pytest.approx(
            (average_precision(rels[0]) + average_precision(rels[1])) / 2)
        assert report.p_at[1] == pytest.approx(0.5)
        assert report.p_at[2] == pytest.approx(
            (precision_at(rels[0], 2) + precision_at(rels[1], 2)) / 2)
        np.testing.assert_allclose(
            report.pr, (pr_curve(rels[0]) + pr_curve(rels[1])) / 2)

    def test_zero_relevant_queries_skipped_in_curve(self):
        report = build_report([[1, 0], [0, 0]], [1])
        np.testing.assert_array_equal(report.pr, pr_curve([1, 0]))
        assert report.map == pytest.approx(0.5)

    def test_mixed_lengths_rejected(self):
        with pytest.raises(ValueError, match="length"):
            build_report([[1, 0], [1, 0, 0]], [1])

    def test_csv_output(self, tmp_path):
        report = build_report([[1, 0, 1]], [1, 3])
        paths = write_report(report, tmp_path / "m")
        map_lines = paths["map"].read_text().splitlines()
        assert map_lines[0] == "map"
        assert float(map_lines[1]) == report.map
        p_lines = paths["p_at"].read_text().splitlines()
        assert p_lines[0] == "N,precision"
        assert p_lines[1].startswith("1,")
        pr_lines = paths["pr"].read_text().splitlines()
        assert pr_lines[0] == "recall,precision"
        assert len(pr_lines) == 4

    def test_csv_deterministic(self, tmp_path):
        report = build_report([[1, 0, 1, 1, 0]], [1, 2])
        a = write_report(report, tmp_path / "a")
        b = write_report(report, tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()
