from decimal import Decimal, getcontext

import numpy as np
import pytest

from ordhash.numerics import argmax_first, hadamard, matvec, softmax_stable


class TestMatvec:
    def test_identity(self):
        np.testing.assert_array_equal(matvec(np.eye(2), [3.0, 5.0]), [3.0, 5.0])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(matvec(np.zeros((3, 4)), [1.0, 2.0, 3.0]),
                                      np.zeros(4))

    def test_hand_sum(self):
        out = matvec([[1.0, 2.0], [3.0, 4.0]], [1.0, 1.0])
        np.testing.assert_array_equal(out, [4.0, 6.0])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matvec(np.ones((3, 2)), np.ones(2))


class TestSoftmax:
    def test_constant_input_is_uniform(self):
        for c in (-7.0, 0.0, 3.5):
            np.testing.assert_allclose(softmax_stable([c] * 4), [0.25] * 4,
                                       rtol=0, atol=1e-15)

    def test_log_ratio(self):
        np.testing.assert_allclose(softmax_stable([0.0, np.log(3.0)]),
                                   [0.25, 0.75], rtol=0, atol=1e-15)

    def test_large_input_matches_arbitrary_precision(self):
        # high-precision decimal evaluation of exp(a_k)/sum exp(a_j)
        getcontext().prec = 60
        e_hi = Decimal(1000).exp()
        e_lo = Decimal(0).exp()
        expect = [float(e_hi / (e_hi + e_lo)), float(e_lo / (e_hi + e_lo))]
        out = softmax_stable([1000.0, 0.0])
        assert np.all(np.isfinite(out))
        np.testing.assert_array_equal(out, expect)

    def test_nan_rejected(self):
        with pytest.raises(ValueError, match="NaN"):
            softmax_stable([0.0, np.nan])

    def test_sums_to_one(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            out = softmax_stable(rng.normal(scale=10.0, size=rng.integers(1, 9)))
            assert abs(out.sum() - 1.0) <= 1e-12
            assert np.all(out > 0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            a = rng.normal(size=6)
            shifted = softmax_stable(a + rng.normal())
            np.testing.assert_allclose(shifted, softmax_stable(a),
                                       rtol=0, atol=1e-12)

    def test_preserves_argmax(self):
        rng = np.random.default_rng(13)
        for _ in range(1000):
            a = rng.normal(scale=5.0, size=rng.integers(2, 10))
            assert argmax_first(softmax_stable(a)) == argmax_first(a)

    def test_last_axis_batches(self):
        rng = np.random.default_rng(14)
        batch = rng.normal(size=(5, 7))
        out = softmax_stable(batch)
        for row_in, row_out in zip(batch, out):
            np.testing.assert_array_equal(softmax_stable(row_in), row_out)


class TestHadamard:
    def test_product(self):
        np.testing.assert_array_equal(hadamard([0.5, 1.0], [2.0, 3.0]), [1.0, 3.0])

    def test_zero_annihilates(self):
        np.testing.assert_array_equal(hadamard(np.zeros(3), [1.0, -2.0, 9.0]),
                                      np.zeros(3))

    def test_ones_identity(self):
        b = np.array([3.0, -1.5, 0.25])
        np.testing.assert_array_equal(hadamard(np.ones(3), b), b)

    def test_commutative_and_associative(self):
        rng = np.random.default_rng(15)
        a, b, c = rng.normal(size=(3, 8))
        np.testing.assert_array_equal(hadamard(a, b), hadamard(b, a))
        np.testing.assert_allclose(hadamard(hadamard(a, b), c),
                                   hadamard(a, hadamard(b, c)), rtol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            hadamard(np.ones(2), np.ones(3))


class TestArgmaxFirst:
    def test_plain(self):
        assert argmax_first([0.1, 0.9, 0.3]) == 1

    def test_tie_takes_lowest_index(self):
        assert argmax_first([0.5, 0.5]) == 0
        assert argmax_first([1.0, 2.0, 2.0, 2.0]) == 1

    def test_negative_values(self):
        assert argmax_first([-1.0, -2.0, -0.5]) == 2

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            argmax_first([])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            argmax_first([0.0, np.inf])
