import math

import numpy as np
import pytest

from radial_canon import toeplitz as tp
from radial_canon.autodiff import grad_check
from radial_canon.beams import circular_shift
from radial_canon.errors import ShapeMismatch


def distinct_rows(n, dim, rng):
    # rows spaced at least 1 apart: a scaled identity plus small noise
    return 3.0 * np.eye(n, dim) + 0.01 * rng.normal(size=(n, dim))


class TestExtractor:
    @pytest.mark.parametrize("n", [1, 3, 8, 16])
    def test_partition(self, n):
        ex = tp.build_extractor(n)
        assert np.array_equal(ex.masks.sum(axis=0), np.ones((n, n)))
        assert np.all(ex.masks.sum(axis=(1, 2)) == n)
        assert np.array_equal(ex.masks[0], np.eye(n))

    def test_angle_map(self):
        assert tp.build_extractor(4).angles.tolist() == [0.0, 90.0, 180.0, 270.0]
        assert tp.angle_matrix(3)[0, 1] == 120.0


class TestSimilarity:
    def test_identical(self, rng):
        a = rng.normal(size=(5, 4))
        assert np.allclose(np.diag(tp.similarity(a, a)), 1.0)

    def test_unit_distance(self):
        a = np.zeros((2, 3))
        b = np.array([[1.0, 0, 0], [0, 1.0, 0]])
        assert tp.similarity(a, b)[0, 0] == 0.5

    def test_range(self, rng):
        xi = tp.similarity(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
        assert xi.min() > 0 and xi.max() <= 1

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tp.similarity(np.zeros((3, 2)), np.zeros((4, 2)))


class TestLogits:
    def test_constant(self):
        assert np.allclose(tp.toeplitz_logits(np.full((5, 5), 0.3), tp.build_extractor(5)), 1.5)

    def test_identity(self):
        logits = tp.toeplitz_logits(np.eye(6), tp.build_extractor(6))
        assert logits.tolist() == [6.0, 0, 0, 0, 0, 0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tp.toeplitz_logits(np.eye(4), tp.build_extractor(5))

    def test_gradient(self, rng):
        ex = tp.build_extractor(4)
        w = rng.normal(size=4)
        report = grad_check(lambda a, b: (tp.toeplitz_logits(tp.similarity(a, b), ex) * w).sum(),
                            [rng.normal(size=(4, 3)), rng.normal(size=(4, 3))])
        assert report["max_rel_error"] <= 1e-4


class TestPrior:
    def test_uniform(self):
        assert np.allclose(tp.prior_distribution(np.zeros(7)), 1 / 7)

    @pytest.mark.parametrize("n", [2, 16, 23, 24, 64])
    def test_peaked(self, n):
        logits = np.zeros(n)
        logits[0] = 10.0
        p = tp.prior_distribution(logits)
        assert p[0] == pytest.approx(math.exp(10) / (math.exp(10) + n - 1), rel=1e-12)
        # e^10 / (e^10 + n - 1) >= 0.999 only while n - 1 <= e^10 / 999 (about 22.05)
        assert (p[0] >= 0.999) == (n <= 23)

    def test_shift_invariance(self, rng):
        x = rng.normal(size=9)
        assert np.allclose(tp.prior_distribution(x + 123.4), tp.prior_distribution(x))

    def test_sums_to_one(self, rng):
        assert tp.prior_distribution(rng.normal(size=(3, 12))).sum(axis=-1) == pytest.approx(np.ones(3))

    @pytest.mark.parametrize("n", [3, 8, 16, 32])
    def test_recovers_every_shift(self, n, rng):
        a = distinct_rows(n, n + 2, rng)
        for k in range(n):
            b = circular_shift(a, k)
            xi = tp.similarity(a, b)
            assert np.allclose(np.diag(np.roll(xi, -k, axis=1)), 1.0)
            assert int(np.argmax(tp.rotation_prior(a, b))) == k

    def test_worked_example(self, rng):
        from radial_canon.angles import theta_to_k
        a = distinct_rows(3, 4, rng)
        k = theta_to_k(120.0, 3)
        assert k == 1
        assert int(np.argmax(tp.rotation_prior(a, circular_shift(a, k)))) == 1
