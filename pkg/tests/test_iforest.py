import math

import numpy as np
import pytest

from artifact import iforest
from artifact.errors import DimensionMismatchError, TooFewPointsError
from artifact.iforest import EULER_GAMMA, IsolationForest, anomaly_score, c_factor


def c_by_hand(n):
    h = math.log(n - 1) + 0.5772156649
    return 2 * h - 2 * (n - 1) / n


def cluster_with_outlier(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((99, 2))
    # 10 sigma from the centre, off both axes so either feature can isolate it
    return np.vstack([X, np.full(2, 10.0 / math.sqrt(2))])


class TestPathNormalizer:
    def test_c2(self):
        np.testing.assert_allclose(c_factor(2), 2 * EULER_GAMMA - 1, rtol=1e-15)
        np.testing.assert_allclose(c_factor(2), 0.15443, atol=5e-6)

    @pytest.mark.parametrize("n", [2, 10, 256])
    def test_formula(self, n):
        np.testing.assert_allclose(c_factor(n), c_by_hand(n), rtol=1e-15)

    def test_c10_value(self):
        # 2 (ln 9 + gamma) - 1.8
        np.testing.assert_allclose(c_factor(10), 3.7488806, atol=1e-6)

    def test_single_point(self):
        assert c_factor(1) == 0.0 and c_factor(0) == 0.0

    def test_fixed_point_score(self):
        f = iforest.fit(np.random.default_rng(0).standard_normal((300, 2)), n_trees=5, sample_size=64)
        assert 2.0 ** (-c_factor(64) / c_factor(f.sample_size)) == 0.5


class TestFit:
    def test_two_points_single_split(self):
        f = iforest.fit(np.array([[0.0], [1.0]]), n_trees=20, seed=1)
        for t in f.trees:
            assert t.n_nodes == 3 and t.feature[0] == 0
            np.testing.assert_array_equal(t.size[1:], [1, 1])
            assert 0.0 < t.threshold[0] < 1.0

    def test_identical_points(self):
        f = iforest.fit(np.ones((50, 3)), n_trees=10)
        assert all(t.n_nodes == 1 for t in f.trees)
        s = f.score(np.ones((4, 3)))
        assert np.all(s == s[0])

    def test_split_strictly_inside_node_range(self):
        X = np.random.default_rng(2).standard_normal((200, 3))
        f = iforest.fit(X, n_trees=10, sample_size=64, seed=3)
        for t in f.trees:
            # route the full data and check each internal node sees both sides
            node = t.apply(X)
            assert np.all(t.feature[node] == -1)
            internal = np.flatnonzero(t.feature >= 0)
            assert np.all(t.size[t.left[internal]] >= 1) and np.all(t.size[t.right[internal]] >= 1)

    def test_height_limit(self):
        f = iforest.fit(np.random.default_rng(0).standard_normal((300, 2)), n_trees=5, sample_size=64)
        assert all(t.height_limit == 6 and t.depth.max() <= 6 for t in f.trees)

    def test_too_few(self):
        with pytest.raises(TooFewPointsError):
            iforest.fit(np.zeros((1, 2)))

    def test_seed_determinism(self):
        X = np.random.default_rng(4).standard_normal((100, 2))
        a, b = iforest.fit(X, 10, 32, seed=7), iforest.fit(X, 10, 32, seed=7)
        np.testing.assert_array_equal(a.score(X), b.score(X))

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            iforest.fit(np.zeros((5, 1)), threshold=1.0)


class TestScore:
    @pytest.mark.parametrize("seed", range(10))
    def test_outlier_has_top_score(self, seed):
        X = cluster_with_outlier(seed)
        s = iforest.fit(X, n_trees=100, sample_size=64, seed=seed).score(X)
        assert np.argmax(s) == 99 and s[99] > 0.6

    def test_scores_inside_unit_interval(self):
        X = np.random.default_rng(0).standard_normal((500, 3))
        s = iforest.fit(X, seed=1).score(np.vstack([X, X * 100]))
        assert np.all((s > 0) & (s < 1))

    def test_thresholds_zero_and_one(self):
        X = cluster_with_outlier(0)
        f = iforest.fit(X, n_trees=20, sample_size=64)
        np.testing.assert_array_equal(iforest.detect(f, X, threshold=0.0), 1)
        np.testing.assert_array_equal(iforest.detect(f, X, threshold=1.0), 0)

    def test_detect_accepts_latent_sequence(self):
        class Latent:
            values = cluster_with_outlier(1)
        f = iforest.fit(Latent.values, n_trees=50, sample_size=64)
        assert iforest.detect(f, Latent)[99] == 1

    def test_duplication_stability(self):
        X = np.random.default_rng(5).standard_normal((400, 2))
        probe = np.random.default_rng(6).standard_normal((200, 2)) * 1.5
        a = iforest.fit(X, sample_size=64, seed=1).score(probe)
        b = iforest.fit(np.vstack([X, X]), sample_size=64, seed=1).score(probe)
        assert np.mean(np.abs(a - b)) < 0.05

    def test_far_point_score_not_lowered_by_including_it(self):
        for seed in range(5):
            X = np.random.default_rng(seed).standard_normal((200, 2))
            far = np.array([[8.0, 8.0]])
            without = iforest.fit(X, sample_size=64, seed=seed).score(far)[0]
            with_it = iforest.fit(np.vstack([X, far]), sample_size=64, seed=seed).score(far)[0]
            assert with_it >= without - 0.02

    def test_single_vector_score(self):
        f = iforest.fit(cluster_with_outlier(0), n_trees=10, sample_size=64)
        assert isinstance(anomaly_score(f, np.array([0.0, 0.0])), float)

    def test_dimension_mismatch(self):
        f = iforest.fit(np.random.default_rng(0).standard_normal((20, 2)), n_trees=3)
        with pytest.raises(DimensionMismatchError):
            f.score(np.zeros((2, 3)))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        X = cluster_with_outlier(2)
        f = iforest.fit(X, n_trees=15, sample_size=64, seed=3, threshold=0.55)
        f.save(tmp_path / "f.json")
        g = IsolationForest.load(tmp_path / "f.json")
        np.testing.assert_array_equal(g.score(X), f.score(X))
        assert g.threshold == 0.55 and g.sample_size == 64
