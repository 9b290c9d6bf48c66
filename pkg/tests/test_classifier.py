import math

import numpy as np
import pytest

from artifact import autodiff as ad
from artifact.benchmarks.classifier import (
    ClassifierConfig,
    DegenerateLabelsWarning,
    LstmAttnClassifier,
    bce_loss,
    classify,
    classify_proba,
    threshold_probabilities,
    train_classifier,
)
from artifact.errors import EmptyDatasetError, RecordingTooShortError
from artifact.latent import coverage
from artifact.timeseries import Recording, SegmentSet

from gradcheck import check


def segments(x, y):
    n = len(x)
    x = np.asarray(x, float).reshape(n, 5)
    return SegmentSet(values=x, window=x.shape[1], recording_ids=np.array(["r"] * n),
                      channels=np.array(["a"] * n), starts=np.zeros(n, dtype=int),
                      labels=np.asarray(y, np.int8).reshape(x.shape))


class TestModel:
    def test_output_length_equals_window(self):
        clf = LstmAttnClassifier.create(7, 4, rng=0)
        p = clf.predict_proba(np.random.default_rng(0).standard_normal((3, 7)))
        assert p.shape == (3, 7) and np.all((p > 0) & (p < 1))

    def test_bidirectional_widths(self):
        clf = LstmAttnClassifier.create(5, 3, bidirectional=True, rng=0)
        assert clf.layers["lstm2"].input_size == 6 and clf.layers["out"].in_features == 6

    def test_uninformative_loss_is_ln2(self):
        clf = LstmAttnClassifier.create(5, 3, rng=0)
        for p in clf.parameters().values():
            p.data[...] = 0.0
        y = np.tile([0, 1], (4, 3))[:, :5]
        np.testing.assert_allclose(bce_loss(clf, np.ones((4, 5)), y).item(), math.log(2), rtol=1e-14)

    @pytest.mark.parametrize("seed", range(3))
    def test_bce_gradients(self, seed):
        rng = np.random.default_rng(seed)
        clf = LstmAttnClassifier.create(4, 3, bidirectional=bool(seed % 2), rng=rng)
        x = rng.standard_normal((3, 4))
        y = (rng.random((3, 4)) > 0.6).astype(float)
        rep = check(lambda: bce_loss(clf, x, y), clf.parameters(), rng, max_coords=5)
        assert rep.ok, rep.where

    def test_save_load(self, tmp_path):
        clf = LstmAttnClassifier.create(5, 3, rng=1)
        clf.save(tmp_path / "c.json")
        back = LstmAttnClassifier.load(tmp_path / "c.json")
        x = np.random.default_rng(0).standard_normal((4, 5))
        np.testing.assert_array_equal(back.predict_proba(x), clf.predict_proba(x))


class TestTraining:
    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            train_classifier(segments(np.empty((0, 5)), np.empty((0, 5))), ClassifierConfig(window_size=5))

    def test_all_zero_labels_warn_and_learn_low_probability(self):
        x = np.random.default_rng(0).standard_normal((2048, 5))
        cfg = ClassifierConfig(window_size=5, hidden_size=4, n_epochs=15)
        with pytest.warns(DegenerateLabelsWarning):
            clf = train_classifier(segments(x, np.zeros((2048, 5))), cfg)
        assert clf.predict_proba(x).mean() < 0.1
        assert clf.history[-1]["loss"] < clf.history[0]["loss"]

    def test_learns_large_values(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2048, 5))
        hot = rng.random((2048, 5)) < 0.2
        x[hot] += 8.0
        cfg = ClassifierConfig(window_size=5, hidden_size=6, n_epochs=15)
        clf = train_classifier(segments(x, hot), cfg)
        p = clf.predict_proba(x)
        assert p[hot].mean() > 0.5 > p[~hot].mean()


class TestClassify:
    def test_threshold_rule(self):
        np.testing.assert_array_equal(threshold_probabilities(np.full(4, 0.9)), 1)
        np.testing.assert_array_equal(threshold_probabilities(np.array([0.5, 0.6, 0.4])), [0, 1, 0])
        # two windows disagreeing at 0.4 and 0.8 average to 0.6
        assert threshold_probabilities(np.array([(0.4 + 0.8) / 2]))[0] == 1

    def test_shares_coverage_with_latent_averaging(self):
        clf = LstmAttnClassifier.create(4, 3, rng=2)
        x = np.random.default_rng(3).standard_normal(11)
        rec = Recording("r", {"a": x})
        p = classify_proba(clf, rec, "a")
        probs = clf.predict_proba(np.lib.stride_tricks.sliding_window_view(x, 4))
        cov = coverage(11, 4)
        total = np.zeros(11)
        for s in range(8):
            total[s:s + 4] += probs[s]
        np.testing.assert_allclose(p, total / cov, rtol=1e-14)
        assert classify(clf, rec, "a").shape == (11,)

    def test_too_short(self):
        clf = LstmAttnClassifier.create(6, 2, rng=0)
        with pytest.raises(RecordingTooShortError):
            classify(clf, Recording("r", {"a": np.zeros(5)}), "a")
