import numpy as np
import pytest

from artifact import synth
from artifact.benchmarks.classifier import ClassifierConfig
from artifact.benchmarks.detectors import (
    ArimaDetector,
    ClassifierDetector,
    VaeIfDetector,
    VanillaIfDetector,
    default_detectors,
    lag_vectors,
    vae_if_no_attention,
    vanilla_if_detect,
)
from artifact.errors import RecordingTooShortError
from artifact.timeseries import Recording, preprocess
from artifact.vae import TrainConfig


@pytest.fixture(scope="module")
def corpus():
    recs = synth.generate(synth.SynthConfig(n_recordings=3, length=300, seed=1))
    return [preprocess(r) for r in recs]


TINY = TrainConfig(latent_dim=2, n_epochs=1, window_size=15, seed=0)


class TestLagVectors:
    def test_count_and_rows(self):
        x = np.arange(40.0)
        L = lag_vectors(x)
        assert L.shape == (26, 15)
        np.testing.assert_array_equal(L[3], x[3:18])

    def test_too_short(self):
        with pytest.raises(RecordingTooShortError):
            lag_vectors(np.zeros(14))

    def test_constant_signal_not_flagged(self):
        flags = vanilla_if_detect(Recording("c", {"a": np.full(200, 3.0)}), "a")
        assert flags.shape == (200,) and flags.sum() == 0

    def test_leading_samples_copy_first_label(self):
        x = np.random.default_rng(0).standard_normal(300)
        x[0:15] += 40.0
        flags = vanilla_if_detect(Recording("r", {"a": x}), "a", seed=1)
        np.testing.assert_array_equal(flags[:14], flags[14])


class TestDetectors:
    def test_every_detector_emits_binary_full_length(self, corpus):
        dets = default_detectors(TINY, ClassifierConfig(n_epochs=1, hidden_size=2))
        assert [d.name for d in dets] == ["vae_if", "lstm_attn", "arima", "vanilla_if",
                                          "vae_if_no_attention"]
        for d in dets:
            if isinstance(d, ArimaDetector):
                d.max_p, d.max_q, d.max_d = 2, 1, 1
            d.fit(corpus[:2])
            for c in corpus[2].channel_names:
                y = d.detect(corpus[2], c)
                assert y.shape == (300,) and set(np.unique(y)) <= {0, 1}, d.name

    def test_include_filter(self):
        assert [d.name for d in default_detectors(TINY, include=["arima"])] == ["arima"]
        with pytest.raises(ValueError):
            default_detectors(TINY, include=["xgboost"])

    def test_no_attention_ablation_config(self):
        d = vae_if_no_attention(TINY)
        assert d.config.attention is False and TINY.attention is True
        assert d.config.latent_dim == TINY.latent_dim

    def test_vae_if_deterministic(self, corpus):
        a = VaeIfDetector(config=TINY, n_trees=10).fit(corpus[:2])
        b = VaeIfDetector(config=TINY, n_trees=10).fit(corpus[:2])
        np.testing.assert_array_equal(a.scores(corpus[2], "BPm"), b.scores(corpus[2], "BPm"))

    def test_arima_per_signal_type(self, corpus):
        d = ArimaDetector(max_p=1, max_q=0, max_d=1).fit(corpus[:2])
        assert set(d.models) == set(corpus[0].channel_names)

    def test_vanilla_forest_uses_training_pool(self, corpus):
        d = VanillaIfDetector(n_trees=5).fit(corpus[:2], channels=["HRT"])
        assert d.forest.n_features == 15

    def test_classifier_window_follows_config(self, corpus):
        d = ClassifierDetector(ClassifierConfig(window_size=20, n_epochs=1, hidden_size=2)).fit(corpus[:1])
        assert d.model.window == 20
