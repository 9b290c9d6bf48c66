import math
from types import SimpleNamespace

import numpy as np
import pytest

from artifact.errors import BadConfigError, LengthMismatchError, TooFewRecordingsError
from artifact.evaluation import (
    CLASSIFIER_SPACE,
    VAE_SPACE,
    Confusion,
    MetricReport,
    Range,
    SearchTrial,
    confusion,
    geometric_mean,
    random_search,
    sample_config,
    sens_spec,
    split_recordings,
    validate_config,
)
from artifact.vae import TrainConfig


class TestConfusion:
    def test_perfect(self):
        c = confusion([1, 0, 1], [1, 0, 1])
        assert tuple(c) == (2, 0, 1, 0) and sens_spec(c) == (1.0, 1.0)

    def test_all_zero_prediction(self):
        sens, spec = sens_spec(confusion([0, 0, 0, 0], [1, 1, 0, 0]))
        assert (sens, spec) == (0.0, 1.0)
        assert geometric_mean(sens, spec) == 0.0

    def test_gmean(self):
        assert geometric_mean(0.64, 1.0) == 0.8

    def test_no_positives(self):
        assert sens_spec(confusion([0, 1], [0, 0])) == (None, 0.5)

    def test_no_negatives(self):
        assert sens_spec(confusion([1, 0], [1, 1])) == (0.5, None)
        assert geometric_mean(0.5, None) is None

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatchError):
            confusion([1, 0], [1])

    def test_counts_add_up(self):
        rng = np.random.default_rng(0)
        p, t = rng.integers(0, 2, 100), rng.integers(0, 2, 100)
        c = confusion(p, t)
        assert sum(c) == 100 and c.tp == int(np.sum((p == 1) & (t == 1)))


class TestReport:
    def make(self):
        r = MetricReport()
        r.add("a", "BPm", "d", [1, 0, 0, 0], [1, 1, 0, 0])  # sens .5 spec 1
        r.add("b", "BPm", "d", [1, 1, 0, 0], [1, 1, 0, 0])  # sens 1 spec 1
        r.add("c", "BPm", "d", [0, 1, 0, 0], [0, 0, 0, 0])  # sens undefined
        return r

    def test_aggregate_skips_and_counts(self):
        a = self.make().lookup("BPm", "d")
        assert a.sens_mean == 0.75 and a.sens_skipped == 1 and a.spec_skipped == 0
        assert a.n_recordings == 3
        np.testing.assert_allclose(a.spec_mean, (1 + 1 + 0.75) / 3, rtol=1e-15)
        np.testing.assert_allclose(a.sens_std, np.std([0.5, 1.0]), rtol=1e-15)

    def test_csv_roundtrip(self, tmp_path):
        r = self.make()
        r.write_csv(tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0] == "recording,channel,detector,sensitivity,specificity"
        assert lines[3].split(",")[3] == ""
        back = MetricReport.read_csv(tmp_path / "m.csv")
        assert back.lookup("BPm", "d") == r.lookup("BPm", "d")

    def test_summary_csv(self, tmp_path):
        self.make().write_summary_csv(tmp_path / "s.csv")
        assert "BPm" in (tmp_path / "s.csv").read_text()


class TestSplitAndSpace:
    def test_split_disjoint_and_sized(self):
        parts = split_recordings(list(range(20)), 0.7, seed=3)
        train, valid = parts
        assert len(train) == 14 and len(valid) == 6 and not set(train) & set(valid)

    def test_split_needs_two(self):
        with pytest.raises(TooFewRecordingsError):
            split_recordings([1], 0.7)

    def test_log_range_sampling(self):
        r = Range(1e-4, 1e-3, log=True)
        v = np.array([r.sample(np.random.default_rng(s)) for s in range(500)])
        assert v.min() >= 1e-4 and v.max() <= 1e-3
        # log-uniform: about half the mass below the geometric midpoint
        assert abs(np.mean(v < math.sqrt(1e-7)) - 0.5) < 0.08

    def test_samples_inside_space(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            cfg = sample_config(VAE_SPACE, rng)
            validate_config(cfg, VAE_SPACE)
            validate_config(sample_config(CLASSIFIER_SPACE, rng), CLASSIFIER_SPACE)
            assert isinstance(cfg["latent_dim"], int)

    @pytest.mark.parametrize("bad", [{"lr": 1e-2}, {"beta": 1e3}, {"latent_dim": 1}, {"window_size": 61},
                                     {"n_epochs": 7}])
    def test_out_of_range_rejected(self, bad):
        with pytest.raises(BadConfigError):
            validate_config({**TrainConfig().to_dict(), **bad}, VAE_SPACE)


def ids(n):
    return [SimpleNamespace(id=f"r{i}") for i in range(n)]


class TestSearch:
    @staticmethod
    def objective(train, valid, params, seed, channels=None):
        # deterministic stand-in rewarding larger learning rates
        return params["lr"] * 1000

    def test_deterministic_and_in_range(self):
        recs = ids(10)
        a = random_search(recs, n_trials=6, seed=4, objective=self.objective)
        b = random_search(recs, n_trials=6, seed=4, objective=self.objective)
        assert [t.params for t in a.trials] == [t.params for t in b.trials]
        assert a.best.trial == b.best.trial
        for t in a.trials:
            validate_config(t.params, VAE_SPACE)
        assert a.best.gmean == max(t.gmean for t in a.trials)

    def test_single_trial(self, tmp_path):
        res = random_search(ids(5), n_trials=1, seed=0, objective=self.objective)
        assert len(res.trials) == 1 and res.best is res.trials[0]
        res.write_log(tmp_path / "trials.csv")
        assert len((tmp_path / "trials.csv").read_text().splitlines()) == 2

    def test_trial_row(self):
        row = SearchTrial(0, 1, {"lr": 1e-3}, 0.5).row()
        assert row["gmean"] == 0.5 and row["lr"] == 1e-3
