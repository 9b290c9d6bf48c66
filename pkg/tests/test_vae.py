import numpy as np
import pytest

from artifact import autodiff as ad
from artifact.autodiff import Tensor
from artifact.errors import EmptyDatasetError, LengthMismatchError, ShapeMismatchError
from artifact.vae import (
    SequenceVAE,
    TrainConfig,
    elbo_terms,
    kl_terms,
    reparameterize,
    train_vae,
)

from gradcheck import check


def model(W=6, H=3, beta=0.5, bidirectional=False, attention=True, seed=0):
    return SequenceVAE.create(W, H, beta, bidirectional, attention, rng=seed)


class TestEncode:
    def test_zero_model_gives_zero_mean(self):
        m = model().zero_()
        mu, _ = m.encode(np.random.default_rng(0).standard_normal((4, 6)))
        np.testing.assert_array_equal(mu.data, 0.0)

    def test_deterministic(self):
        m = model()
        x = np.random.default_rng(1).standard_normal((3, 6))
        np.testing.assert_array_equal(m.encode(x)[0].data, m.encode(x)[0].data)

    def test_shape(self):
        m = SequenceVAE.create(15, 4, 0.1, rng=2)
        mu, logvar = m.encode(np.zeros(15))
        assert mu.shape == logvar.shape == (1, 15, 4)

    def test_window_length_checked(self):
        with pytest.raises(LengthMismatchError):
            model().encode(np.zeros((2, 5)))

    def test_encode_mean_matches_batches(self):
        m = model()
        x = np.random.default_rng(3).standard_normal((10, 6))
        np.testing.assert_allclose(m.encode_mean(x, batch_size=3), m.encode(x)[0].data, rtol=1e-13, atol=1e-15)

    def test_no_attention_has_same_parameter_count(self):
        assert model(attention=True).n_parameters() == model(attention=False).n_parameters()

    def test_no_attention_changes_output(self):
        x = np.random.default_rng(4).standard_normal((2, 6))
        a = model(attention=True, seed=5).encode(x)[0].data
        b = model(attention=False, seed=5).encode(x)[0].data
        assert not np.allclose(a, b)

    def test_decoder_input_width(self):
        m = model(H=5, bidirectional=True)
        assert m.layers["dec_lstm1"].input_size == 5
        assert m.layers["enc_mu"].in_features == 10


class TestReparameterize:
    def test_zero_noise_returns_mean(self):
        mu = Tensor(np.random.default_rng(0).standard_normal((2, 3)))
        z = reparameterize(mu, Tensor(np.ones((2, 3))), eps=np.zeros((2, 3)))
        np.testing.assert_array_equal(z.data, mu.data)

    def test_tiny_variance(self):
        rng = np.random.default_rng(1)
        mu = Tensor(rng.standard_normal((4, 2)))
        z = reparameterize(mu, Tensor(np.full((4, 2), -50.0)), rng=rng)
        np.testing.assert_allclose(z.data, mu.data, rtol=0, atol=1e-10)

    def test_seeded(self):
        mu, lv = Tensor(np.zeros(5)), Tensor(np.zeros(5))
        a = reparameterize(mu, lv, rng=np.random.default_rng(9)).data
        b = reparameterize(mu, lv, rng=np.random.default_rng(9)).data
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            reparameterize(Tensor(np.zeros(3)), Tensor(np.zeros(4)), eps=np.zeros(3))

    def test_gradient_reaches_mean_and_logvar(self):
        mu = Tensor([0.5, -1.0], requires_grad=True)
        lv = Tensor([0.2, 0.4], requires_grad=True)
        eps = np.array([1.5, -0.5])
        ad.tsum(reparameterize(mu, lv, eps=eps)).backward()
        np.testing.assert_array_equal(mu.grad, [1.0, 1.0])
        np.testing.assert_allclose(lv.grad, 0.5 * np.exp(lv.data / 2) * eps, rtol=1e-14)


class TestElbo:
    def test_kl_zero_at_prior(self):
        assert ad.tsum(kl_terms(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))).item() == 0.0

    def test_kl_unit_mean(self):
        assert kl_terms(Tensor([1.0]), Tensor([0.0])).data[0] == 0.5

    def test_perfect_reconstruction_leaves_beta_kl(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 4))
        mu, lv = Tensor(rng.standard_normal((2, 4, 3))), Tensor(rng.standard_normal((2, 4, 3)))
        t = elbo_terms(x, Tensor(x.copy()), mu, lv, beta=0.7)
        assert t.recon == 0.0
        np.testing.assert_allclose(t.total.item(), 0.7 * t.kl, rtol=1e-15)

    def test_hand_value(self):
        # two windows: residuals (1, 1) and (2, 0); KL only from one unit mean
        x = np.zeros((2, 2))
        xhat = Tensor([[1.0, 1.0], [2.0, 0.0]])
        mu = np.zeros((2, 2, 1))
        mu[0, 0, 0] = 1.0
        t = elbo_terms(x, xhat, Tensor(mu), Tensor(np.zeros((2, 2, 1))), beta=2.0)
        assert t.recon == 0.5 * 6 / 2 and t.kl == 0.25
        assert t.total.item() == 1.5 + 0.5

    def test_kl_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            mu, lv = rng.standard_normal((3, 5, 2)) * 3, rng.standard_normal((3, 5, 2)) * 3
            assert kl_terms(Tensor(mu), Tensor(lv)).data.min() >= -1e-12

    def test_beta_monotone(self):
        m = model()
        x = np.random.default_rng(2).standard_normal((4, 6))
        eps = np.random.default_rng(3).standard_normal((4, 6, 3))
        losses = []
        for beta in [0.01, 0.1, 1.0, 10.0]:
            m.beta = beta
            t = m.loss(x, eps=eps)
            assert t.kl > 0
            losses.append(t.total.item())
        assert np.all(np.diff(losses) > 0)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("bidirectional", [False, True])
    def test_gradients_with_frozen_noise(self, seed, bidirectional):
        rng = np.random.default_rng(seed)
        m = SequenceVAE.create(4, 2, 0.3, bidirectional, rng=rng)
        x = rng.standard_normal((2, 4))
        eps = rng.standard_normal((2, 4, 2))
        rep = check(lambda: m.loss(x, eps=eps).total, m.parameters(), rng, max_coords=4)
        assert rep.ok, rep.where


class TestTraining:
    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            train_vae(np.empty((0, 15)), TrainConfig())

    def test_window_mismatch(self):
        with pytest.raises(LengthMismatchError):
            train_vae(np.zeros((10, 8)), TrainConfig(window_size=15))

    def test_zero_data_reconstructs(self):
        cfg = TrainConfig(window_size=15, latent_dim=4, n_epochs=8, batch_size=32, lr=1e-3)
        m = train_vae(np.zeros((256, 15)), cfg)
        assert m.history[-1]["recon"] / 15 < 1e-2
        assert all(h["kl_min"] >= -1e-9 for h in m.history)

    def test_seed_determinism(self):
        x = np.random.default_rng(0).standard_normal((64, 6))
        cfg = TrainConfig(window_size=6, latent_dim=2, n_epochs=2, batch_size=16)
        a, b = train_vae(x, cfg), train_vae(x, cfg)
        for (k, pa), pb in zip(a.parameters().items(), b.parameters().values()):
            np.testing.assert_array_equal(pa.data, pb.data, err_msg=k)


class TestPersistence:
    @pytest.mark.parametrize("bidirectional", [False, True])
    def test_roundtrip_bitwise(self, tmp_path, bidirectional):
        m = model(bidirectional=bidirectional, attention=not bidirectional, seed=4)
        m.history = [{"epoch": 1, "loss": 1.25}]
        p = tmp_path / "vae.json"
        m.save(p)
        back = SequenceVAE.load(p)
        x = np.random.default_rng(0).standard_normal((5, 6))
        np.testing.assert_array_equal(back.encode_mean(x), m.encode_mean(x))
        assert back.history == m.history and back.attention == m.attention

    def test_metadata_records_kl_reduction(self):
        meta = model().metadata()
        assert "sum" in meta["kl_reduction"] and meta["layer_sizes"]["enc_lstm1"] == [1, 3]

    def test_missing_array_rejected(self, tmp_path):
        m = model()
        meta = m.metadata()
        arrays = {k: v.data for k, v in m.parameters().items()}
        arrays.pop("dec_out.b")
        with pytest.raises(ShapeMismatchError):
            SequenceVAE.from_arrays(meta, arrays)
