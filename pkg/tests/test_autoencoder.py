import copy
import json
import math

import numpy as np
import pytest

from saedetect.autoencoder import (
    DataError,
    Gradients,
    Hyperparams,
    SparseAutoencoder,
    TrainingDiverged,
    gradients,
    load_model,
    loss,
    model_errors,
    model_from_dict,
    model_to_dict,
    reconstruction_error,
    reconstruction_errors,
    save_model,
    train,
)
from saedetect.features import NormalizationParams


def small_model(seed=0, input_size=4, hidden_size=6, **hyper_kw):
    hyper = Hyperparams(input_size=input_size, hidden_size=hidden_size, **hyper_kw)
    return SparseAutoencoder.initialize(hyper, seed)


class TestForward:
    def test_zero_weights_give_half_activations(self):
        m = small_model(input_size=16, hidden_size=32)
        m.w1[:] = 0.0
        m.w2[:] = 0.0
        hidden, x_hat = m.forward(np.zeros(16))
        np.testing.assert_array_equal(hidden, np.full(32, 0.5))
        np.testing.assert_array_equal(x_hat, np.zeros(16))

    def test_hidden_range_open_interval(self):
        m = small_model(seed=1, input_size=16, hidden_size=32)
        rng = np.random.default_rng(2)
        hidden, _ = m.forward_batch(rng.normal(0, 5, size=(10_000, 16)))
        assert np.all(hidden > 0.0)
        assert np.all(hidden < 1.0)

    def test_nonfinite_input_rejected(self):
        m = small_model()
        with pytest.raises(ValueError):
            m.forward(np.array([1.0, np.nan, 0.0, 0.0]))

    def test_shape_mismatch_rejected(self):
        m = small_model()
        with pytest.raises(ValueError):
            m.forward(np.zeros(5))

    def test_batch_matches_single(self):
        m = small_model(seed=3)
        rng = np.random.default_rng(4)
        X = rng.normal(size=(7, 4))
        H, Xh = m.forward_batch(X)
        for i in range(7):
            h, xh = m.forward(X[i])
            np.testing.assert_allclose(H[i], h, rtol=1e-12)
            np.testing.assert_allclose(Xh[i], xh, rtol=1e-12)


class TestReconstructionError:
    def test_identity_is_zero(self):
        x = np.arange(16, dtype=float)
        assert reconstruction_error(x, x) == 0.0

    def test_unit_difference(self):
        x = np.zeros(16)
        x_hat = np.zeros(16)
        x[0] = 1.0
        assert reconstruction_error(x, x_hat) == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        x, y = rng.normal(size=16), rng.normal(size=16)
        assert reconstruction_error(x, y) == pytest.approx(reconstruction_error(y, x), rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            reconstruction_error(np.zeros(16), np.zeros(15))

    def test_batch_version(self):
        rng = np.random.default_rng(2)
        X, Y = rng.normal(size=(5, 16)), rng.normal(size=(5, 16))
        res = reconstruction_errors(X, Y)
        for i in range(5):
            assert res[i] == pytest.approx(reconstruction_error(X[i], Y[i]), rel=1e-12)


class TestLoss:
    def test_sparsity_zero_at_target(self):
        # engineer rho_hat == rho exactly: constant hidden activation
        m = small_model(input_size=2, hidden_size=3, target_sparsity=0.1)
        m.w1[:] = 0.0
        m.b1[:] = math.log(0.1 / 0.9)  # sigmoid(b1) = 0.1
        breakdown = loss(m, np.zeros((4, 2)))
        assert breakdown.sparsity == pytest.approx(0.0, abs=1e-12)

    def test_kl_hand_value(self):
        # rho_hat = 0.5 on all 32 units, rho = 0.1
        m = small_model(input_size=16, hidden_size=32, target_sparsity=0.1)
        m.w1[:] = 0.0
        m.b1[:] = 0.0
        breakdown = loss(m, np.zeros((8, 16)))
        expected = 32 * (0.1 * math.log(0.1 / 0.5) + 0.9 * math.log(0.9 / 0.5))
        assert breakdown.sparsity == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(11.7780546, abs=1e-6)

    def test_beta_zero_total_equals_recon(self):
        m = small_model(seed=5, sparsity_weight=0.0)
        rng = np.random.default_rng(6)
        b = loss(m, rng.normal(size=(10, 4)))
        assert b.total == b.recon

    def test_total_at_least_recon(self):
        m = small_model(seed=7)
        rng = np.random.default_rng(8)
        b = loss(m, rng.normal(size=(10, 4)))
        assert b.total >= b.recon >= 0.0

    def test_recon_is_mean_over_batch(self):
        m = small_model(seed=9)
        rng = np.random.default_rng(10)
        X = rng.normal(size=(6, 4))
        b = loss(m, X)
        assert b.recon == pytest.approx(model_errors(m, X).mean(), rel=1e-12)


def finite_difference(model, X, h=1e-5):
    """Central finite differences of the total loss for every parameter."""
    grads = {}
    for name in ("w1", "b1", "w2", "b2"):
        arr = getattr(model, name)
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss(model, X).total
            flat[i] = orig - h
            down = loss(model, X).total
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return Gradients(**grads)


def max_rel_error(analytic: Gradients, numeric: Gradients) -> float:
    worst = 0.0
    for name in ("w1", "b1", "w2", "b2"):
        a = getattr(analytic, name)
        f = getattr(numeric, name)
        rel = np.abs(a - f) / np.maximum.reduce([np.abs(a), np.abs(f), np.ones_like(a)])
        worst = max(worst, float(rel.max()))
    return worst


class TestGradients:
    def test_matches_finite_differences_20_configs(self):
        for config in range(20):
            rng = np.random.default_rng(1000 + config)
            m = small_model(seed=2000 + config, target_sparsity=0.1, sparsity_weight=0.2)
            X = rng.normal(size=(int(rng.integers(1, 9)), 4))
            worst = max_rel_error(gradients(m, X), finite_difference(m, X))
            assert worst < 1e-4, f"config {config}: max relative error {worst}"

    def test_sparsity_gradient_zero_at_target(self):
        m = small_model(input_size=2, hidden_size=3, target_sparsity=0.1, sparsity_weight=0.2)
        m.w1[:] = 0.0
        m.b1[:] = math.log(0.1 / 0.9)
        m.w2[:] = 0.0
        X = np.zeros((4, 2))
        g_with = gradients(m, X)
        m2 = copy.deepcopy(m)
        m2.hyper = Hyperparams(**{**m.hyper.__dict__, "sparsity_weight": 0.0})
        g_without = gradients(m2, X)
        np.testing.assert_allclose(g_with.w1, g_without.w1, atol=1e-12)
        np.testing.assert_allclose(g_with.b1, g_without.b1, atol=1e-12)

    def test_beta_zero_equals_plain_autoencoder(self):
        rng = np.random.default_rng(55)
        X = rng.normal(size=(8, 4))
        m = small_model(seed=56, sparsity_weight=0.0)
        worst = max_rel_error(gradients(m, X), finite_difference(m, X))
        assert worst < 1e-4


def toy_training_data(seed=0, n=500, dim=16):
    """Samples concentrated near a low-dimensional pattern, z-scored."""
    rng = np.random.default_rng(seed)
    basis = rng.normal(size=(3, dim))
    codes = rng.normal(size=(n, 3))
    X = codes @ basis + 0.1 * rng.normal(size=(n, dim))
    return (X - X.mean(axis=0)) / X.std(axis=0)


class TestTrain:
    def test_validation_re_improves(self):
        X = toy_training_data(seed=1)
        hyper = Hyperparams(max_epochs=60, patience=60)
        model, report = train(X[:400], X[400:], hyper, seed=2)
        assert report.val_re_history[-1] < report.val_re_history[0]
        assert min(report.val_re_history) < report.val_re_history[0]

    def test_determinism_same_seed(self):
        X = toy_training_data(seed=3)
        hyper = Hyperparams(max_epochs=25, patience=25)
        m1, _ = train(X[:400], X[400:], hyper, seed=9)
        m2, _ = train(X[:400], X[400:], hyper, seed=9)
        np.testing.assert_array_equal(m1.w1, m2.w1)
        np.testing.assert_array_equal(m1.b1, m2.b1)
        np.testing.assert_array_equal(m1.w2, m2.w2)
        np.testing.assert_array_equal(m1.b2, m2.b2)

    def test_different_seed_different_model(self):
        X = toy_training_data(seed=3)
        hyper = Hyperparams(max_epochs=5, patience=5)
        m1, _ = train(X[:400], X[400:], hyper, seed=1)
        m2, _ = train(X[:400], X[400:], hyper, seed=2)
        assert not np.array_equal(m1.w1, m2.w1)

    def test_best_epoch_weights_returned(self):
        X = toy_training_data(seed=4)
        hyper = Hyperparams(max_epochs=40, patience=40)
        model, report = train(X[:400], X[400:], hyper, seed=5)
        best = min(report.val_re_history)
        actual = model_errors(model, X[400:]).mean()
        assert actual == pytest.approx(best, rel=1e-9)

    def test_early_stopping_patience(self):
        X = toy_training_data(seed=6)
        hyper = Hyperparams(max_epochs=500, patience=3, learning_rate=0.0)
        model, report = train(X[:400], X[400:], hyper, seed=7)
        # zero learning rate: no improvement after the first epoch
        assert report.epochs_run == 4
        assert len(report.val_re_history) == 4

    def test_epochs_bounded_by_max(self):
        X = toy_training_data(seed=8)
        hyper = Hyperparams(max_epochs=7, patience=100)
        _, report = train(X[:400], X[400:], hyper, seed=9)
        assert report.epochs_run == 7

    def test_divergence_detected(self):
        X = toy_training_data(seed=10)
        hyper = Hyperparams(max_epochs=50, patience=50, learning_rate=50.0)
        with pytest.raises(TrainingDiverged) as err:
            train(X[:400], X[400:], hyper, seed=11)
        assert "epoch" in str(err.value)
        assert "learning_rate=50.0" in str(err.value)

    def test_empty_sets_rejected(self):
        X = toy_training_data(seed=12)
        with pytest.raises(ValueError):
            train(X[:0], X[:10], Hyperparams(), seed=0)
        with pytest.raises(ValueError):
            train(X[:10], X[:0], Hyperparams(), seed=0)

    def test_report_activation_shape(self):
        X = toy_training_data(seed=13)
        hyper = Hyperparams(max_epochs=5, patience=5)
        _, report = train(X[:100], X[100:140], hyper, seed=14)
        assert report.mean_hidden_activation.shape == (32,)
        assert np.all(report.mean_hidden_activation > 0)
        assert np.all(report.mean_hidden_activation < 1)


class TestPersistence:
    def make_trained(self, tmp_path):
        X = toy_training_data(seed=20)
        hyper = Hyperparams(max_epochs=10, patience=10)
        model, _ = train(X[:300], X[300:350], hyper, seed=21, device_type="camera")
        model.normalization = NormalizationParams(mean=np.arange(16.0), std=np.ones(16))
        model.threshold = 1.25
        return model, X

    def test_roundtrip_bit_exact(self, tmp_path):
        model, X = self.make_trained(tmp_path)
        path = tmp_path / "camera.json"
        save_model(model, path)
        back = load_model(path)
        np.testing.assert_array_equal(back.w1, model.w1)
        np.testing.assert_array_equal(back.b2, model.b2)
        assert back.threshold == model.threshold
        assert back.device_type == "camera"
        assert back.hyper == model.hyper
        np.testing.assert_array_equal(
            model_errors(back, X[:100]), model_errors(model, X[:100])
        )

    def test_schema_fields(self, tmp_path):
        model, _ = self.make_trained(tmp_path)
        doc = model_to_dict(model)
        assert set(doc) == {
            "schema_version", "device_type", "hyperparams", "normalization",
            "weights", "threshold", "rng_seed", "trained_at",
        }
        assert set(doc["weights"]) == {"W1", "b1", "W2", "b2"}
        assert len(doc["normalization"]["mean"]) == 16

    def test_unknown_schema_rejected(self):
        with pytest.raises(DataError):
            model_from_dict({"schema_version": 999})

    def test_corrupt_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(DataError):
            load_model(path)
