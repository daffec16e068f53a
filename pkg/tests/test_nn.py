import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eauq import nn


def numeric_gradient(model, X, y, loss, h=1e-5):
    """Central finite differences over every parameter, independent of backprop."""
    params = [np.array(a) for a in model.weights + model.biases]
    n_layers = len(model.weights)
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            vals = []
            for step in (h, -h):
                shifted = [q.copy() for q in params]
                shifted[k][idx] += step
                m = model.with_params(shifted[:n_layers], shifted[n_layers:])
                vals.append(nn.loss_and_gradient(m, X, y, loss)[0])
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        grads.append(g)
    return np.concatenate([g.ravel() for g in grads])


def random_case(rng, sizes, loss="bce"):
    model = nn.init_mlp(sizes, int(rng.integers(2**32)))
    # nonzero biases so ReLU kinks are not sitting exactly at zero
    model = model.with_params(model.weights, [rng.normal(0, 0.3, b.shape) for b in model.biases])
    X = rng.normal(size=(3, sizes[0]))
    y = rng.random(3)
    return model, X, y


class TestForward:
    def test_zero_parameters_give_one_half(self):
        m = nn.MlpModel((np.zeros((3, 4)), np.zeros((4, 1))), (np.zeros(4), np.zeros(1)))
        assert nn.forward(m, [1.0, -2.0, 7.0]) == 0.5

    def test_single_layer_sigmoid(self):
        m = nn.MlpModel((np.array([[1.0]]),), (np.zeros(1),))
        assert nn.forward(m, [0.0]) == 0.5
        assert nn.forward(m, [10.0]) > 0.9999
        assert nn.forward(m, [3.0]) > nn.forward(m, [2.0])

    def test_zero_dropout_matches_deterministic(self):
        m = nn.init_mlp([4, 8, 8, 1], seed=3, dropout_rate=0.0)
        x = np.arange(4.0)
        assert nn.forward(m, x, dropout=123) == nn.forward(m, x)

    def test_dropout_is_seeded(self):
        m = nn.init_mlp([4, 8, 1], seed=3, dropout_rate=0.5)
        X = np.random.default_rng(0).normal(size=(20, 4))
        np.testing.assert_array_equal(nn.forward(m, X, dropout=9), nn.forward(m, X, dropout=9))
        assert not np.array_equal(nn.forward(m, X, dropout=9), nn.forward(m, X, dropout=10))

    def test_dimension_mismatch(self):
        m = nn.init_mlp([4, 8, 1], seed=0)
        with pytest.raises(ValueError, match="dimension 4"):
            nn.forward(m, np.zeros(3))

    def test_output_strictly_inside_unit_interval(self):
        m = nn.MlpModel((np.array([[1.0]]),), (np.zeros(1),))
        assert 0.0 < nn.forward(m, [1e6]) < 1.0
        assert 0.0 < nn.forward(m, [-1e6]) < 1.0

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1e8, 1e8), min_size=3, max_size=3), st.integers(0, 1000))
    def test_output_range_property(self, x, seed):
        m = nn.init_mlp([3, 5, 1], seed=seed)
        p = nn.forward(m, x)
        assert 0.0 < p < 1.0

    def test_model_rejects_inconsistent_shapes(self):
        with pytest.raises(ValueError):
            nn.MlpModel((np.zeros((3, 4)), np.zeros((5, 1))), (np.zeros(4), np.zeros(1)))
        with pytest.raises(ValueError):
            nn.init_mlp([3, 4, 1], seed=0, dropout_rate=1.0)


class TestDropoutMask:
    def test_inverted_mask_has_unit_mean(self):
        rng = np.random.default_rng(2024)
        rate = 0.2
        masks = nn.dropout_mask((10_000,), rate, rng)
        assert set(np.unique(masks)) <= {0.0, 1.0 / (1 - rate)}
        se = masks.std(ddof=1) / math.sqrt(masks.size)
        assert abs(masks.mean() - 1.0) < 3 * se


class TestLossAndGradient:
    def test_perfect_mse_prediction(self):
        m = nn.init_mlp([2, 4, 1], seed=1)
        X = np.array([[0.3, -0.2], [1.0, 0.5]])
        y = nn.forward(m, X)
        value, grad = nn.loss_and_gradient(m, X, y, loss="mse")
        assert value == pytest.approx(0.0, abs=1e-30)
        assert np.allclose(grad.flat(), 0.0, atol=1e-15)

    def test_bce_at_one_half(self):
        m = nn.MlpModel((np.zeros((2, 1)),), (np.zeros(1),))
        value, _ = nn.loss_and_gradient(m, np.zeros((1, 2)), [1.0], loss="bce")
        assert value == pytest.approx(math.log(2), rel=1e-12)

    def test_gradient_shapes(self):
        m = nn.init_mlp([3, 5, 4, 1], seed=0)
        _, grad = nn.loss_and_gradient(m, np.ones((2, 3)), [0, 1])
        assert [g.shape for g in grad.weights] == [w.shape for w in m.weights]
        assert [g.shape for g in grad.biases] == [b.shape for b in m.biases]

    @pytest.mark.parametrize("loss", ["bce", "mse"])
    def test_matches_finite_differences_2_4_1(self, loss):
        rng = np.random.default_rng(7)
        model, X, y = random_case(rng, [2, 4, 1], loss)
        _, grad = nn.loss_and_gradient(model, X, y, loss)
        np.testing.assert_allclose(grad.flat(), numeric_gradient(model, X, y, loss), rtol=1e-4, atol=1e-7)

    def test_empty_batch(self):
        m = nn.init_mlp([2, 3, 1], seed=0)
        with pytest.raises(ValueError, match="empty"):
            nn.loss_and_gradient(m, np.zeros((0, 2)), [])

    def test_targets_outside_unit_interval(self):
        m = nn.init_mlp([2, 3, 1], seed=0)
        with pytest.raises(ValueError):
            nn.loss_and_gradient(m, np.zeros((1, 2)), [1.5])


XOR_X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
XOR_Y = np.array([0, 1, 1, 0], dtype=float)


class TestTrain:
    def test_zero_epochs_is_identity(self):
        m = nn.init_mlp([2, 8, 1], seed=0)
        out, ckpts = nn.train(m, XOR_X, XOR_Y, nn.TrainConfig(epochs=0))
        assert out.params_equal(m)
        assert ckpts == []

    def test_learns_xor(self):
        cfg = nn.TrainConfig(epochs=2000, initial_lr=0.5, lr_schedule="constant", weight_decay=0.0, batch_size=4, seed=0)
        model, _ = nn.train(nn.init_mlp([2, 8, 1], seed=0), XOR_X, XOR_Y, cfg)
        assert np.all((nn.forward(model, XOR_X) >= 0.5) == XOR_Y.astype(bool))

    def test_checkpoints_every_interval(self):
        cfg = nn.TrainConfig(epochs=150, initial_lr=0.1, batch_size=4, checkpoint_interval=15)
        _, ckpts = nn.train(nn.init_mlp([2, 4, 1], seed=0), XOR_X, XOR_Y, cfg)
        assert [c.epoch for c in ckpts] == list(range(15, 151, 15))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        X, y = rng.normal(size=(50, 3)), rng.integers(0, 2, 50)
        cfg = nn.TrainConfig(epochs=20, initial_lr=0.1, seed=11)
        m0 = nn.init_mlp([3, 6, 1], seed=5, dropout_rate=0.2)
        a, _ = nn.train(m0, X, y, cfg)
        b, _ = nn.train(m0, X, y, cfg)
        assert a.params_equal(b)
        c, _ = nn.train(m0, X, y, cfg.replace(seed=12))
        assert not a.params_equal(c)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_names_epoch(self):
        X = np.array([[np.inf, 1.0]])
        m = nn.MlpModel((np.array([[1.0], [1.0]]),), (np.zeros(1),))
        with pytest.raises(nn.TrainingDivergedError, match="epoch 1") as info:
            nn.train(m, X, [1.0], nn.TrainConfig(epochs=3, initial_lr=1.0, batch_size=1))
        assert info.value.epoch == 1

    def test_schedules(self):
        lin = nn.TrainConfig(epochs=11, initial_lr=1.0, lr_schedule="linear")
        assert lin.lr_at(0) == 1.0
        assert lin.lr_at(10) == pytest.approx(0.1)
        assert lin.lr_at(5) == pytest.approx(0.55)
        assert nn.TrainConfig(lr_schedule="constant", initial_lr=0.3).lr_at(500) == 0.3

    def test_config_validation(self):
        with pytest.raises(ValueError):
            nn.TrainConfig(epochs=10, checkpoint_interval=20)
        with pytest.raises(ValueError):
            nn.TrainConfig(decay_factor=0.0)
        with pytest.raises(ValueError):
            nn.TrainConfig(loss="hinge")


class TestFinetune:
    def test_default_schedule_decays_exponentially(self):
        cfg = nn.finetune_config(nn.TrainConfig())
        assert cfg.epochs == 40
        for t in (0, 1, 17, 39):
            assert cfg.lr_at(t) == pytest.approx(1e-5 * 0.99**t, rel=1e-12)

    def test_zero_epochs_unchanged(self):
        m = nn.init_mlp([2, 4, 1], seed=0)
        out = nn.finetune_to_experts(m, XOR_X, [0.0, 0.5, 1.0, 0.25], nn.TrainConfig(epochs=0))
        assert out.params_equal(m)

    def test_missing_votes_rejected(self):
        m = nn.init_mlp([2, 4, 1], seed=0)
        with pytest.raises(ValueError, match="lack expert votes"):
            nn.finetune_to_experts(m, XOR_X, [0.0, np.nan, 1.0, 0.25])

    def test_original_untouched_and_val_mse_does_not_increase(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(200, 4))
        label = (X[:, 0] + 0.5 * X[:, 1] > 0).astype(float)
        Xtr, ytr, Xva, yva = X[:100], label[:100], X[100:], label[100:]
        base, _ = nn.train(nn.init_mlp([4, 8, 1], seed=1), Xtr, ytr, nn.TrainConfig(epochs=5, initial_lr=0.05, seed=2))
        before = [w.copy() for w in base.weights]
        # expert mean equals the label exactly
        tuned = nn.finetune_to_experts(base, Xtr, ytr, nn.finetune_config(nn.TrainConfig(seed=4), initial_lr=0.01))
        assert all(np.array_equal(a, b) for a, b in zip(before, base.weights))
        mse = lambda m: np.mean((nn.forward(m, Xva) - yva) ** 2)
        assert mse(tuned) <= mse(base)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, tmp_path):
        m = nn.init_mlp([3, 7, 5, 1], seed=42, dropout_rate=0.2)
        m = m.with_params([w * np.pi for w in m.weights], [b + 1 / 3 for b in m.biases])
        nn.save_model(m, tmp_path / "m.json")
        back = nn.load_model(tmp_path / "m.json")
        assert back.params_equal(m)
        assert back.dropout_rate == m.dropout_rate

    def test_header_is_versioned(self):
        text = nn.model_to_text(nn.init_mlp([2, 1], seed=0))
        assert '"format": "eauq-mlp"' in text and '"version": 1' in text
        with pytest.raises(ValueError, match="version"):
            nn.model_from_text(text.replace('"version": 1', '"version": 99'))
