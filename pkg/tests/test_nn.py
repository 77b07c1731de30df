"""Layer kernels, losses and the Adam optimizer."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from dropout_transfer import nn
from dropout_transfer.errors import (ConfigurationError, ForwardStateError, NonFiniteError,
                                     ShapeError)
from oracles import network_gradient_errors, numeric_gradient

# (specs, input shape) covering every layer kind
LAYER_CASES = {
    "Dense": ([nn.Dense(3)], (5,)),
    "Conv1D-k1": ([nn.Conv1D(4, 1)], (4, 5)),
    "Conv1D-k3": ([nn.Conv1D(4, 3)], (4, 5)),
    "LSTM": ([nn.LSTM(3)], (4, 5)),
    "BiLSTM": ([nn.BiLSTM(3)], (4, 5)),
    "Sigmoid": ([nn.Sigmoid()], (4, 5)),
    "ReLU": ([nn.ReLU()], (4, 5)),
    "LeakyReLU": ([nn.LeakyReLU(0.2)], (4, 5)),
    "Flatten": ([nn.Flatten()], (4, 5)),
    "Reshape": ([nn.Reshape((5, 4))], (4, 5)),
    "Embedding": ([nn.Embedding()], (4, 5)),
}


def perturbed_network(specs, shape, seed):
    net = nn.build_network(specs, shape, seed)
    rng = np.random.default_rng(seed + 1000)
    net.theta[...] += rng.normal(0, 0.1, net.n_params)
    x = rng.normal(size=(3,) + tuple(shape))
    return net, x


class TestGradients:
    @pytest.mark.parametrize("kind", sorted(LAYER_CASES))
    def test_layer_matches_finite_differences(self, kind):
        specs, shape = LAYER_CASES[kind]
        for seed in range(5):
            net, x = perturbed_network(specs, shape, seed)
            e_theta, e_input = network_gradient_errors(net, x, seed=seed)
            assert e_theta < 1e-4 and e_input < 1e-4, (kind, seed, e_theta, e_input)

    @pytest.mark.parametrize("name", ["lstm-predictor", "cnn-predictor", "lstm-ae"])
    def test_preset_chains(self, name):
        net, x = perturbed_network(nn.preset(name, (4, 5), bottleneck=3), (4, 5), 7)
        e_theta, e_input = network_gradient_errors(net, x, seed=7)
        assert e_theta < 1e-4 and e_input < 1e-4

    def test_zero_output_gradient_gives_zero_parameter_gradient(self):
        net, x = perturbed_network(nn.preset("lstm-predictor", (4, 5)), (4, 5), 0)
        out = net.forward(x)
        assert not net.backward(np.zeros_like(out)).any()

    def test_dense_sigmoid_bce_hand_gradient(self):
        """d BCE / dW = (p - y) x for a single example."""
        net = nn.build_network([nn.Dense(1), nn.Sigmoid()], (4,), 0)
        x = np.array([[0.3, -1.0, 2.0, 0.5]])
        p = net.forward(x)
        for y in (0.0, 1.0):
            net.forward(x)
            _, g = nn.bce_loss(p, [y])
            grad = net.backward(g)
            assert_allclose(grad[:4], (p[0, 0] - y) * x[0], rtol=1e-9)
            assert_allclose(grad[4], p[0, 0] - y, rtol=1e-9)


class TestForward:
    def test_dense_parameter_count(self):
        assert nn.build_network([nn.Dense(1), nn.Sigmoid()], (4,), 0).n_params == 5

    def test_same_seed_identical_theta(self):
        a = nn.build_network(nn.preset("lstm-ae", (5, 13)), (5, 13), 3)
        b = nn.build_network(nn.preset("lstm-ae", (5, 13)), (5, 13), 3)
        assert_array_equal(a.theta, b.theta)

    def test_lstm_ae_chain_ends_with_input_width_and_sigmoid(self):
        specs = nn.preset("lstm-ae", (5, 13))
        assert [str(s) for s in specs[-2:]] == ["Conv1D(13, 1)", "Sigmoid"]
        net = nn.build_network(specs, (5, 13), 0)
        assert net.output_shape == (5, 13)

    def test_glorot_bounds_and_forget_bias(self):
        net = nn.build_network([nn.LSTM(4)], (3, 6), 0)
        lstm = net.layers[0]
        H = 4
        assert_array_equal(lstm.b[H:2 * H], 1.0)
        assert not lstm.b[:H].any() and not lstm.b[2 * H:].any()
        dense = nn.build_network([nn.Dense(7)], (5,), 0).layers[0]
        assert np.abs(dense.W).max() <= np.sqrt(6.0 / 12) + 1e-12

    def test_conv_identity(self, rng):
        net = nn.build_network([nn.Conv1D(5, 1)], (4, 5), 0)
        conv = net.layers[0]
        conv.W[...] = np.eye(5)
        conv.b[...] = 0.0
        x = rng.random((3, 4, 5))
        assert_allclose(net.forward(x), x)

    def test_zero_dense_sigmoid_is_half(self, rng):
        net = nn.build_network([nn.Dense(3), nn.Sigmoid()], (4,), 0)
        net.theta[...] = 0.0
        assert_array_equal(net.forward(rng.normal(size=(6, 4))), 0.5)

    def test_zero_lstm_is_zero(self, rng):
        for spec in (nn.LSTM(3), nn.BiLSTM(3)):
            net = nn.build_network([spec], (4, 5), 0)
            net.theta[...] = 0.0
            assert_array_equal(net.forward(rng.normal(size=(2, 4, 5))), 0.0)

    def test_forward_is_pure(self, rng):
        net = nn.build_network(nn.preset("lstm-ae", (4, 13)), (4, 13), 1)
        x = rng.random((7, 4, 13))
        assert_array_equal(net.forward(x), net.forward(x))

    def test_bilstm_reaches_future_inputs(self, rng):
        net, x = perturbed_network([nn.BiLSTM(3)], (5, 4), 2)
        base = net.forward(x)
        for t in range(4):
            x2 = x.copy()
            x2[:, t + 1:] += 0.5
            assert np.abs(net.forward(x2)[:, t] - base[:, t]).max() > 1e-6
        # the unidirectional LSTM is causal
        net, x = perturbed_network([nn.LSTM(3)], (5, 4), 2)
        base = net.forward(x)
        x2 = x.copy()
        x2[:, 3:] += 0.5
        assert_array_equal(net.forward(x2)[:, :3], base[:, :3])

    def test_lstm_predictor_fits_separable_toy(self, rng):
        X = rng.random((600, 4, 5))
        score = X[:, :, 0].mean(axis=1) - 0.5
        keep = np.abs(score) > 0.1
        X, y = X[keep], (score[keep] > 0).astype(float)
        net = nn.build_network(nn.lstm_predictor_specs(), (4, 5), 0)
        trace = nn.fit(net, X, y, "bce", nn.TrainingConfig(epochs=50, learning_rate=0.01))
        assert trace[-1] < 0.1

    def test_serialization_round_trip(self, rng, tmp_path):
        net = nn.build_network(nn.preset("cnn-predictor", (3, 6)), (3, 6), 4)
        clone = nn.Network.from_dict(net.to_dict())
        x = rng.random((5, 3, 6))
        assert_array_equal(net.forward(x), clone.forward(x))
        net.dump_theta_csv(tmp_path / "theta.csv")
        assert len((tmp_path / "theta.csv").read_text().splitlines()) == net.n_params + 1


class TestErrors:
    def test_shape_mismatch_names_layer(self):
        with pytest.raises(ConfigurationError, match="layer 1"):
            nn.build_network([nn.Conv1D(4, 1), nn.Dense(2)], (3, 5), 0)

    @pytest.mark.parametrize("spec", [nn.Dense(0), nn.Conv1D(0, 1), nn.Conv1D(2, 0), nn.LSTM(0),
                                      nn.LeakyReLU(0.0), nn.LeakyReLU(1.5)])
    def test_invalid_spec(self, spec):
        shape = (5,) if spec.kind == "Dense" else (3, 5)
        with pytest.raises(ConfigurationError):
            nn.build_network([spec], shape, 0)

    def test_forward_rejects_wrong_shape_and_nonfinite(self):
        net = nn.build_network([nn.Dense(2)], (4,), 0)
        with pytest.raises(ShapeError):
            net.forward(np.zeros((2, 5)))
        with pytest.raises(NonFiniteError):
            net.forward(np.array([[0.0, np.nan, 0.0, 0.0]]))

    def test_backward_without_forward(self):
        net = nn.build_network([nn.Dense(2)], (4,), 0)
        with pytest.raises(ForwardStateError):
            net.backward(np.zeros((1, 2)))


class TestLosses:
    def test_bce_examples(self):
        assert_allclose(nn.bce_loss(np.full(4, 0.5), [0, 1, 1, 0])[0], np.log(2), rtol=1e-12)
        assert nn.bce_loss(np.array([0.0, 1.0]), [0, 1])[0] <= 1e-6
        a = nn.bce_loss([0.3], [1])[0]
        assert_allclose(nn.bce_loss([0.3, 0.9], [1, 1], sample_weights=[2, 0])[0], a, rtol=1e-12)

    def test_bce_errors(self):
        with pytest.raises(ShapeError):
            nn.bce_loss([0.5, 0.5], [1])
        with pytest.raises(ValueError):
            nn.bce_loss([0.5], [1], sample_weights=[-1])

    def test_mse_examples(self):
        assert nn.mse_loss(np.ones((2, 3)), np.ones((2, 3)))[0] == 0.0
        assert nn.mse_loss(np.zeros((2, 3)), np.ones((2, 3)))[0] == 1.0
        with pytest.raises(ShapeError):
            nn.mse_loss(np.zeros(3), np.zeros(4))

    def test_loss_gradients_match_finite_differences(self, rng):
        for _ in range(20):
            p = rng.uniform(0.05, 0.95, 6)
            y = rng.random(6) < 0.5
            w = rng.random(6)
            num = numeric_gradient(lambda q: nn.bce_loss(q, y, w)[0], p)
            assert_allclose(nn.bce_loss(p, y, w)[1], num, rtol=1e-6, atol=1e-10)
            out, tgt = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
            num = numeric_gradient(lambda o: nn.mse_loss(o, tgt)[0], out)
            assert_allclose(nn.mse_loss(out, tgt)[1], num, rtol=1e-6, atol=1e-10)


def scalar_adam(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


class TestAdam:
    def test_zero_gradient_leaves_theta(self):
        theta = np.arange(4.0)
        state = nn.AdamState.zeros(4)
        nn.adam_step(state, theta, np.zeros(4))
        assert_array_equal(theta, np.arange(4.0))
        assert state.step == 1

    def test_first_step_is_signed_learning_rate(self):
        theta = np.zeros(3)
        nn.adam_step(nn.AdamState.zeros(3, 0.01), theta, np.array([2.0, -0.5, 7.0]))
        assert_allclose(theta, [-0.01, 0.01, -0.01], rtol=1e-6)

    def test_matches_scalar_oracle(self, rng):
        grads = rng.normal(size=(10, 5))
        theta = rng.normal(size=5)
        expected = [scalar_adam(theta[j], grads[:, j]) for j in range(5)]
        state = nn.AdamState.zeros(5)
        for t, g in enumerate(grads, start=1):
            nn.adam_step(state, theta, g)
            assert state.step == t
        assert_allclose(theta, expected, rtol=0, atol=1e-12)

    def test_rejects_nonfinite_gradient(self):
        with pytest.raises(NonFiniteError, match="index 1"):
            nn.adam_step(nn.AdamState.zeros(2), np.zeros(2), np.array([0.0, np.inf]))


@given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_parameter_count_is_function_of_specs(channels, kernel, cells, seed):
    specs = [nn.Conv1D(channels, kernel), nn.LSTM(cells), nn.Flatten(), nn.Dense(1)]
    a = nn.build_network(specs, (4, 3), seed)
    b = nn.build_network(specs, (4, 3), seed + 1)
    expected = kernel * 3 * channels + channels + 4 * cells * (channels + cells + 1) + 4 * cells + 1
    assert a.n_params == b.n_params == expected


@given(st.integers(0, 2**31 - 1))
def test_outputs_finite_on_finite_input(seed):
    rng = np.random.default_rng(seed)
    net = nn.build_network(nn.preset("lstm-ae", (3, 4)), (3, 4), seed % 1000)
    out = net.forward(rng.normal(scale=50, size=(2, 3, 4)))
    assert np.isfinite(out).all()
