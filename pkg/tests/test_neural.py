import io
import math

import numpy as np
import pytest

from ndkf.neural import (
    AdamState,
    Dataset,
    DimensionMismatch,
    EmptyDataset,
    MalformedFile,
    MlpParams,
    MlpSpec,
    TrainConfig,
    init_params,
    load_params,
    mean_squared_loss,
    mlp_forward,
    mlp_jacobian,
    mlp_train,
    save_params,
)


def linear_net(w, b):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    spec = MlpSpec(w.shape[1], (), w.shape[0])
    return MlpParams(spec=spec, weights=[w], biases=[np.asarray(b, dtype=float)])


def one_hidden_unit_net():
    # 2 -> tanh(1 unit) -> 1, picks out the first input coordinate
    spec = MlpSpec(2, (1,), 1)
    return MlpParams(
        spec=spec,
        weights=[np.array([[1.0, 0.0]]), np.array([[1.0]])],
        biases=[np.zeros(1), np.zeros(1)],
    )


def linear_fit_dataset(n=500, seed=3):
    gen = np.random.Generator(np.random.PCG64(seed))
    a = np.array([[0.8, -0.3], [0.2, 0.5]])
    x = gen.uniform(-1, 1, size=(n, 2))
    return Dataset(x, x @ a.T), a


class TestForward:
    def test_zero_weights_returns_final_bias(self):
        spec = MlpSpec(3, (4,), 2)
        params = init_params(spec, seed=0)
        for w in params.weights:
            w[:] = 0.0
        params.biases[-1][:] = [0.25, -1.5]
        np.testing.assert_array_equal(mlp_forward(params, np.ones(3)), [0.25, -1.5])

    def test_identity_linear_layer(self):
        params = linear_net(np.eye(2), np.zeros(2))
        x = np.array([0.3, -2.0])
        np.testing.assert_array_equal(mlp_forward(params, x), x)

    def test_one_hidden_unit_hand_evaluation(self):
        out = mlp_forward(one_hidden_unit_net(), np.array([0.5, 7.0]))
        assert out[0] == pytest.approx(math.tanh(0.5), abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            mlp_forward(one_hidden_unit_net(), np.ones(3))

    def test_eval_forward_is_pure(self):
        params = init_params(MlpSpec(2, (8, 8), 1, use_batch_norm=True, dropout_rate=0.5), seed=1)
        x = np.array([0.1, 0.2])
        np.testing.assert_array_equal(mlp_forward(params, x), mlp_forward(params, x))


class TestTrain:
    def test_constant_targets(self):
        gen = np.random.Generator(np.random.PCG64(7))
        x = gen.uniform(-1, 1, size=(200, 2))
        data = Dataset(x, np.full((200, 1), 0.7))
        params = mlp_train(MlpSpec(2, (8,), 1), data, TrainConfig(epochs=1000, learning_rate=0.02, seed=2))
        preds = np.array([mlp_forward(params, xi)[0] for xi in x])
        assert np.max(np.abs(preds - 0.7)) < 1e-2

    def test_linear_map_fit(self):
        data, _ = linear_fit_dataset()
        params = mlp_train(MlpSpec(2, (32,), 2), data, TrainConfig(epochs=1500, learning_rate=0.01, seed=5))
        assert mean_squared_loss(params, data) < 1e-3

    def test_empty_dataset(self):
        empty = Dataset(np.empty((0, 2)), np.empty((0, 1)))
        with pytest.raises(EmptyDataset):
            mlp_train(MlpSpec(2, (4,), 1), empty, TrainConfig(epochs=10, seed=0))

    def test_shape_mismatch(self):
        data = Dataset(np.ones((5, 3)), np.ones((5, 1)))
        with pytest.raises(DimensionMismatch):
            mlp_train(MlpSpec(2, (4,), 1), data, TrainConfig(epochs=10, seed=0))

    def test_deterministic_given_seed(self):
        data, _ = linear_fit_dataset(n=50)
        cfg = TrainConfig(epochs=50, learning_rate=0.01, seed=9)
        spec = MlpSpec(2, (8,), 2, use_batch_norm=True, dropout_rate=0.1)
        p1 = mlp_train(spec, data, cfg)
        p2 = mlp_train(spec, data, cfg)
        for w1, w2 in zip(p1.weights, p2.weights):
            np.testing.assert_array_equal(w1, w2)
        for m1, m2 in zip(p1.bn_mean, p2.bn_mean):
            np.testing.assert_array_equal(m1, m2)

    def test_loss_strictly_below_initialization(self):
        data, _ = linear_fit_dataset(n=100)
        cfg = TrainConfig(epochs=200, learning_rate=0.01, seed=3)
        spec = MlpSpec(2, (16,), 2)
        trained = mlp_train(spec, data, cfg)
        # same init draw as mlp_train uses internally
        gen = np.random.Generator(np.random.PCG64(cfg.seed))
        initial = init_params(spec, seed=int(gen.integers(2**63)))
        assert mean_squared_loss(trained, data) < mean_squared_loss(initial, data)

    def test_smoothed_loss_nonincreasing(self):
        data, _ = linear_fit_dataset()
        history: list[float] = []
        mlp_train(MlpSpec(2, (32,), 2), data, TrainConfig(epochs=1500, learning_rate=0.01, seed=5), loss_history=history)
        windows = [np.mean(history[i : i + 50]) for i in range(0, 1500, 50)]
        for earlier, later in zip(windows, windows[1:]):
            assert later <= earlier + 1e-12

    def test_minibatch_training_runs(self):
        data, _ = linear_fit_dataset(n=100)
        cfg = TrainConfig(epochs=300, learning_rate=0.01, batch_size=32, seed=4)
        params = mlp_train(MlpSpec(2, (16,), 2), data, cfg)
        assert mean_squared_loss(params, data) < 0.05


class TestJacobian:
    def test_pure_linear_net(self):
        w = np.array([[1.0, 2.0, -0.5], [0.0, 3.0, 1.0]])
        params = linear_net(w, np.zeros(2))
        np.testing.assert_allclose(mlp_jacobian(params, np.array([0.4, -1.0, 2.0])), w, atol=1e-14)

    def test_one_hidden_unit_chain_rule(self):
        jac = mlp_jacobian(one_hidden_unit_net(), np.zeros(2))
        np.testing.assert_allclose(jac, [[1.0, 0.0]], atol=1e-14)

    @pytest.mark.parametrize(
        "spec",
        [
            MlpSpec(4, (128, 128, 128), 2, use_batch_norm=True, dropout_rate=0.2),
            MlpSpec(2, (32, 32), 1),
            MlpSpec(3, (5,), 4),
        ],
        ids=["dynamics-shape", "measurement-shape", "odd-shape"],
    )
    def test_analytic_matches_finite_differences(self, spec):
        params = init_params(spec, seed=13)
        gen = np.random.Generator(np.random.PCG64(29))
        if spec.use_batch_norm:
            for i in range(len(spec.hidden_layers)):
                params.bn_mean[i] = 0.2 * gen.normal(size=spec.hidden_layers[i])
                params.bn_var[i] = 0.5 + gen.random(spec.hidden_layers[i])
        for _ in range(10):
            x = gen.uniform(-2, 2, size=spec.input_dim)
            analytic = mlp_jacobian(params, x)
            numeric = mlp_jacobian(params, x, method="finite_diff")
            assert np.max(np.abs(analytic - numeric)) < 1e-4

    def test_requires_eval_mode(self):
        params = one_hidden_unit_net()
        params.mode = "train"
        with pytest.raises(ValueError):
            mlp_jacobian(params, np.zeros(2))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            mlp_jacobian(one_hidden_unit_net(), np.zeros(2), method="symbolic")


def test_adam_zero_gradient_leaves_parameters_unchanged():
    arrays = [np.array([1.0, -2.0]), np.array([[0.5]])]
    before = [a.copy() for a in arrays]
    adam = AdamState([a.shape for a in arrays])
    for _ in range(5):
        adam.step(arrays, [np.zeros_like(a) for a in arrays], lr=0.1)
    for a, b in zip(arrays, before):
        np.testing.assert_array_equal(a, b)


class TestSaveLoad:
    def test_roundtrip_fresh_net_bit_identical(self):
        params = init_params(MlpSpec(4, (128, 128, 128), 2, use_batch_norm=True, dropout_rate=0.2), seed=77)
        buf = io.StringIO()
        save_params(params, buf)
        buf.seek(0)
        loaded = load_params(buf)
        assert loaded.spec == params.spec
        for a, b in zip(params.weights + params.biases, loaded.weights + loaded.biases):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(params.bn_mean + params.bn_var, loaded.bn_mean + loaded.bn_var):
            np.testing.assert_array_equal(a, b)

    def test_roundtrip_trained_net_identical_outputs(self, tmp_path):
        data, _ = linear_fit_dataset(n=100)
        params = mlp_train(MlpSpec(2, (16,), 2), data, TrainConfig(epochs=100, learning_rate=0.01, seed=1))
        path = tmp_path / "net.mlp"
        save_params(params, path)
        loaded = load_params(path)
        gen = np.random.Generator(np.random.PCG64(55))
        for _ in range(100):
            x = gen.uniform(-3, 3, size=2)
            np.testing.assert_array_equal(mlp_forward(params, x), mlp_forward(loaded, x))

    def test_bad_magic(self):
        with pytest.raises(MalformedFile):
            load_params(io.StringIO("NOT-A-NET v9\n"))

    def test_truncated_file(self):
        buf = io.StringIO()
        save_params(init_params(MlpSpec(2, (4,), 1), seed=0), buf)
        text = buf.getvalue()
        with pytest.raises(MalformedFile):
            load_params(io.StringIO(text[: len(text) // 2]))

    def test_nonfinite_value(self):
        buf = io.StringIO()
        save_params(init_params(MlpSpec(2, (4,), 1), seed=0), buf)
        text = buf.getvalue()
        assert "\n0 0 0 0\n" in text  # the zero bias row of the hidden layer
        with pytest.raises(MalformedFile):
            load_params(io.StringIO(text.replace("\n0 0 0 0\n", "\nnan 0 0 0\n", 1)))

    def test_empty_file(self):
        with pytest.raises(MalformedFile):
            load_params(io.StringIO(""))
