import numpy as np
import pytest

from crash_augmentor.errors import DimensionMismatchError, MissingCacheError, NonFiniteGradientError
from crash_augmentor.nn_core import (
    Activation,
    AdamState,
    DenseLayer,
    DenseNetwork,
    adam_step,
    bce_gradient,
    bce_loss,
    dump_network,
    gradient_check,
    numerical_gradients,
    parse_network,
    relative_error,
)


def _two_branch(rng):
    return DenseNetwork(
        input_widths=[2, 1],
        branches=[
            [DenseLayer.glorot(2, 3, Activation.ELU, rng)],
            [DenseLayer.glorot(1, 3, Activation.ELU, rng)],
        ],
        trunk=[
            DenseLayer.glorot(6, 4, Activation.ELU, rng),
            DenseLayer.glorot(4, 1, Activation.SIGMOID, rng),
        ],
    )


class TestDenseLayer:
    def test_glorot_bounds_and_zero_bias(self):
        rng = np.random.default_rng(0)
        layer = DenseLayer.glorot(100, 50, Activation.ELU, rng)
        limit = np.sqrt(6.0 / 150)
        assert layer.weights.shape == (50, 100)
        assert np.all(np.abs(layer.weights) <= limit)
        np.testing.assert_array_equal(layer.biases, 0.0)

    def test_elu_and_relu(self):
        layer = DenseLayer(weights=[[1.0]], biases=[0.0], activation=Activation.ELU)
        _, a = layer.forward(np.array([[-1.0], [2.0]]))
        np.testing.assert_allclose(a[:, 0], [np.expm1(-1.0), 2.0])
        relu = DenseLayer(weights=[[1.0]], biases=[0.0], activation=Activation.RELU)
        _, a = relu.forward(np.array([[-1.0], [2.0]]))
        np.testing.assert_array_equal(a[:, 0], [0.0, 2.0])

    def test_elu_at_minus_one(self):
        layer = DenseLayer(weights=[[1.0]], biases=[0.0], activation=Activation.ELU)
        assert layer.forward(np.array([[-1.0]]))[1][0, 0] == pytest.approx(-0.63212, abs=1e-5)

    def test_zero_weight_sigmoid_is_one_half(self):
        layer = DenseLayer(weights=np.zeros((1, 3)), biases=[0.0], activation=Activation.SIGMOID)
        _, a = layer.forward(np.random.default_rng(0).normal(size=(4, 3)))
        np.testing.assert_array_equal(a, 0.5)


class TestDenseNetwork:
    def test_chain_mismatch_names_layer(self):
        rng = np.random.default_rng(0)
        with pytest.raises(DimensionMismatchError, match="trunk.layer\\[1\\]"):
            DenseNetwork.sequential([
                DenseLayer.glorot(3, 4, Activation.ELU, rng),
                DenseLayer.glorot(5, 1, Activation.SIGMOID, rng),
            ])

    def test_wrong_input_width(self):
        net = _two_branch(np.random.default_rng(1))
        with pytest.raises(DimensionMismatchError):
            net.forward([np.zeros((4, 3)), np.zeros((4, 1))])

    def test_wrong_arity(self):
        net = _two_branch(np.random.default_rng(1))
        with pytest.raises(DimensionMismatchError):
            net.forward(np.zeros((4, 2)))

    def test_single_sample_matches_batch_row(self):
        net = _two_branch(np.random.default_rng(2))
        x = np.array([[0.3, -0.2], [1.0, 0.5]])
        y = np.array([[1.0], [3.0]])
        batch = net.forward([x, y])
        single = net.forward([x[1], y[1]])
        assert single.shape == (1,)
        np.testing.assert_allclose(single, batch[1], rtol=0, atol=1e-12)

    def test_branches_match_manual_concatenation(self):
        rng = np.random.default_rng(12)
        net = _two_branch(rng)
        x, y = rng.normal(size=(6, 2)), rng.normal(size=(6, 1))
        left = net.branches[0][0].forward(x)[1]
        right = net.branches[1][0].forward(y)[1]
        trunk = DenseNetwork.sequential(net.trunk)
        np.testing.assert_allclose(
            net.forward([x, y]), trunk.forward(np.hstack([left, right])), rtol=0, atol=1e-14
        )

    def test_backward_without_cache(self):
        net = _two_branch(np.random.default_rng(3))
        with pytest.raises(MissingCacheError):
            net.backward(None, np.ones((1, 1)))

    def test_parameter_order_is_stable(self):
        net = _two_branch(np.random.default_rng(4))
        shapes = [p.shape for p in net.parameters()]
        assert shapes == [(3, 2), (3,), (3, 1), (3,), (4, 6), (4,), (1, 4), (1,)]
        assert net.parameter_count == sum(int(np.prod(s)) for s in shapes)


class TestGradients:
    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        net = _two_branch(rng)
        inputs = [rng.normal(size=(5, 2)), rng.normal(size=(5, 1))]
        assert gradient_check(net, inputs, h=1e-5) < 1e-4

    def test_sequential_identity_output(self):
        rng = np.random.default_rng(6)
        net = DenseNetwork.sequential([
            DenseLayer.glorot(3, 6, Activation.ELU, rng),
            DenseLayer.glorot(6, 2, Activation.IDENTITY, rng),
        ])
        x = rng.normal(size=(4, 3))
        upstream = rng.normal(size=(4, 2))
        assert gradient_check(net, x, upstream=upstream) < 1e-4

    def test_random_architectures(self):
        rng = np.random.default_rng(11)
        activations = [Activation.ELU, Activation.RELU, Activation.SIGMOID]
        for _ in range(100):
            widths = rng.integers(1, 6, size=int(rng.integers(2, 7)))
            net = DenseNetwork.sequential([
                DenseLayer.glorot(int(a), int(b), activations[int(rng.integers(3))], rng)
                for a, b in zip(widths[:-1], widths[1:])
            ])
            x = rng.normal(size=(3, int(widths[0])))
            assert gradient_check(net, x) < 1e-4

    def test_output_activation_can_be_bypassed(self):
        rng = np.random.default_rng(13)
        layers = [DenseLayer.glorot(3, 5, Activation.ELU, rng), DenseLayer.glorot(5, 2, Activation.RELU, rng)]
        relu_net = DenseNetwork.sequential(layers)
        linear_net = DenseNetwork.sequential([
            layers[0], DenseLayer(layers[1].weights, layers[1].biases, Activation.IDENTITY),
        ])
        x, upstream = rng.normal(size=(4, 3)), rng.normal(size=(4, 2))
        _, relu_cache = relu_net.forward_cached(x)
        _, linear_cache = linear_net.forward_cached(x)
        bypassed = relu_net.backward(relu_cache, upstream, through_output_activation=False)
        expected = linear_net.backward(linear_cache, upstream)
        for a, b in zip(bypassed.parameters + bypassed.inputs, expected.parameters + expected.inputs):
            np.testing.assert_array_equal(a, b)

    def test_corrupted_gradient_is_detected(self):
        rng = np.random.default_rng(7)
        net = _two_branch(rng)
        inputs = [rng.normal(size=(5, 2)), rng.normal(size=(5, 1))]
        _, cache = net.forward_cached(inputs)
        upstream = np.ones((5, 1))
        analytic = net.backward(cache, upstream).parameters
        numeric = numerical_gradients(net, inputs, upstream, 1e-5)
        corrupted = [2.0 * g for g in analytic]
        assert relative_error(corrupted, numeric) > 0.5

    def test_input_gradients(self):
        rng = np.random.default_rng(8)
        net = _two_branch(rng)
        x = rng.normal(size=(1, 2))
        y = np.array([[2.0]])
        _, cache = net.forward_cached([x, y])
        grads = net.backward(cache, np.ones((1, 1)))
        h = 1e-6
        for j in range(2):
            shift = np.zeros_like(x)
            shift[0, j] = h
            numeric = (net.forward([x + shift, y]) - net.forward([x - shift, y]))[0, 0] / (2 * h)
            assert grads.inputs[0][0, j] == pytest.approx(numeric, rel=1e-5, abs=1e-9)
        assert grads.inputs[1].shape == (1, 1)

    def test_step_bounds(self):
        net = _two_branch(np.random.default_rng(9))
        with pytest.raises(ValueError):
            gradient_check(net, [np.zeros((1, 2)), np.zeros((1, 1))], h=1e-2)


class TestLossAndAdam:
    def test_bce_is_clamped(self):
        assert np.isfinite(bce_loss(0.0, 1.0))
        assert bce_loss(0.0, 1.0) == pytest.approx(-np.log(1e-7))
        assert bce_loss(0.5, 1.0) == pytest.approx(np.log(2.0))

    def test_bce_gradient(self):
        assert bce_gradient(0.25, 1.0) == pytest.approx((0.25 - 1.0) / (0.25 * 0.75))

    def test_first_adam_step_moves_by_learning_rate(self):
        params = [np.array([1.0, -1.0])]
        state = AdamState(learning_rate=0.001)
        adam_step(params, [np.array([2.0, -0.5])], state)
        np.testing.assert_allclose(params[0], [0.999, -0.999], atol=1e-10)
        assert state.step_count == 1

    def test_inverse_time_decay(self):
        state = AdamState(learning_rate=0.01, decay=0.5, step_count=2)
        assert state.effective_learning_rate == pytest.approx(0.005)

    def test_decay_follows_explicit_step(self):
        params = [np.array([1.0])]
        state = AdamState(learning_rate=0.001, decay=0.001)
        adam_step(params, [np.array([1.0])], state, decay_step=1000)
        # первый шаг Adam сдвигает на lr, здесь lr / (1 + 0.001 * 1000)
        np.testing.assert_allclose(params[0], [1.0 - 0.0005], atol=1e-10)
        assert state.step_count == 1

    def test_non_finite_gradient_leaves_parameters(self):
        params = [np.array([1.0, 2.0])]
        state = AdamState()
        with pytest.raises(NonFiniteGradientError):
            adam_step(params, [np.array([np.nan, 0.0])], state)
        np.testing.assert_array_equal(params[0], [1.0, 2.0])
        assert state.step_count == 0


class TestSerialization:
    def test_dump_and_parse_preserve_outputs(self):
        rng = np.random.default_rng(10)
        net = _two_branch(rng)
        restored = parse_network(dump_network(net))
        inputs = [rng.normal(size=(3, 2)), rng.normal(size=(3, 1))]
        np.testing.assert_array_equal(restored.forward(inputs), net.forward(inputs))
