import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from janossy_bounds.numerics import (
    Mlp,
    NonFiniteError,
    OptimizerState,
    affine_mlp,
    finite_difference_gradient,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_gradient,
    mlp_input_jacobian,
    nullspace,
    optimizer_step,
)


def test_init_mlp_is_deterministic_and_shaped():
    first = init_mlp([3, 5, 2], seed=4)
    second = init_mlp([3, 5, 2], seed=4)
    assert first.layer_widths == [3, 5, 2]
    assert first.parameter_count == 3 * 5 + 5 + 5 * 2 + 2
    for a, b in zip(first.parameters(), second.parameters()):
        assert np.array_equal(a, b)


def test_mlp_rejects_inconsistent_layers():
    with pytest.raises(ValueError):
        Mlp((np.ones((2, 3)), np.ones((4, 3))), (np.zeros(2), np.zeros(4)))
    with pytest.raises(ValueError):
        Mlp((np.ones((2, 3)),), (np.zeros(2),), activation="sigmoid")


def test_mlp_rejects_non_finite_weights():
    with pytest.raises(NonFiniteError):
        Mlp((np.array([[np.nan]]),), (np.zeros(1),))


def test_single_and_batched_forward_agree():
    net = init_mlp([2, 6, 3], seed=1)
    batch = np.random.default_rng(0).uniform(size=(5, 2))
    stacked = mlp_forward(net, batch)
    for row, expected in zip(batch, stacked):
        assert np.allclose(mlp_forward(net, row), expected, atol=1e-14)


@pytest.mark.parametrize("activation", ["tanh", "relu", "identity"])
def test_backward_input_gradient_matches_finite_differences(activation):
    net = init_mlp([3, 7, 2], seed=11, activation=activation)
    x = np.array([0.31, -0.42, 0.77])
    cotangent = np.array([0.6, -1.3])

    _, input_grad = mlp_backward(net, x, cotangent)
    numeric = finite_difference_gradient(lambda z: cotangent @ mlp_forward(net, z), x)

    assert np.allclose(input_grad, numeric, atol=1e-7)


def test_backward_parameter_gradient_matches_finite_differences():
    net = init_mlp([2, 4, 1], seed=3)
    batch = np.random.default_rng(5).uniform(size=(6, 2))
    cotangent = np.random.default_rng(6).normal(size=(6, 1))
    grads, _ = mlp_backward(net, batch, cotangent)

    params = net.parameters()
    for slot in (0, 1, 2):
        def loss(values, slot=slot):
            trial = list(params)
            trial[slot] = values
            return float((cotangent * mlp_forward(net.with_parameters(trial), batch)).sum())

        assert np.allclose(grads[slot], finite_difference_gradient(loss, params[slot]), atol=1e-7)


def test_input_jacobian_agrees_with_per_output_gradients():
    net = init_mlp([4, 5, 3], seed=8)
    x = np.array([0.1, 0.9, -0.3, 0.5])
    _, per_output = mlp_gradient(net, x)
    assert np.allclose(mlp_input_jacobian(net, x), per_output, atol=1e-14)


def test_affine_mlp_is_affine():
    net = affine_mlp([[1.0, 2.0]], [0.5])
    assert net.is_affine
    assert mlp_forward(net, np.array([1.0, 1.0]))[0] == 3.5


def test_mlp_dict_round_trip_preserves_outputs():
    net = init_mlp([2, 3, 1], seed=2, activation="relu")
    restored = Mlp.from_dict(net.to_dict())
    x = np.array([0.2, 0.7])
    assert restored.activation == "relu"
    assert np.array_equal(mlp_forward(restored, x), mlp_forward(net, x))


def test_sgd_step_is_plain_descent():
    state = OptimizerState(method="sgd", step_size=0.1)
    updated = optimizer_step(state, [np.array([1.0, 2.0])], [np.array([0.5, -1.0])])
    assert np.allclose(updated[0], [0.95, 2.1])
    assert state.step_count == 1


def test_first_adam_step_moves_by_step_size():
    state = OptimizerState(method="adam", step_size=0.01)
    updated = optimizer_step(state, [np.array([0.0, 0.0])], [np.array([3.0, -0.2])])
    assert np.allclose(updated[0], [-0.01, 0.01], atol=1e-8)


def test_optimizer_refuses_non_finite_gradient_without_advancing():
    state = OptimizerState(method="adam")
    with pytest.raises(NonFiniteError):
        optimizer_step(state, [np.zeros(2)], [np.array([np.inf, 0.0])])
    assert state.step_count == 0
    assert state.first_moments is None


def test_unknown_optimizer_rejected():
    with pytest.raises(ValueError):
        OptimizerState(method="rmsprop")


def test_nullspace_of_single_row():
    basis = nullspace([[1.0, 2.0, 3.0]])
    assert basis.shape == (3, 2)
    assert np.allclose(np.array([[1.0, 2.0, 3.0]]) @ basis, 0.0)


def test_nullspace_of_full_rank_square_is_empty():
    basis = nullspace([[2.0, 1.0], [1.0, 3.0]])
    assert basis.shape == (2, 0)


def test_nullspace_detects_repeated_rows():
    basis = nullspace([[1.0, -1.0], [1.0, -1.0], [2.0, -2.0]])
    assert basis.shape == (2, 1)
    assert np.allclose(basis[:, 0] / basis[0, 0], [1.0, 1.0])


@settings(max_examples=60, deadline=None)
@given(
    rows=st.integers(min_value=1, max_value=5),
    extra=st.integers(min_value=1, max_value=4),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_nullspace_vectors_are_annihilated(rows, extra, seed):
    matrix = np.random.default_rng(seed).normal(size=(rows, rows + extra))
    basis = nullspace(matrix)
    assert basis.shape[1] >= extra
    assert np.abs(matrix @ basis).max() <= 1e-9 * max(1.0, np.abs(basis).max())


def test_forward_on_a_single_affine_layer():
    net = Mlp((np.array([[2.0]]),), (np.array([1.0]),))
    assert np.array_equal(mlp_forward(net, np.array([3.0])), [7.0])


def test_identity_layers_compose_to_identity():
    eye = np.eye(3)
    net = Mlp((eye, eye), (np.zeros(3), np.zeros(3)), activation="identity")
    x = np.array([0.3, -1.2, 4.5])
    assert np.array_equal(mlp_forward(net, x), x)


def test_repeated_forward_is_bitwise_identical():
    net = init_mlp([3, 16, 16, 2], seed=9)
    batch = np.random.default_rng(1).normal(size=(32, 3))
    first = mlp_forward(net, batch)
    for _ in range(5):
        assert np.array_equal(mlp_forward(net, batch), first)


def test_finite_difference_examples():
    assert finite_difference_gradient(lambda x: x[0] ** 2, [3.0])[0] == pytest.approx(6.0, abs=1e-6)
    assert np.allclose(finite_difference_gradient(lambda x: 4.2, np.array([0.5, -1.0])), 0.0)
    x = np.array([0.5, -2.0, 1.5])
    assert np.allclose(finite_difference_gradient(lambda z: float(np.sum(z**2)), x), 2 * x, atol=1e-6)


@pytest.mark.parametrize("method", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters_unchanged(method):
    params = [np.array([[0.4, -0.1]]), np.array([0.25])]
    state = OptimizerState(method=method, step_size=0.1)
    updated = optimizer_step(state, params, [np.zeros((1, 2)), np.zeros(1)])
    for before, after in zip(params, updated):
        assert np.array_equal(before, after)


def relative_error(analytic, numeric):
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-3))


def test_gradients_match_central_differences_on_random_networks():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        depth = int(rng.integers(1, 4))
        widths = [int(w) for w in rng.integers(1, 17, size=depth + 1)]
        net = init_mlp(widths, seed=seed)
        x = rng.uniform(-1.0, 1.0, size=widths[0])
        cotangent = rng.normal(size=widths[-1])

        grads, input_grad = mlp_backward(net, x, cotangent)
        worst = max(worst, relative_error(input_grad, finite_difference_gradient(lambda z: cotangent @ mlp_forward(net, z), x)))

        params = net.parameters()
        for slot, param in enumerate(params):
            def loss(values, slot=slot):
                trial = list(params)
                trial[slot] = values
                return float(cotangent @ mlp_forward(net.with_parameters(trial), x))

            worst = max(worst, relative_error(grads[slot], finite_difference_gradient(loss, param)))

    assert worst <= 1e-5
