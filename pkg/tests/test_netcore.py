import numpy as np
import pytest

from pricelab.netcore import (
    AdamState,
    DivergenceError,
    LayerParams,
    MlpParams,
    OutputInit,
    adam_step,
    adam_update,
    copy_mlp,
    init_mlp,
    max_abs_difference,
    mlp_backward,
    mlp_forward,
    orthogonal,
    polyak_average,
)


def _network(rng, shape=(3, 8, 8, 2)):
    return init_mlp(shape, rng, OutputInit(kind="uniform", gain=1.0, biases=(0.1, -0.2)))


def _flat(params: MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.arrays()])


def test_forward_shapes(rng):
    params = _network(rng)
    assert params.shape == (3, 8, 8, 2)
    outputs, _ = mlp_forward(params, rng.standard_normal((5, 3)))
    assert outputs.shape == (5, 2)
    single, _ = mlp_forward(params, rng.standard_normal(3))
    assert single.shape == (1, 2)


def test_forward_rejects_wrong_input_size(rng):
    with pytest.raises(ValueError):
        mlp_forward(_network(rng), np.zeros((2, 4)))


def test_incompatible_layers_are_rejected():
    with pytest.raises(ValueError):
        MlpParams(
            layers=[
                LayerParams(np.zeros((4, 3)), np.zeros(4)),
                LayerParams(np.zeros((2, 5)), np.zeros(2)),
            ]
        )


def test_backward_matches_finite_differences(rng):
    params = _network(rng)
    inputs = rng.standard_normal((6, 3))
    weights = rng.standard_normal((6, 2))

    def scalar(p: MlpParams) -> float:
        outputs, _ = mlp_forward(p, inputs)
        return float(np.sum(weights * outputs))

    _, cache = mlp_forward(params, inputs)
    gradients, input_gradient = mlp_backward(params, cache, weights)
    analytic = _flat(gradients)

    h = 1e-6
    numeric = []
    for array in params.arrays():
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            up = scalar(params)
            array[index] = original - h
            down = scalar(params)
            array[index] = original
            numeric.append((up - down) / (2 * h))
    numeric_array = np.array(numeric)
    error = np.linalg.norm(numeric_array - analytic) / np.linalg.norm(analytic)
    assert error <= 1e-4

    # gradient with respect to the inputs, for the first sample
    for j in range(3):
        shifted_up, shifted_down = inputs.copy(), inputs.copy()
        shifted_up[0, j] += h
        shifted_down[0, j] -= h
        up = float(np.sum(weights * mlp_forward(params, shifted_up)[0]))
        down = float(np.sum(weights * mlp_forward(params, shifted_down)[0]))
        assert input_gradient[0, j] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-8)


def test_backward_rejects_stale_cache(rng):
    params = _network(rng)
    other = copy_mlp(params)
    _, cache = mlp_forward(params, np.zeros(3))
    with pytest.raises(ValueError):
        mlp_backward(other, cache, np.ones((1, 2)))


def test_orthogonal_rows_and_columns(rng):
    tall = orthogonal(8, 3, rng)
    np.testing.assert_allclose(tall.T @ tall, np.eye(3), atol=1e-12)
    wide = orthogonal(3, 8, rng, gain=2.0)
    np.testing.assert_allclose(wide @ wide.T, 4.0 * np.eye(3), atol=1e-12)


def test_init_mlp_output_layer(rng):
    params = init_mlp((2, 8, 8, 1), rng, OutputInit(kind="orthogonal", gain=0.01, biases=(10.0,)))
    np.testing.assert_allclose(params.layers[-1].biases, [10.0])
    assert np.linalg.norm(params.layers[-1].weights) == pytest.approx(0.01)
    assert all(np.all(layer.biases == 0.0) for layer in params.layers[:-1])


def test_init_mlp_rejects_wrong_bias_count(rng):
    with pytest.raises(ValueError):
        init_mlp((2, 4, 1), rng, OutputInit(kind="uniform", gain=0.1, biases=(0.0, 1.0)))
    with pytest.raises(ValueError):
        OutputInit(kind="gaussian", gain=1.0, biases=(0.0,))


def test_adam_first_step_moves_by_step_size():
    state = AdamState.for_arrays([np.zeros(3)])
    (updated,), new_state = adam_update(
        state, [np.zeros(3)], [np.array([2.0, -0.5, 0.0])], step_size=0.1
    )
    np.testing.assert_allclose(updated, [-0.1, 0.1, 0.0], atol=1e-6)
    assert new_state.step == 1
    assert state.step == 0


def test_adam_minimizes_a_quadratic():
    x = np.array([3.0, -2.0])
    state = AdamState.for_arrays([x])
    for _ in range(2000):
        (x,), state = adam_update(state, [x], [2.0 * x], step_size=0.01)
    np.testing.assert_allclose(x, 0.0, atol=0.05)


def test_adam_rejects_non_finite_gradients():
    state = AdamState.for_arrays([np.zeros(2)])
    with pytest.raises(DivergenceError):
        adam_update(state, [np.zeros(2)], [np.array([np.nan, 0.0])], step_size=0.1)


def test_adam_step_on_network_preserves_shape(rng):
    params = _network(rng)
    gradients = params.zeros_like()
    updated, state = adam_step(AdamState.for_mlp(params), params, gradients, 0.1)
    assert updated.shape == params.shape
    assert max_abs_difference(updated, params) == 0.0
    assert state.step == 1


def test_polyak_average(rng):
    target = _network(rng)
    online = _network(rng)
    averaged = polyak_average(target, online, 0.25)
    for t, o, a in zip(target.arrays(), online.arrays(), averaged.arrays()):
        np.testing.assert_allclose(a, 0.75 * t + 0.25 * o)
    assert max_abs_difference(polyak_average(target, online, 0.0), target) == 0.0


def test_copy_is_independent(rng):
    params = _network(rng)
    duplicate = copy_mlp(params)
    duplicate.layers[0].weights[0, 0] += 1.0
    assert max_abs_difference(params, duplicate) == pytest.approx(1.0)
