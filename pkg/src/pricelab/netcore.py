"""
Dense feedforward networks with leaky-ReLU hidden layers, exact reverse-mode
gradients and an Adam optimizer.

Inputs are processed in batches: a 2-D input holds one sample per row, a
1-D input is treated as a single sample. Weights have shape (out, in).
"""

import logging
from typing import Iterator, List, Sequence, Tuple

import attr
import numpy as np

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_LEAKY_SLOPE = 0.01


class DivergenceError(RuntimeError):
    """Exception raised for non-finite network outputs, losses or gradients."""


@attr.s(auto_attribs=True)
class LayerParams:
    weights: np.ndarray
    biases: np.ndarray

    def __attrs_post_init__(self) -> None:
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ValueError(
                f"bias length must equal the number of weight rows "
                f"(weights: {self.weights.shape}, biases: {self.biases.shape})"
            )

    @property
    def n_inputs(self) -> int:
        return int(self.weights.shape[1])

    @property
    def n_outputs(self) -> int:
        return int(self.weights.shape[0])


@attr.s(auto_attribs=True)
class MlpParams:
    """
    Parameters of a multilayer perceptron: affine layers with a leaky ReLU
    after every layer but the last one.
    """

    layers: List[LayerParams]
    leaky_slope: float = DEFAULT_LEAKY_SLOPE

    def __attrs_post_init__(self) -> None:
        for previous, following in zip(self.layers, self.layers[1:]):
            if previous.n_outputs != following.n_inputs:
                raise ValueError(
                    f"incompatible layer dimensions: {previous.n_outputs} -> {following.n_inputs}"
                )

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.layers[0].n_inputs,) + tuple(layer.n_outputs for layer in self.layers)

    def arrays(self) -> Iterator[np.ndarray]:
        """Iterates over weights and biases, layer by layer."""
        for layer in self.layers:
            yield layer.weights
            yield layer.biases

    def zeros_like(self) -> "MlpParams":
        return MlpParams(
            layers=[
                LayerParams(np.zeros_like(layer.weights), np.zeros_like(layer.biases))
                for layer in self.layers
            ],
            leaky_slope=self.leaky_slope,
        )


@attr.s(auto_attribs=True, frozen=True)
class ForwardCache:
    """Activations recorded by mlp_forward, needed by mlp_backward."""

    params_id: int
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]


@attr.s(auto_attribs=True, frozen=True)
class OutputInit:
    """
    Initialization of the output layer.

    Attributes:
        kind: "uniform" or "orthogonal".
        gain: scale of the weights.
        biases: output biases, one per output unit.
    """

    kind: str
    gain: float
    biases: Tuple[float, ...]

    def __attrs_post_init__(self) -> None:
        if self.kind not in ["uniform", "orthogonal"]:
            raise ValueError('kind must be equal to "uniform" or "orthogonal"')


def copy_mlp(params: MlpParams) -> MlpParams:
    return MlpParams(
        layers=[
            LayerParams(layer.weights.copy(), layer.biases.copy())
            for layer in params.layers
        ],
        leaky_slope=params.leaky_slope,
    )


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def mlp_forward(
    params: MlpParams, inputs: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Evaluates the network.

    Returns:
        Tuple: (outputs with shape (batch, n_outputs), cache for mlp_backward).
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if x.shape[1] != params.layers[0].n_inputs:
        raise ValueError(
            f"input size {x.shape[1]} does not match the first layer ({params.layers[0].n_inputs})"
        )

    layer_inputs: List[np.ndarray] = []
    pre_activations: List[np.ndarray] = []
    last = len(params.layers) - 1
    for index, layer in enumerate(params.layers):
        layer_inputs.append(x)
        z = x @ layer.weights.T + layer.biases
        pre_activations.append(z)
        x = z if index == last else _leaky_relu(z, params.leaky_slope)

    return x, ForwardCache(id(params), layer_inputs, pre_activations)


def mlp_backward(
    params: MlpParams, cache: ForwardCache, output_gradient: np.ndarray
) -> Tuple[MlpParams, np.ndarray]:
    """
    Reverse-mode gradients of a scalar whose gradient with respect to the
    network outputs is given. Gradients are summed over the batch.

    Returns:
        Tuple: (parameter gradients, gradient with respect to the inputs).
    """
    if cache.params_id != id(params) or len(cache.inputs) != len(params.layers):
        raise ValueError("stale forward cache: it was computed for another network")

    delta = np.atleast_2d(np.asarray(output_gradient, dtype=np.float64))
    gradients: List[LayerParams] = []
    last = len(params.layers) - 1
    for index in range(last, -1, -1):
        layer = params.layers[index]
        if index != last:
            z = cache.pre_activations[index]
            delta = delta * np.where(z > 0, 1.0, params.leaky_slope)
        gradients.append(
            LayerParams(delta.T @ cache.inputs[index], delta.sum(axis=0))
        )
        delta = delta @ layer.weights

    gradients.reverse()
    return MlpParams(layers=gradients, leaky_slope=params.leaky_slope), delta


def orthogonal(
    rows: int, cols: int, rng: np.random.Generator, gain: float = 1.0
) -> np.ndarray:
    """Orthogonal matrix from the QR decomposition of a Gaussian matrix."""
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    # sign correction makes the distribution uniform over orthogonal matrices
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_mlp(
    shape: Sequence[int],
    rng: np.random.Generator,
    output_init: OutputInit,
    leaky_slope: float = DEFAULT_LEAKY_SLOPE,
) -> MlpParams:
    """
    Creates a network with orthogonal hidden layers and zero hidden biases.

    Args:
        shape: layer sizes, from the input size to the output size.
        rng: random generator.
        output_init: initialization scheme of the output layer.
        leaky_slope: negative slope of the hidden activations.
    """
    if len(shape) < 2:
        raise ValueError(f"a network needs at least two layer sizes (actual: {shape})")
    if len(output_init.biases) != shape[-1]:
        raise ValueError(
            f"expected {shape[-1]} output biases (actual: {len(output_init.biases)})"
        )

    layers = [
        LayerParams(orthogonal(n_out, n_in, rng), np.zeros(n_out))
        for n_in, n_out in zip(shape[:-2], shape[1:-1])
    ]

    n_in, n_out = shape[-2], shape[-1]
    if output_init.kind == "uniform":
        limit = output_init.gain / np.sqrt(n_in)
        weights = rng.uniform(-limit, limit, size=(n_out, n_in))
    else:
        weights = orthogonal(n_out, n_in, rng, gain=output_init.gain)
    layers.append(LayerParams(weights, np.array(output_init.biases, dtype=np.float64)))

    return MlpParams(layers=layers, leaky_slope=leaky_slope)


@attr.s(auto_attribs=True)
class AdamState:
    """First and second moment estimates of Adam, shaped like the parameters."""

    first_moments: List[np.ndarray]
    second_moments: List[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays: Sequence[np.ndarray]) -> "AdamState":
        return cls(
            first_moments=[np.zeros_like(a) for a in arrays],
            second_moments=[np.zeros_like(a) for a in arrays],
        )

    @classmethod
    def for_mlp(cls, params: MlpParams) -> "AdamState":
        return cls.for_arrays(list(params.arrays()))


def adam_update(
    state: AdamState,
    arrays: Sequence[np.ndarray],
    gradients: Sequence[np.ndarray],
    step_size: float,
    label: str = "parameters",
) -> Tuple[List[np.ndarray], AdamState]:
    """
    Bias-corrected Adam step on a list of arrays.

    Raises:
        DivergenceError: for non-finite gradients.
    """
    if len(arrays) != len(gradients) or len(arrays) != len(state.first_moments):
        raise ValueError("parameters, gradients and optimizer state do not match")
    for g in gradients:
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for the {label}")

    step = state.step + 1
    correction1 = 1.0 - state.beta1**step
    correction2 = 1.0 - state.beta2**step

    updated: List[np.ndarray] = []
    first_moments: List[np.ndarray] = []
    second_moments: List[np.ndarray] = []
    for a, g, m, v in zip(arrays, gradients, state.first_moments, state.second_moments):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        updated.append(a - step_size * m_hat / (np.sqrt(v_hat) + state.epsilon))
        first_moments.append(m)
        second_moments.append(v)

    new_state = AdamState(
        first_moments=first_moments,
        second_moments=second_moments,
        step=step,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return updated, new_state


def adam_step(
    state: AdamState,
    params: MlpParams,
    gradients: MlpParams,
    step_size: float,
    label: str = "network",
) -> Tuple[MlpParams, AdamState]:
    """Adam step on all weights and biases of a network."""
    arrays, new_state = adam_update(
        state, list(params.arrays()), list(gradients.arrays()), step_size, label
    )
    layers = [
        LayerParams(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(params.layers))
    ]
    return MlpParams(layers=layers, leaky_slope=params.leaky_slope), new_state


def polyak_average(
    target: MlpParams, online: MlpParams, weight: float
) -> MlpParams:
    """Returns (1 - weight) * target + weight * online, elementwise."""
    layers = [
        LayerParams(
            (1.0 - weight) * t.weights + weight * o.weights,
            (1.0 - weight) * t.biases + weight * o.biases,
        )
        for t, o in zip(target.layers, online.layers)
    ]
    return MlpParams(layers=layers, leaky_slope=target.leaky_slope)


def max_abs_difference(first: MlpParams, second: MlpParams) -> float:
    return max(
        float(np.max(np.abs(a - b))) for a, b in zip(first.arrays(), second.arrays())
    )
