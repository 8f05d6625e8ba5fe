"""Dense numeric kernels shared by every other module.

All arrays are ``numpy.float64``. Networks are small fixed-architecture
multilayer perceptrons whose gradients are computed by hand-written reverse
mode, so the collision search and the training loop never depend on an
autodiff framework.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
OPTIMIZERS = ("sgd", "adam")


class NonFiniteError(FloatingPointError):
    """Raised when an operation would produce NaN or Inf."""


def require_finite(values, what: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"Non-finite values in {what}.")
    return array


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return np.where(z > 0.0, 1.0, 0.0)
    return np.ones_like(z)


@dataclass(frozen=True, eq=False)
class Mlp:
    """Multilayer perceptron ``W_L(... act(W_1 x + b_1) ...) + b_L``.

    ``weights[i]`` has shape ``(out_i, in_i)``. The activation applies to every
    hidden layer; the output layer is always linear.
    """

    weights: tuple
    biases: tuple
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{self.activation}'. Use one of {', '.join(ACTIVATIONS)}.")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("Mlp needs one bias vector per weight matrix and at least one layer.")

        weights = []
        biases = []
        previous_out = None
        for index, (raw_w, raw_b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(raw_w, dtype=np.float64)
            b = np.array(raw_b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"Layer {index}: weight {w.shape} and bias {b.shape} are inconsistent.")
            if previous_out is not None and w.shape[1] != previous_out:
                raise ValueError(f"Layer {index}: input width {w.shape[1]} does not match previous output {previous_out}.")
            require_finite(w, f"layer {index} weights")
            require_finite(b, f"layer {index} bias")
            w.setflags(write=False)
            b.setflags(write=False)
            weights.append(w)
            biases.append(b)
            previous_out = w.shape[0]

        object.__setattr__(self, "weights", tuple(weights))
        object.__setattr__(self, "biases", tuple(biases))

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_width(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def is_affine(self) -> bool:
        return len(self.weights) == 1 or self.activation == "identity"

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Mlp":
        if len(params) != 2 * len(self.weights):
            raise ValueError(f"Expected {2 * len(self.weights)} parameter arrays, got {len(params)}.")
        return Mlp(tuple(params[0::2]), tuple(params[1::2]), self.activation)

    def to_dict(self) -> dict:
        return {
            "layer_widths": self.layer_widths,
            "activation": self.activation,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mlp":
        net = cls(tuple(data["weights"]), tuple(data["biases"]), data.get("activation", "tanh"))
        widths = data.get("layer_widths")
        if widths is not None and list(widths) != net.layer_widths:
            raise ValueError(f"Stored layer widths {widths} do not match weights {net.layer_widths}.")
        return net


def init_mlp(layer_widths: Sequence[int], seed: int, activation: str = "tanh") -> Mlp:
    """Glorot-uniform weights and biases, fully determined by ``seed``."""
    widths = [int(w) for w in layer_widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ValueError(f"layer_widths must list at least two positive widths, got {list(layer_widths)}")

    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-limit, limit, size=fan_out))
    return Mlp(tuple(weights), tuple(biases), activation)


def affine_mlp(matrix, bias=None) -> Mlp:
    w = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    b = np.zeros(w.shape[0]) if bias is None else np.asarray(bias, dtype=np.float64)
    return Mlp((w,), (b,), "identity")


def _as_batch(net: Mlp, inputs) -> tuple[np.ndarray, bool]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
        single = True
    elif x.ndim == 2:
        single = False
    else:
        raise ValueError(f"Mlp input must be 1-D or 2-D, got shape {x.shape}")
    if x.shape[1] != net.input_width:
        raise ValueError(f"Mlp input width {x.shape[1]} does not match first layer width {net.input_width}")
    return x, single


def _forward_trace(net: Mlp, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    activations = [x]
    pre_activations = []
    last = len(net.weights) - 1
    for index, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = activations[-1] @ w.T + b
        pre_activations.append(z)
        activations.append(z if index == last else _activate(net.activation, z))
    return pre_activations, activations


def mlp_forward(net: Mlp, inputs) -> np.ndarray:
    """Evaluate ``net`` on one input vector or on a batch of row vectors."""
    x, single = _as_batch(net, inputs)
    _, activations = _forward_trace(net, x)
    out = require_finite(activations[-1], "mlp output")
    return out[0] if single else out


def mlp_backward(net: Mlp, inputs, cotangent) -> tuple[list[np.ndarray], np.ndarray]:
    """Vector-Jacobian product over a batch.

    Returns the parameter gradients summed over the batch, aligned with
    ``net.parameters()``, and the per-row gradient with respect to the input.
    """
    x, single = _as_batch(net, inputs)
    delta = np.asarray(cotangent, dtype=np.float64).reshape(x.shape[0], net.output_width)
    pre_activations, activations = _forward_trace(net, x)

    grads: list[np.ndarray] = [None] * (2 * len(net.weights))
    for index in range(len(net.weights) - 1, -1, -1):
        grads[2 * index] = delta.T @ activations[index]
        grads[2 * index + 1] = delta.sum(axis=0)
        delta = delta @ net.weights[index]
        if index > 0:
            delta = delta * _activation_slope(net.activation, pre_activations[index - 1], activations[index])

    input_grad = require_finite(delta, "mlp input gradient")
    return grads, (input_grad[0] if single else input_grad)


def mlp_gradient(net: Mlp, inputs) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact Jacobians of a single forward evaluation.

    Returns ``(grad_wrt_params, grad_wrt_input)`` where parameter Jacobians have
    shape ``(out, *param.shape)`` and the input Jacobian has shape
    ``(out, in)``.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"mlp_gradient takes a single input vector, got shape {x.shape}")

    param_rows = [[] for _ in range(2 * len(net.weights))]
    input_rows = []
    for j in range(net.output_width):
        cotangent = np.zeros(net.output_width)
        cotangent[j] = 1.0
        grads, input_grad = mlp_backward(net, x, cotangent)
        for slot, grad in enumerate(grads):
            param_rows[slot].append(grad)
        input_rows.append(input_grad)
    return [np.stack(rows) for rows in param_rows], np.stack(input_rows)


def mlp_input_jacobian(net: Mlp, inputs) -> np.ndarray:
    """Batched input Jacobian, shape ``(batch, out, in)``."""
    x, single = _as_batch(net, inputs)
    pre_activations, activations = _forward_trace(net, x)
    jac = np.broadcast_to(net.weights[-1], (x.shape[0],) + net.weights[-1].shape).copy()
    for index in range(len(net.weights) - 2, -1, -1):
        slope = _activation_slope(net.activation, pre_activations[index], activations[index + 1])
        jac = (jac * slope[:, None, :]) @ net.weights[index]
    require_finite(jac, "mlp input jacobian")
    return jac[0] if single else jac


@dataclass
class OptimizerState:
    method: str = "adam"
    step_size: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    first_moments: list | None = field(default=None, repr=False)
    second_moments: list | None = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        if self.method not in OPTIMIZERS:
            raise ValueError(f"Unknown optimizer '{self.method}'. Use one of {', '.join(OPTIMIZERS)}.")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")


def optimizer_step(state: OptimizerState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Return updated parameters and advance ``state``.

    The state is only committed once every updated parameter is finite.
    """
    if len(params) != len(grads):
        raise ValueError(f"Got {len(params)} parameter arrays but {len(grads)} gradients.")
    grads = [require_finite(g, "gradient") for g in grads]
    for index, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != g.shape:
            raise ValueError(f"Gradient {index} has shape {g.shape}, parameter has {np.shape(p)}.")

    if state.method == "sgd":
        updated = [np.asarray(p, dtype=np.float64) - state.step_size * g for p, g in zip(params, grads)]
        first, second = state.first_moments, state.second_moments
    else:
        t = state.step_count + 1
        first_prev = state.first_moments or [np.zeros_like(g) for g in grads]
        second_prev = state.second_moments or [np.zeros_like(g) for g in grads]
        first = [state.beta1 * m + (1.0 - state.beta1) * g for m, g in zip(first_prev, grads)]
        second = [state.beta2 * v + (1.0 - state.beta2) * g * g for v, g in zip(second_prev, grads)]
        correction1 = 1.0 - state.beta1**t
        correction2 = 1.0 - state.beta2**t
        updated = [
            np.asarray(p, dtype=np.float64)
            - state.step_size * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
            for p, m, v in zip(params, first, second)
        ]

    for p in updated:
        require_finite(p, "updated parameters")

    state.first_moments = first
    state.second_moments = second
    state.step_count += 1
    return updated


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    point = np.array(x, dtype=np.float64)
    grad = np.zeros_like(point)
    for index in np.ndindex(point.shape):
        original = point[index]
        point[index] = original + step
        upper = float(f(point.copy()))
        point[index] = original - step
        lower = float(f(point.copy()))
        point[index] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteError(f"Function is non-finite near coordinate {index}.")
        grad[index] = (upper - lower) / (2.0 * step)
    return grad


def nullspace(matrix, rel_tol: float = 1e-10) -> np.ndarray:
    """Nullspace basis by Gauss-Jordan elimination with partial pivoting.

    Returns an array of shape ``(columns, nullity)``; column ``j`` is the basis
    vector belonging to the ``j``-th free variable.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"nullspace expects a 2-D matrix, got shape {a.shape}")
    require_finite(a, "nullspace input")
    rows, cols = a.shape
    scale = float(np.abs(a).max()) if a.size else 0.0
    tol = rel_tol * scale

    pivots = []
    r = 0
    for c in range(cols):
        if r >= rows:
            break
        p = r + int(np.argmax(np.abs(a[r:, c])))
        if abs(a[p, c]) <= tol:
            continue
        if p != r:
            a[[r, p]] = a[[p, r]]
        a[r] = a[r] / a[r, c]
        for i in range(rows):
            if i != r and a[i, c] != 0.0:
                a[i] = a[i] - a[i, c] * a[r]
        pivots.append(c)
        r += 1

    free = [c for c in range(cols) if c not in pivots]
    basis = np.zeros((cols, len(free)))
    for j, f in enumerate(free):
        basis[f, j] = 1.0
        for i, pc in enumerate(pivots):
            basis[pc, j] = -a[i, f]
    return basis
