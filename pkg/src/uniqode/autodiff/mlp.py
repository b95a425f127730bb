"""Feedforward tanh networks: plain numpy evaluation and taped evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from uniqode.autodiff import tape as T
from uniqode.errors import ConfigurationError, ShapeError


@dataclass
class Mlp:
    """Weights are stored (fan_in, fan_out) so a batch multiplies as ``X @ W``.

    Hidden layers use tanh, the output layer is affine.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        _check_sizes(self.layer_sizes)
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("need one weight matrix and one bias vector per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[i], self.layer_sizes[i + 1])
            if w.shape != expect or b.shape != (expect[1],):
                raise ShapeError(f"layer {i}: weight {w.shape}, bias {b.shape}, expected {expect}")

    @property
    def n_params(self) -> int:
        return int(sum(w.size + b.size for w, b in zip(self.weights, self.biases)))

    @property
    def in_width(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_width(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[np.ndarray]:
        """Parameters in the fixed order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_params(self, params: list[np.ndarray]) -> "Mlp":
        params = [np.array(p, dtype=np.float64) for p in params]
        return Mlp(list(self.layer_sizes), params[0::2], params[1::2])

    def copy(self) -> "Mlp":
        return self.with_params(self.params())

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(
            list(d["layer_sizes"]),
            [np.array(w, dtype=np.float64).reshape(a, b) for w, a, b in
             zip(d["weights"], d["layer_sizes"][:-1], d["layer_sizes"][1:])],
            [np.array(b, dtype=np.float64) for b in d["biases"]],
        )


def _check_sizes(layer_sizes) -> None:
    if len(layer_sizes) < 2:
        raise ConfigurationError(f"layer_sizes needs input and output widths, got {layer_sizes!r}")
    if any(int(n) != n or n < 1 for n in layer_sizes):
        raise ConfigurationError(f"layer widths must be positive integers, got {layer_sizes!r}")


def init_mlp(layer_sizes, seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases, fully determined by ``seed``."""
    _check_sizes(layer_sizes)
    sizes = [int(n) for n in layer_sizes]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases)


def zeros_mlp(layer_sizes) -> Mlp:
    _check_sizes(layer_sizes)
    sizes = [int(n) for n in layer_sizes]
    return Mlp(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
               [np.zeros(b) for b in sizes[1:]])


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Evaluate on one input vector ``(in,)`` or a batch ``(m, in)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[1] != net.in_width:
        raise ShapeError(f"network expects input width {net.in_width}, got shape {x.shape}")
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        if i < last:
            h = np.tanh(h)
    return h[0] if single else h


def input_jacobian(net: Mlp, x) -> np.ndarray:
    """d(output)/d(input) for a single input vector, shape ``(out, in)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.in_width,):
        raise ShapeError(f"network expects input width {net.in_width}, got shape {x.shape}")
    h = x[None, :]
    jac = np.eye(net.in_width)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w + b
        jac = jac @ w
        if i < last:
            h = np.tanh(h)
            jac = jac * (1.0 - h * h)
    return jac.T


def taped_params(tape: T.Tape, net: Mlp) -> list[T.Var]:
    return [tape.leaf(p) for p in net.params()]


def taped_forward(params: list[T.Var], x) -> T.Var:
    """Batch forward ``(m, in) -> (m, out)`` recorded on the params' tape."""
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers):
        h = T.affine(h, params[2 * i], params[2 * i + 1])
        if i < n_layers - 1:
            h = T.tanh(h)
    return h


def taped_forward_with_tangent(params: list[T.Var], x, dx) -> tuple[T.Var, T.Var]:
    """Forward pass plus the directional derivative along ``dx``, both taped.

    With a scalar input and ``dx`` of ones this gives d(output)/d(input) for
    every row of the batch, and the result stays differentiable with
    respect to the parameters.
    """
    h, dh = x, dx
    n_layers = len(params) // 2
    for i in range(n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        h = T.affine(h, w, b)
        dh = T.matmul(dh, w)
        if i < n_layers - 1:
            h = T.tanh(h)
            dh = T.tanh_slope_scale(dh, h)
    return h, dh
