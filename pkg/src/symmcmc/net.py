"""Tanh/ReLU multilayer perceptrons over a flat parameter vector.

Layer 1 is the input layer and carries no parameters. The flat layout stores
all weights first, then all biases, both layer-major and neuron-major; weight
``w[l, i, j]`` connects neuron ``j`` of layer ``l-1`` to neuron ``i`` of layer
``l``. Indices in the public API are 1-based to match the usual MLP notation
(hidden layers are ``2..K-1``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class Architecture:
    layer_widths: tuple[int, ...]
    hidden_activation: str = "tanh"

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("an architecture needs at least an input and an output layer")
        if any(w < 1 for w in widths):
            raise ValueError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths)

    @property
    def n_inputs(self) -> int:
        return self.layer_widths[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_widths[-1]

    @property
    def hidden_layers(self) -> range:
        """1-based indices of the hidden layers."""
        return range(2, self.n_layers)

    def width(self, l: int) -> int:
        return self.layer_widths[l - 1]

    def to_json(self) -> dict:
        return {"layers": list(self.layer_widths), "activation": self.hidden_activation}

    @classmethod
    def from_json(cls, obj: dict) -> "Architecture":
        return cls(tuple(obj["layers"]), obj.get("activation", "tanh"))

    @classmethod
    def load(cls, path: str | Path) -> "Architecture":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


@dataclass(frozen=True)
class ParamLayout:
    """Offsets of every weight matrix and bias vector inside the flat vector."""

    arch: Architecture
    weight_offsets: tuple[int, ...] = field(init=False)
    bias_offsets: tuple[int, ...] = field(init=False)
    dim: int = field(init=False)

    def __post_init__(self) -> None:
        widths = self.arch.layer_widths
        w_off, pos = [], 0
        for l in range(1, len(widths)):
            w_off.append(pos)
            pos += widths[l] * widths[l - 1]
        b_off = []
        for l in range(1, len(widths)):
            b_off.append(pos)
            pos += widths[l]
        object.__setattr__(self, "weight_offsets", tuple(w_off))
        object.__setattr__(self, "bias_offsets", tuple(b_off))
        object.__setattr__(self, "dim", pos)

    def _check_layer(self, l: int) -> None:
        if not 2 <= l <= self.arch.n_layers:
            raise IndexError(f"layer {l} has no parameters (valid: 2..{self.arch.n_layers})")

    def weight_index(self, l: int, i: int, j: int) -> int:
        self._check_layer(l)
        rows, cols = self.arch.width(l), self.arch.width(l - 1)
        if not (1 <= i <= rows and 1 <= j <= cols):
            raise IndexError(f"weight ({l}, {i}, {j}) out of range")
        return self.weight_offsets[l - 2] + (i - 1) * cols + (j - 1)

    def bias_index(self, l: int, i: int) -> int:
        self._check_layer(l)
        if not 1 <= i <= self.arch.width(l):
            raise IndexError(f"bias ({l}, {i}) out of range")
        return self.bias_offsets[l - 2] + (i - 1)

    def weight_slice(self, l: int) -> slice:
        self._check_layer(l)
        start = self.weight_offsets[l - 2]
        return slice(start, start + self.arch.width(l) * self.arch.width(l - 1))

    def bias_slice(self, l: int) -> slice:
        self._check_layer(l)
        start = self.bias_offsets[l - 2]
        return slice(start, start + self.arch.width(l))

    def unpack(self, theta: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Views of ``theta`` as weight matrices ``(M_l, M_{l-1})`` and bias vectors.

        Works on a trailing parameter axis, so a ``(G, d)`` batch yields
        ``(G, M_l, M_{l-1})`` weight stacks.
        """
        theta = np.asarray(theta)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape[-1]}")
        lead = theta.shape[:-1]
        weights, biases = [], []
        for l in range(2, self.arch.n_layers + 1):
            shape = lead + (self.arch.width(l), self.arch.width(l - 1))
            weights.append(theta[..., self.weight_slice(l)].reshape(shape))
            biases.append(theta[..., self.bias_slice(l)])
        return weights, biases

    def neuron_indices(self, l: int, i: int) -> np.ndarray:
        """Flat positions of the neuron parameter vector of hidden neuron ``(l, i)``.

        Order: incoming weights, outgoing weights, bias.
        """
        if not 2 <= l <= self.arch.n_layers - 1:
            raise IndexError(f"layer {l} is not a hidden layer")
        if not 1 <= i <= self.arch.width(l):
            raise IndexError(f"neuron {i} out of range for layer {l}")
        incoming = [self.weight_index(l, i, j) for j in range(1, self.arch.width(l - 1) + 1)]
        outgoing = [self.weight_index(l + 1, r, i) for r in range(1, self.arch.width(l + 1) + 1)]
        return np.array(incoming + outgoing + [self.bias_index(l, i)], dtype=np.intp)

    def layer_neuron_indices(self, l: int) -> np.ndarray:
        """``(M_l, M_{l-1} + M_{l+1} + 1)`` index table, one row per neuron."""
        return np.stack([self.neuron_indices(l, i) for i in range(1, self.arch.width(l) + 1)])


def param_dim(arch: Architecture) -> int:
    w = arch.layer_widths
    return sum(w[l] * w[l - 1] + w[l] for l in range(1, len(w)))


def activate(kind: str, x: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def forward(arch: Architecture, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Network output for one input vector or a batch of inputs.

    ``theta`` may be a single vector ``(d,)`` or a stack ``(G, d)``; ``x`` may
    be ``(n,)`` or ``(N, n)``. The result has shape ``lead_theta + lead_x + (m,)``.
    """
    layout = ParamLayout(arch)
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != arch.n_inputs:
        raise ValueError(f"input has {x.shape[-1]} features, architecture expects {arch.n_inputs}")
    if theta.shape[-1] != layout.dim:
        raise ValueError(f"expected {layout.dim} parameters, got {theta.shape[-1]}")
    weights, biases = layout.unpack(theta)
    single_x = x.ndim == 1
    z = x[None, :] if single_x else x
    if theta.ndim == 2:
        z = np.broadcast_to(z, (theta.shape[0],) + z.shape)
    last = len(weights) - 1
    for k, (W, b) in enumerate(zip(weights, biases)):
        o = z @ np.swapaxes(W, -1, -2) + b[..., None, :]
        z = o if k == last else activate(arch.hidden_activation, o)
    return z[..., 0, :] if single_x else z


def extract_neuron_vector(arch: Architecture, theta: np.ndarray, l: int, i: int) -> "NeuronParamVector":
    layout = ParamLayout(arch)
    idx = layout.neuron_indices(l, i)
    values = np.asarray(theta)[idx]
    n_in = arch.width(l - 1)
    n_out = arch.width(l + 1)
    return NeuronParamVector(
        incoming=values[:n_in].copy(),
        outgoing=values[n_in : n_in + n_out].copy(),
        bias=float(values[-1]),
        layer=l,
        neuron=i,
    )


def write_neuron_vector(
    arch: Architecture, theta: np.ndarray, phi: "NeuronParamVector", out: np.ndarray | None = None
) -> np.ndarray:
    """Write ``phi`` back to its origin. Returns a copy unless ``out`` is given."""
    layout = ParamLayout(arch)
    idx = layout.neuron_indices(phi.layer, phi.neuron)
    vec = phi.as_array()
    if vec.shape[0] != idx.shape[0]:
        raise ValueError(f"neuron vector has length {vec.shape[0]}, expected {idx.shape[0]}")
    result = np.array(theta, dtype=float, copy=True) if out is None else out
    result[idx] = vec
    return result


@dataclass
class NeuronParamVector:
    incoming: np.ndarray
    outgoing: np.ndarray
    bias: float
    layer: int
    neuron: int
    sample: int = 0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.incoming, self.outgoing, [self.bias]])

    def __neg__(self) -> "NeuronParamVector":
        return NeuronParamVector(-self.incoming, -self.outgoing, -self.bias, self.layer, self.neuron, self.sample)

    def __len__(self) -> int:
        return self.incoming.shape[0] + self.outgoing.shape[0] + 1
