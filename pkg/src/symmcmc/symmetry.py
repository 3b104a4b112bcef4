"""Equioutput transformations: hidden-neuron permutations and tanh sign flips.

A transform is stored per hidden layer as a permutation ``perm`` and a sign
vector ``signs``: after applying it, neuron ``i`` of the layer carries what
was neuron ``perm[i]``, multiplied by ``signs[i]``. Permutations are 0-based.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from symmcmc.net import Architecture, ParamLayout, forward


@dataclass
class LayerTransform:
    perm: np.ndarray
    signs: np.ndarray

    def __post_init__(self) -> None:
        self.perm = np.asarray(self.perm, dtype=np.intp)
        self.signs = np.asarray(self.signs, dtype=float)
        n = self.perm.shape[0]
        if self.signs.shape != (n,):
            raise ValueError("perm and signs must have the same length")
        if not np.array_equal(np.sort(self.perm), np.arange(n)):
            raise ValueError(f"{self.perm.tolist()} is not a permutation")
        if not np.all(np.abs(self.signs) == 1.0):
            raise ValueError("signs must be +1 or -1")


@dataclass
class EquioutputTransform:
    layers: list[LayerTransform]

    @classmethod
    def identity(cls, arch: Architecture) -> "EquioutputTransform":
        return cls([LayerTransform(np.arange(arch.width(l)), np.ones(arch.width(l))) for l in arch.hidden_layers])

    def check(self, arch: Architecture) -> None:
        widths = [arch.width(l) for l in arch.hidden_layers]
        if [t.perm.shape[0] for t in self.layers] != widths:
            raise ValueError(f"transform shaped for hidden widths {[t.perm.shape[0] for t in self.layers]}, "
                             f"architecture has {widths}")

    @property
    def has_flips(self) -> bool:
        return any(np.any(t.signs < 0) for t in self.layers)

    def then(self, other: "EquioutputTransform") -> "EquioutputTransform":
        """The transform equal to applying ``self`` first and ``other`` second."""
        return EquioutputTransform([
            LayerTransform(a.perm[b.perm], b.signs * a.signs[b.perm]) for a, b in zip(self.layers, other.layers)
        ])

    def inverse(self) -> "EquioutputTransform":
        out = []
        for t in self.layers:
            inv = np.argsort(t.perm)
            out.append(LayerTransform(inv, t.signs[inv]))
        return EquioutputTransform(out)

    def to_json(self) -> dict:
        return {"layers": [{"perm": t.perm.tolist(), "signs": t.signs.astype(int).tolist()} for t in self.layers]}

    @classmethod
    def from_json(cls, obj: dict) -> "EquioutputTransform":
        return cls([LayerTransform(layer["perm"], layer["signs"]) for layer in obj["layers"]])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def permute_layer(layout: ParamLayout, theta: np.ndarray, l: int, perm: np.ndarray,
                  signs: np.ndarray | None = None) -> np.ndarray:
    """Reorder (and optionally sign-flip) the neurons of hidden layer ``l`` in place.

    ``theta`` may be ``(d,)`` or ``(G, d)``; ``perm``/``signs`` may then be
    per-sample ``(G, M_l)`` arrays.
    """
    arch = layout.arch
    rows, cols, nxt = arch.width(l), arch.width(l - 1), arch.width(l + 1)
    lead = theta.shape[:-1]
    perm = np.broadcast_to(perm, lead + (rows,))
    ws, bs, wn = layout.weight_slice(l), layout.bias_slice(l), layout.weight_slice(l + 1)
    W = theta[..., ws].reshape(lead + (rows, cols))
    b = theta[..., bs]
    Wn = theta[..., wn].reshape(lead + (nxt, rows))
    W = np.take_along_axis(W, perm[..., :, None], axis=-2)
    b = np.take_along_axis(b, perm, axis=-1)
    Wn = np.take_along_axis(Wn, perm[..., None, :], axis=-1)
    if signs is not None:
        signs = np.broadcast_to(signs, lead + (rows,))
        W = W * signs[..., :, None]
        b = b * signs
        Wn = Wn * signs[..., None, :]
    theta[..., ws] = W.reshape(lead + (-1,))
    theta[..., bs] = b
    theta[..., wn] = Wn.reshape(lead + (-1,))
    return theta


def apply_transform(arch: Architecture, theta: np.ndarray, E: EquioutputTransform) -> np.ndarray:
    E.check(arch)
    if E.has_flips and arch.hidden_activation != "tanh":
        raise ValueError("sign flips are only equioutput for tanh activations")
    layout = ParamLayout(arch)
    out = np.array(theta, dtype=float, copy=True)
    for l, t in zip(arch.hidden_layers, E.layers):
        permute_layer(layout, out, l, t.perm, t.signs)
    return out


def random_transform(arch: Architecture, rng: np.random.Generator, flips: bool | None = None) -> EquioutputTransform:
    """Uniform permutation and i.i.d. uniform signs for every hidden layer."""
    if flips is None:
        flips = arch.hidden_activation == "tanh"
    layers = []
    for l in arch.hidden_layers:
        m = arch.width(l)
        perm = rng.permutation(m)
        signs = rng.choice([-1.0, 1.0], size=m) if flips else np.ones(m)
        layers.append(LayerTransform(perm, signs))
    return EquioutputTransform(layers)


@dataclass(frozen=True)
class CardinalityBound:
    log10_value: float
    exact_integer: int | None = None

    @property
    def mantissa(self) -> float:
        return 10 ** (self.log10_value - math.floor(self.log10_value))


def cardinality_lower_bound(arch: Architecture, exact_limit: int = 1000) -> CardinalityBound:
    """``prod_l M_l! * 2^{M_l}`` over hidden layers (tanh only)."""
    if arch.hidden_activation != "tanh":
        raise NotImplementedError("relu admits a continuous family of scaling symmetries; no finite bound")
    widths = [arch.width(l) for l in arch.hidden_layers]
    log10 = sum(math.lgamma(m + 1) / math.log(10) + m * math.log10(2) for m in widths)
    exact = None
    if log10 < exact_limit:
        exact = 1
        for m in widths:
            exact *= math.factorial(m) * 2**m
    return CardinalityBound(log10, exact)


def relu_rescale(arch: Architecture, theta: np.ndarray, l: int, i: int, c: float) -> np.ndarray:
    """Scale neuron ``(l, i)``'s incoming weights and bias by ``c > 0`` and outgoing by ``1/c``."""
    if c <= 0:
        raise ValueError("scale must be positive")
    layout = ParamLayout(arch)
    idx = layout.neuron_indices(l, i)
    n_in, n_out = arch.width(l - 1), arch.width(l + 1)
    out = np.array(theta, dtype=float, copy=True)
    out[idx[:n_in]] *= c
    out[idx[n_in:n_in + n_out]] /= c
    out[idx[-1]] *= c
    return out


def verify_equioutput(
    arch: Architecture,
    theta: np.ndarray,
    E: EquioutputTransform | np.ndarray,
    n_test_inputs: int = 100,
    tol: float = 1e-10,
    rng: np.random.Generator | None = None,
) -> tuple[bool, float]:
    """Compare outputs of ``theta`` and its transform on standard normal inputs.

    ``E`` can also be an already transformed parameter vector, which is how
    non-structural transforms (e.g. ReLU rescaling) are checked.
    """
    if n_test_inputs < 1:
        raise ValueError("need at least one test input")
    rng = rng or np.random.default_rng(0)
    other = E if isinstance(E, np.ndarray) else apply_transform(arch, theta, E)
    x = rng.standard_normal((n_test_inputs, arch.n_inputs))
    dev = float(np.max(np.abs(forward(arch, theta, x) - forward(arch, other, x))))
    return dev < tol, dev
