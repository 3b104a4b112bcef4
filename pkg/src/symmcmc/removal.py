"""Post-hoc removal of permutation and sign-flip symmetries from MLP samples.

Layers are processed from the last hidden layer backwards. In each layer the
neuron parameter vectors of all samples are pooled. A zero-centred hyperplane
that keeps the pool as far away as possible decides which sign of every
neuron is canonical. The neurons of each sample are then relabeled
by a constrained k-NN vote against all other samples until the labeling stops
changing. Every write-back is an exact equioutput transformation, so the
network functions are never altered.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from symmcmc.net import Architecture, ParamLayout
from symmcmc.sampler import SampleSet
from symmcmc.symmetry import permute_layer

log = logging.getLogger(__name__)


@dataclass
class RemovalConfig:
    C: float = 1.0
    K_beta: int = 8
    k: int = 1024
    iterations: int = 256
    sim_sigma: float = 1.0
    svm_steps: int = 2000
    svm_step_size: float = 0.1

    def __post_init__(self) -> None:
        if self.C <= 0 or self.sim_sigma <= 0 or self.svm_step_size <= 0:
            raise ValueError("C, sim_sigma and svm_step_size must be positive")
        if min(self.K_beta, self.k, self.iterations, self.svm_steps) < 1:
            raise ValueError("K_beta, k, iterations and svm_steps must be >= 1")


@dataclass
class NeuronCloud:
    """Neuron parameter vectors of one hidden layer for every sample.

    ``vectors[g, i]`` is the vector of neuron ``i`` (0-based) in sample ``g``;
    ``index`` holds the flat theta positions it was read from.
    """

    layer: int
    vectors: np.ndarray
    index: np.ndarray

    @classmethod
    def build(cls, arch: Architecture, thetas: np.ndarray, layer: int) -> "NeuronCloud":
        index = ParamLayout(arch).layer_neuron_indices(layer)
        return cls(layer, thetas[:, index], index)

    @property
    def n_samples(self) -> int:
        return self.vectors.shape[0]

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def pooled(self) -> np.ndarray:
        return self.vectors.reshape(-1, self.vectors.shape[-1])

    @property
    def owner(self) -> np.ndarray:
        """Sample id of every pooled vector."""
        return np.repeat(np.arange(self.n_samples), self.width)


def svm_loss(beta: np.ndarray, pooled: np.ndarray, C: float = 1.0) -> float:
    """``0.5 |beta|^2 + C sum max(0, 1 - |beta' phi|)``."""
    margins = np.abs(pooled @ beta)
    return 0.5 * float(beta @ beta) + C * float(np.sum(np.maximum(0.0, 1.0 - margins)))


def _svm_subgradient(beta: np.ndarray, pooled: np.ndarray, C: float) -> np.ndarray:
    u = pooled @ beta
    active = np.abs(u) < 1.0
    return beta - C * (np.sign(u[active]) @ pooled[active])


def fit_hyperplane(pooled: np.ndarray, config: RemovalConfig, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """Best of ``K_beta`` subgradient-descent runs from standard normal starts.

    Returns the hyperplane normal and its loss.
    """
    pooled = np.asarray(pooled, dtype=float)
    if pooled.shape[0] == 0:
        raise ValueError("empty neuron cloud")
    best_beta, best_loss = None, math.inf
    for _ in range(config.K_beta):
        beta = rng.standard_normal(pooled.shape[1])
        run_beta, run_loss = beta.copy(), svm_loss(beta, pooled, config.C)
        for t in range(1, config.svm_steps + 1):
            beta = beta - config.svm_step_size / math.sqrt(t) * _svm_subgradient(beta, pooled, config.C)
            loss = svm_loss(beta, pooled, config.C)
            if loss < run_loss:
                run_beta, run_loss = beta.copy(), loss
        if math.isfinite(run_loss) and run_loss < best_loss:
            best_beta, best_loss = run_beta, run_loss
    if best_beta is None:
        raise FloatingPointError("every hyperplane restart produced a non-finite loss")
    # the loss is even in beta; keep the orientation that needs fewer flips
    if np.count_nonzero(pooled @ best_beta < 0) > np.count_nonzero(pooled @ best_beta > 0):
        best_beta = -best_beta
    return best_beta, best_loss


def tanh_removal(samples: SampleSet, layer: int, config: RemovalConfig, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Flip every neuron of ``layer`` onto the non-negative side of the fitted hyperplane.

    Mutates ``samples.states``; returns the hyperplane and the number of flips.
    """
    arch = samples.arch
    if arch is None or arch.hidden_activation != "tanh":
        raise ValueError("sign-flip removal needs a tanh architecture")
    cloud = NeuronCloud.build(arch, samples.thetas, layer)
    beta, _ = fit_hyperplane(cloud.pooled, config, rng)
    flip = (cloud.vectors @ beta) < 0
    g_idx, n_idx = np.nonzero(flip)
    for g, i in zip(g_idx, n_idx):
        samples.states[g, cloud.index[i]] = -samples.states[g, cloud.index[i]]
    return beta, int(flip.sum())


def knn_class_probs(
    query: np.ndarray,
    pooled: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    k: int,
    sim_sigma: float = 1.0,
    exclude: np.ndarray | None = None,
) -> np.ndarray:
    """Class probabilities of ``query`` from its ``k`` nearest labeled neighbors.

    Votes are Gaussian similarities. ``exclude`` masks pool entries that may
    not vote (the query's own sample).
    """
    d2 = np.sum((pooled - query) ** 2, axis=1)
    if exclude is not None:
        d2 = np.where(exclude, np.inf, d2)
    n_valid = int(np.count_nonzero(np.isfinite(d2)))
    if n_valid == 0:
        raise ValueError("no neighbors left after excluding the query's own sample")
    k = min(k, n_valid)
    nbr = np.argsort(d2, kind="stable")[:k]
    return _vote(d2[nbr][None], labels[nbr][None], n_classes, sim_sigma)[0]


def _vote(d2: np.ndarray, lab: np.ndarray, n_classes: int, sim_sigma: float) -> np.ndarray:
    # shifting by the nearest distance leaves the normalized votes unchanged and avoids underflow
    w = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * sim_sigma**2))
    n = d2.shape[0]
    flat = (np.arange(n)[:, None] * n_classes + lab).ravel()
    scores = np.bincount(flat, weights=w.ravel(), minlength=n * n_classes).reshape(n, n_classes)
    return scores / scores.sum(axis=1, keepdims=True)


def greedy_assign(probs: np.ndarray) -> np.ndarray:
    """Bijective assignment of vectors (rows) to classes (columns), best pair first.

    Works on a single ``(M, M)`` matrix or a stack ``(G, M, M)``; returns the
    class of every row. Ties go to the lowest row, then the lowest column.
    """
    P = np.array(probs, dtype=float, copy=True)
    single = P.ndim == 2
    if single:
        P = P[None]
    G, M, _ = P.shape
    assign = np.full((G, M), -1, dtype=np.intp)
    rows = np.arange(G)
    for _ in range(M):
        best = np.argmax(P.reshape(G, -1), axis=1)
        v, c = np.divmod(best, M)
        assign[rows, v] = c
        P[rows, v, :] = -np.inf
        P[rows, :, c] = -np.inf
    return assign[0] if single else assign


class _NeighborTable:
    """k nearest neighbors of every pooled vector among the other samples' vectors."""

    def __init__(self, cloud: NeuronCloud, k: int, chunk: int = 1024) -> None:
        pooled = cloud.pooled
        owner = cloud.owner
        n = pooled.shape[0]
        n_other = n - cloud.width
        if n_other < 1:
            raise ValueError("no neighbors left after excluding the query's own sample")
        self.k = min(k, n_other)
        sq = np.sum(pooled * pooled, axis=1)
        self.nbr = np.empty((n, self.k), dtype=np.intp)
        self.d2 = np.empty((n, self.k))
        for s in range(0, n, chunk):
            e = min(n, s + chunk)
            d2 = np.maximum(sq[s:e, None] + sq[None, :] - 2.0 * pooled[s:e] @ pooled.T, 0.0)
            d2[owner[s:e, None] == owner[None, :]] = np.inf
            if self.k < n_other:
                part = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
            else:
                part = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
            self.nbr[s:e] = part
            self.d2[s:e] = np.take_along_axis(d2, part, axis=1)


@nb.njit(cache=True)
def _sweep(weights: np.ndarray, nbr: np.ndarray, labels: np.ndarray) -> int:
    """One in-place relabeling pass over all samples; returns how many samples moved.

    Same vote and tie rules as ``_vote`` and ``greedy_assign``, with rows
    ordered by current slot.
    """
    G, M = labels.shape
    k = nbr.shape[1]
    flat = labels.reshape(-1)
    P = np.empty((M, M))
    new = np.empty(M, dtype=labels.dtype)
    moved = 0
    for g in range(G):
        for j in range(M):
            r = g * M + j
            row = labels[g, j]
            for c in range(M):
                P[row, c] = 0.0
            total = 0.0
            for t in range(k):
                P[row, flat[nbr[r, t]]] += weights[r, t]
                total += weights[r, t]
            for c in range(M):
                P[row, c] /= total
        changed = False
        for _ in range(M):
            bv, bc, best = 0, 0, -np.inf
            for v in range(M):
                for c in range(M):
                    if P[v, c] > best:
                        best, bv, bc = P[v, c], v, c
            new[bv] = bc
            if bv != bc:
                changed = True
            for c in range(M):
                P[bv, c] = -np.inf
            for v in range(M):
                P[v, bc] = -np.inf
        if changed:
            moved += 1
            for j in range(M):
                labels[g, j] = new[labels[g, j]]
    return moved


def permutation_removal(samples: SampleSet, layer: int, config: RemovalConfig) -> dict:
    """Relabel the neurons of ``layer`` in every sample by constrained k-NN voting.

    Samples are relabeled one after another and each vote sees the labels as
    left by the samples before it. Freezing all labels for a whole sweep
    instead lets an evenly split group swap halves forever, since every sample
    is outvoted by the other half. The loop stops once a sweep leaves every
    assignment unchanged. Mutates ``samples.states``.
    """
    arch = samples.arch
    cloud = NeuronCloud.build(arch, samples.thetas, layer)
    G, M = cloud.n_samples, cloud.width
    table = _NeighborTable(cloud, config.k)
    labels = np.tile(np.arange(M), (G, 1))
    changes, iterations = 0, 0
    # vectors only move between slots, so the neighbor weights never change
    weights = np.exp(-(table.d2 - table.d2.min(axis=1, keepdims=True)) / (2.0 * config.sim_sigma**2))
    for it in range(config.iterations):
        iterations = it + 1
        moved = _sweep(weights, table.nbr, labels)
        changes += moved
        if moved == 0:
            break
    perm = np.argsort(labels, axis=1)
    if np.any(perm != np.arange(M)):
        layout = ParamLayout(arch)
        thetas = samples.states[:, :-1].copy()
        permute_layer(layout, thetas, layer, perm)
        samples.states[:, :-1] = thetas
    return {"iterations": iterations, "permutation_changes": changes,
            "samples_permuted": int(np.any(perm != np.arange(M), axis=1).sum()), "k": table.k}


@dataclass
class RemovalReport:
    layers: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"layers": self.layers}


def geometry_removal(
    samples: SampleSet, config: RemovalConfig | None = None, rng: np.random.Generator | None = None
) -> tuple[SampleSet, RemovalReport]:
    """Sign-flip then permutation removal for every hidden layer, last layer first.

    Works on a copy; the input sample set is left untouched.
    """
    config = config or RemovalConfig()
    rng = rng or np.random.default_rng(0)
    arch = samples.arch
    if arch is None or arch.hidden_activation != "tanh":
        raise ValueError("symmetry removal needs a tanh architecture")
    out = samples.copy()
    report = RemovalReport()
    for layer in reversed(arch.hidden_layers):
        beta, flips = tanh_removal(out, layer, config, rng)
        entry = {"layer": layer, "flips": flips, "hyperplane": beta.tolist(),
                 "hyperplane_loss": svm_loss(beta, NeuronCloud.build(arch, out.thetas, layer).pooled, config.C)}
        if len(out) > 1:
            entry.update(permutation_removal(out, layer, config))
        else:
            entry.update({"iterations": 0, "permutation_changes": 0, "samples_permuted": 0, "k": 0})
        log.info("layer %d: %d flips, %d relabelings in %d iterations", layer, flips,
                 entry["permutation_changes"], entry["iterations"])
        report.layers.append(entry)
    return out, report
