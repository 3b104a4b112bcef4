"""Predictive evaluation of posterior samples.

All predictive quantities treat the draws as one Monte Carlo sample of the
posterior regardless of which chain they came from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from symmcmc.net import Architecture, forward
from symmcmc.sampler import SampleSet

LOG_2PI = math.log(2.0 * math.pi)
DENSITY_FLOOR = 1e-300


def _require_arch(samples: SampleSet) -> Architecture:
    if samples.arch is None:
        raise ValueError("sample set carries no architecture")
    return samples.arch


def predict(samples: SampleSet, X: np.ndarray, chunk: int = 512) -> np.ndarray:
    """Network outputs of every draw, shape ``(G, N, m)``."""
    arch = _require_arch(samples)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    thetas = samples.thetas
    return np.concatenate([forward(arch, thetas[i:i + chunk], X) for i in range(0, len(samples), chunk)])


@dataclass
class LPPDResult:
    per_point: np.ndarray
    mean: float
    se: float

    def to_json(self) -> dict:
        return {"mean_lppd": self.mean, "se": self.se, "per_point": self.per_point.tolist()}


def lppd_from_predictions(means: np.ndarray, sigmas: np.ndarray, Y: np.ndarray) -> LPPDResult:
    """``log (1/G) sum_g N(y | mean_g, sigma_g^2 I)`` for each test point.

    ``means`` is ``(G, N, m)``, ``sigmas`` is ``(G,)``, ``Y`` is ``(N, m)``.
    """
    means = np.asarray(means, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if means.shape[0] == 0:
        raise ValueError("empty sample set")
    if Y.ndim == 1:
        Y = Y[:, None]
    m = Y.shape[1]
    s = sigmas[:, None]
    sq = np.sum((Y[None] - means) ** 2, axis=-1)
    log_lik = -0.5 * m * LOG_2PI - m * np.log(s) - 0.5 * sq / s**2
    per_point = logsumexp(log_lik, axis=0) - math.log(means.shape[0])
    n = per_point.shape[0]
    se = float(per_point.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return LPPDResult(per_point, float(per_point.mean()), se)


def lppd(samples: SampleSet, X: np.ndarray, Y: np.ndarray) -> LPPDResult:
    if len(samples) == 0:
        raise ValueError("empty sample set")
    return lppd_from_predictions(predict(samples, X), samples.sigmas, Y)


@dataclass(frozen=True)
class GridSpec:
    x_min: float = -3.0
    x_max: float = 3.0
    n_x: int = 61
    y_min: float = -3.0
    y_max: float = 3.0
    n_y: int = 121

    @property
    def x_grid(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def y_grid(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.n_y)

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / (self.n_y - 1)


@dataclass
class PPDGrid:
    x_grid: np.ndarray
    y_grid: np.ndarray
    density: np.ndarray  # (n_x, n_y)

    @property
    def dy(self) -> float:
        return float(self.y_grid[1] - self.y_grid[0])

    def rows(self):
        """``(x, y, density)`` triples, x-major, for CSV dumps."""
        for i, x in enumerate(self.x_grid):
            xs = np.atleast_1d(x).tolist()
            for j, y in enumerate(self.y_grid):
                yield (*xs, float(y), float(self.density[i, j]))


def _gaussian_columns(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``N(y | mu, sigma^2)`` for ``mu`` of shape ``(G, n_x)``; result ``(G, n_x, n_y)``."""
    z = (y[None, None, :] - mu[:, :, None]) / sigma[:, None, None]
    return np.exp(-0.5 * z * z - 0.5 * LOG_2PI) / sigma[:, None, None]


def _x_points(arch: Architecture, grid: GridSpec, x_points: np.ndarray | None) -> np.ndarray:
    if x_points is not None:
        return np.atleast_2d(np.asarray(x_points, dtype=float))
    if arch.n_inputs != 1:
        raise ValueError("a regular x grid needs a 1D input; pass x_points for slices of higher-dimensional inputs")
    return grid.x_grid[:, None]


def _component_densities(samples: SampleSet, grid: GridSpec, x_points: np.ndarray | None):
    arch = _require_arch(samples)
    if arch.n_outputs != 1:
        raise ValueError("predictive grids are only defined for a single output")
    X = _x_points(arch, grid, x_points)
    mu = predict(samples, X)[..., 0]
    return X, _gaussian_columns(mu, samples.sigmas, grid.y_grid)


def _normalize_rows(S: np.ndarray, dy: float) -> np.ndarray:
    mass = S.sum(axis=-1, keepdims=True) * dy
    return S / np.where(mass > 0, mass, 1.0)


def ppd_grid(samples: SampleSet, grid: GridSpec = GridSpec(), x_points: np.ndarray | None = None) -> PPDGrid:
    """Mixture-of-Gaussians predictive density on an input/output grid, renormalized per input."""
    X, comps = _component_densities(samples, grid, x_points)
    density = _normalize_rows(comps.mean(axis=0), grid.dy)
    x_out = X[:, 0] if X.shape[1] == 1 else X
    return PPDGrid(x_out, grid.y_grid, density)


def discrete_kl(p: np.ndarray, q: np.ndarray, dy: float) -> np.ndarray:
    """``sum_y p log(p / q) dy`` along the last axis, densities floored before the log."""
    p = np.maximum(p, DENSITY_FLOOR)
    q = np.maximum(q, DENSITY_FLOOR)
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1) * dy


def kl_consecutive(samples: SampleSet, grid: GridSpec = GridSpec(), x_points: np.ndarray | None = None) -> np.ndarray:
    """KL between the predictive grids of draws ``1..g-1`` and ``1..g``, averaged over inputs.

    Entry ``g - 2`` of the result belongs to ``g = 2..G``.
    """
    if len(samples) < 2:
        raise ValueError("need at least two draws")
    _, comps = _component_densities(samples, grid, x_points)
    dy = grid.dy
    running = comps[0].copy()
    prev = _normalize_rows(running, dy)
    out = np.empty(len(samples) - 1)
    for g in range(1, len(samples)):
        running += comps[g]
        cur = _normalize_rows(running, dy)
        out[g - 1] = float(discrete_kl(prev, cur, dy).mean())
        prev = cur
    return out


def knn_graph(points: np.ndarray, k: int = 4, sim_sigma: float = 1.0) -> np.ndarray:
    """Symmetric k-NN adjacency with Gaussian similarity weights and zero diagonal."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    n = P.shape[0]
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} points for a {k}-NN graph")
    sq = np.sum(P * P, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * P @ P.T, 0.0)
    np.fill_diagonal(d2, np.inf)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, n), dtype=bool)
    mask[np.repeat(np.arange(n), k), nbrs.ravel()] = True
    mask |= mask.T
    np.fill_diagonal(d2, 0.0)
    A = np.where(mask, np.exp(-d2 / (2.0 * sim_sigma**2)), 0.0)
    np.fill_diagonal(A, 0.0)
    return A


@dataclass
class ClusterResult:
    labels: np.ndarray
    eigenvalues: np.ndarray


def normalized_laplacian(A: np.ndarray) -> np.ndarray:
    deg = A.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    L = np.diag(deg) - A
    return inv_sqrt[:, None] * L * inv_sqrt[None, :]


def spectral_cluster(
    points: np.ndarray, n_clusters: int = 3, k: int = 4, sim_sigma: float = 1.0, n_init: int = 32, seed: int = 0
) -> ClusterResult:
    """k-NN graph, symmetric normalized Laplacian, k-means on the row-normalized eigenvectors.

    Labels are ``1..n_clusters``.
    """
    P = np.asarray(points, dtype=float)
    if P.shape[0] < n_clusters:
        raise ValueError("fewer points than clusters")
    A = knn_graph(P, k, sim_sigma)
    evals, evecs = np.linalg.eigh(normalized_laplacian(A))
    emb = evecs[:, :n_clusters]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    km = KMeans(n_clusters=n_clusters, init="k-means++", n_init=n_init, random_state=seed)
    labels = km.fit_predict(emb) + 1
    return ClusterResult(labels, evals[: max(n_clusters, min(10, len(evals)))])
