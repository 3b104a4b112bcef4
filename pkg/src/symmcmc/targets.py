"""Log densities the sampler can run on.

Each target bundles a compiled ``logp_grad(q, args)`` with its ``args`` and a
way to draw initial states. Besides the MLP posterior there are a few
closed-form densities used to check the sampler itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numba as nb
import numpy as np

from symmcmc import _kernels
from symmcmc.model import RegressionData
from symmcmc.net import Architecture, param_dim


@dataclass
class Target:
    logp_grad: Any
    args: tuple
    dim: int
    init: Callable[[np.random.Generator], np.ndarray]
    name: str = "target"

    def __call__(self, q: np.ndarray) -> tuple[float, np.ndarray]:
        return self.logp_grad(np.asarray(q, dtype=float), self.args)


class _PriorInit:
    """Draw ``theta ~ N(0, I)`` and ``sigma ~ N+(0, 1)``, returned as ``(theta, log sigma)``."""

    def __init__(self, d: int) -> None:
        self.d = d

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.standard_normal(self.d)
        sigma = abs(rng.standard_normal())
        return np.append(theta, math.log(max(sigma, 1e-300)))


class _NormalInit:
    def __init__(self, dim: int, scale: float = 1.0) -> None:
        self.dim, self.scale = dim, scale

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        return self.scale * rng.standard_normal(self.dim)


def mlp_posterior(arch: Architecture, data: RegressionData) -> Target:
    d = param_dim(arch)
    return Target(_kernels.log_posterior_and_grad, data.kernel_args(arch), d + 1, _PriorInit(d), "mlp")


@nb.njit(cache=True)
def _gaussian_logp_grad(q, args):
    mean, precision = args
    r = q - mean
    g = -(precision @ r)
    return 0.5 * np.dot(r, g), g


def gaussian(mean: np.ndarray, cov: np.ndarray) -> Target:
    """Unnormalized multivariate normal."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    precision = np.ascontiguousarray(np.linalg.inv(cov))
    return Target(_gaussian_logp_grad, (mean, precision), mean.shape[0], _NormalInit(mean.shape[0]), "gaussian")


def normal_mean_posterior(y: np.ndarray, noise_sd: float, prior_mean: float = 0.0, prior_sd: float = 1.0):
    """Posterior of ``mu`` for ``y_i ~ N(mu, noise_sd^2)``, ``mu ~ N(prior_mean, prior_sd^2)``.

    Returns the target together with the closed-form posterior mean and sd.
    """
    y = np.asarray(y, dtype=float)
    prec = 1.0 / prior_sd**2 + y.size / noise_sd**2
    post_var = 1.0 / prec
    post_mean = post_var * (prior_mean / prior_sd**2 + y.sum() / noise_sd**2)
    target = gaussian(np.array([post_mean]), np.array([[post_var]]))
    target.name = "normal-mean"
    return target, post_mean, math.sqrt(post_var)


@nb.njit(cache=True)
def _double_well_logp_grad(q, args):
    (height,) = args
    x = q[0]
    u = x * x - 1.0
    g = np.empty(1)
    g[0] = -4.0 * height * x * u
    return -height * u * u, g


def double_well(height: float = 1.0) -> Target:
    """``p(x) ∝ exp(-height * (x^2 - 1)^2)``, wells at ``x = ±1``."""
    return Target(_double_well_logp_grad, (float(height),), 1, _NormalInit(1), "double-well")


def double_well_logpdf(x: np.ndarray, height: float = 1.0) -> np.ndarray:
    return -height * (np.asarray(x) ** 2 - 1.0) ** 2
