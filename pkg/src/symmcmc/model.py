"""Bayesian regression with an MLP mean function.

Prior: standard normal on every network parameter, standard normal truncated
to the positive half-line on the likelihood scale sigma. Sigma is handled on
the log scale, so densities over ``log_sigma`` include the Jacobian term.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from symmcmc import _kernels
from symmcmc.net import Architecture, forward, param_dim

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ParamState:
    theta: np.ndarray
    log_sigma: float = 0.0

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=float)
        self.log_sigma = float(self.log_sigma)
        if not (np.all(np.isfinite(self.theta)) and math.isfinite(self.log_sigma)):
            raise ValueError("parameter state has non-finite entries")

    @property
    def sigma(self) -> float:
        return math.exp(self.log_sigma)

    def as_vector(self) -> np.ndarray:
        return np.append(self.theta, self.log_sigma)

    @classmethod
    def from_vector(cls, q: np.ndarray) -> "ParamState":
        q = np.asarray(q, dtype=float)
        return cls(q[:-1].copy(), float(q[-1]))


@dataclass
class RegressionData:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=float)
        Y = np.asarray(self.Y, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ValueError("data contains non-finite entries")
        self.X = np.ascontiguousarray(X)
        self.Y = np.ascontiguousarray(Y)

    def __len__(self) -> int:
        return self.X.shape[0]

    def check(self, arch: Architecture) -> None:
        if self.X.shape[1] != arch.n_inputs or self.Y.shape[1] != arch.n_outputs:
            raise ValueError(
                f"data is {self.X.shape[1]} -> {self.Y.shape[1]} but architecture is "
                f"{arch.n_inputs} -> {arch.n_outputs}"
            )

    def kernel_args(self, arch: Architecture) -> tuple:
        self.check(arch)
        act = _kernels.TANH if arch.hidden_activation == "tanh" else _kernels.RELU
        return (np.ascontiguousarray(self.X.T), self.Y, np.asarray(arch.layer_widths, dtype=np.int64), act)


def empty_data(arch: Architecture) -> RegressionData:
    return RegressionData(np.zeros((0, arch.n_inputs)), np.zeros((0, arch.n_outputs)))


def log_prior(state: ParamState) -> float:
    theta = state.theta
    sigma = state.sigma
    lp_theta = -0.5 * theta.size * LOG_2PI - 0.5 * float(theta @ theta)
    lp_sigma = math.log(2.0) - 0.5 * LOG_2PI - 0.5 * sigma**2
    return lp_theta + lp_sigma + state.log_sigma


def log_likelihood(state: ParamState, data: RegressionData, arch: Architecture) -> float:
    data.check(arch)
    if len(data) == 0:
        return 0.0
    resid = data.Y - forward(arch, state.theta, data.X)
    n_terms = resid.size
    return -0.5 * n_terms * LOG_2PI - n_terms * state.log_sigma - 0.5 * float(np.sum(resid**2)) / state.sigma**2


def log_posterior(state: ParamState, data: RegressionData, arch: Architecture) -> float:
    return log_prior(state) + log_likelihood(state, data, arch)


def grad_log_posterior(state: ParamState, data: RegressionData, arch: Architecture) -> np.ndarray:
    """Gradient with respect to ``(theta, log_sigma)``, length ``d + 1``."""
    if state.theta.shape[0] != param_dim(arch):
        raise ValueError(f"expected {param_dim(arch)} parameters, got {state.theta.shape[0]}")
    _, grad = _kernels.log_posterior_and_grad(state.as_vector(), data.kernel_args(arch))
    return grad


def map_loss_and_grad(q: np.ndarray, args: tuple) -> tuple[float, np.ndarray]:
    """Negative log posterior used for point estimates, over ``(theta, log_sigma)``.

    ``L = SSE / (2 sigma^2) + N log(sigma) + theta'theta / 2`` (with ``N`` the
    number of scalar targets); no prior on sigma.
    """
    Y = args[1]
    d = q.shape[0] - 1
    theta, log_sigma = q[:d], q[d]
    sse, g_sse = _kernels.sse_and_grad(theta, *args)
    inv_s2 = math.exp(-2.0 * log_sigma)
    n_terms = Y.size
    loss = 0.5 * sse * inv_s2 + n_terms * log_sigma + 0.5 * float(theta @ theta)
    grad = np.empty_like(q)
    grad[:d] = 0.5 * inv_s2 * g_sse + theta
    grad[d] = -sse * inv_s2 + n_terms
    return loss, grad


class NonFiniteLossError(FloatingPointError):
    pass


def map_estimate(
    data: RegressionData,
    arch: Architecture,
    init: ParamState,
    steps: int = 500,
    learning_rate: float = 1e-4,
    decay: float = 0.9,
    eps: float = 1e-8,
    record_every: int = 0,
) -> ParamState | tuple[ParamState, list[float]]:
    """Full-batch RMSProp on the point-estimate loss; returns the best iterate.

    With ``record_every > 0`` also returns the best-so-far loss every
    ``record_every`` steps.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    args = data.kernel_args(arch)
    q = init.as_vector()
    avg_sq = np.zeros_like(q)
    best_q, best_loss = q.copy(), math.inf
    history = []
    for t in range(steps):
        loss, grad = map_loss_and_grad(q, args)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NonFiniteLossError(f"non-finite loss at step {t} (loss={loss}, log_sigma={q[-1]:.3g})")
        if loss < best_loss:
            best_loss, best_q = loss, q.copy()
        avg_sq = decay * avg_sq + (1.0 - decay) * grad**2
        q = q - learning_rate * grad / (np.sqrt(avg_sq) + eps)
        if record_every and (t + 1) % record_every == 0:
            history.append(best_loss)
    loss, _ = map_loss_and_grad(q, args)
    if math.isfinite(loss) and loss < best_loss:
        best_loss, best_q = loss, q.copy()
    log.debug("map_estimate: best loss %.6g after %d steps", best_loss, steps)
    best = ParamState.from_vector(best_q)
    return (best, history) if record_every else best


def prior_init(arch: Architecture, rng: np.random.Generator) -> ParamState:
    return ParamState(rng.standard_normal(param_dim(arch)), 0.0)


def deep_ensemble(
    data: RegressionData,
    arch: Architecture,
    m_members: int = 10,
    seeds: list[int] | None = None,
    steps: int = 500,
    learning_rate: float = 1e-4,
) -> list[ParamState]:
    """Independent MAP fits from distinct random initializations, no bootstrapping."""
    if m_members < 1:
        raise ValueError("m_members must be >= 1")
    if seeds is None:
        seeds = list(range(m_members))
    if len(seeds) != m_members:
        raise ValueError("need one seed per ensemble member")
    return [
        map_estimate(data, arch, prior_init(arch, np.random.default_rng(s)), steps, learning_rate)
        for s in seeds
    ]
