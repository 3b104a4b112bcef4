"""How many independent chains are needed to visit every functional mode.

Each chain lands in mode ``j`` with probability ``p_j``; the number of chains
``T`` until every mode has been seen is a coupon-collector waiting time. Its
expectation follows from inclusion-exclusion over subsets of modes, and
Markov's inequality turns that into a bound on ``P(T < n_chains)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_MODES = 24


@dataclass(frozen=True)
class ModeSpec:
    probabilities: tuple[float, ...]

    def __post_init__(self) -> None:
        pi = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "probabilities", pi)
        if not 1 <= len(pi) <= MAX_MODES:
            raise ValueError(f"need 1..{MAX_MODES} modes, got {len(pi)}")
        if any(not p > 0 for p in pi):
            raise ValueError("every mode needs a positive visit probability")
        if abs(math.fsum(pi) - 1.0) > 1e-9:
            raise ValueError(f"mode probabilities sum to {math.fsum(pi)}, not 1")

    @property
    def n_modes(self) -> int:
        return len(self.probabilities)


@dataclass(frozen=True)
class BoundResult:
    expected_chains: float
    bound_probability: float
    required_chains: int


class _Kahan:
    def __init__(self) -> None:
        self.total = 0.0
        self.comp = 0.0

    def add(self, x: float) -> None:
        y = x - self.comp
        t = self.total + y
        self.comp = (t - self.total) - y
        self.total = t


def expected_chains(spec: ModeSpec) -> float:
    """``E(T) = sum_{q<m} (-1)^{m-1-q} sum_{|J|=q} 1 / (1 - p_J)`` for ``m`` modes, ``p_J`` the mass of ``J``."""
    pi = spec.probabilities
    n_modes = len(pi)
    acc = _Kahan()
    for q in range(n_modes):
        inner = _Kahan()
        for J in itertools.combinations(range(n_modes), q):
            rest = 1.0 - math.fsum(pi[j] for j in J)
            if rest <= 0.0:
                raise ValueError(f"modes {J} already exhaust the probability mass")
            inner.add(1.0 / rest)
        acc.add(inner.total if (n_modes - 1 - q) % 2 == 0 else -inner.total)
    return acc.total


def bound_probability(spec: ModeSpec, n_chains: int) -> float:
    """Lower bound on ``P(T < n_chains)``; negative values are valid but vacuous."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    return 1.0 - expected_chains(spec) / n_chains


def required_chains(spec: ModeSpec, p_target: float) -> int:
    """Smallest chain count whose bound reaches ``p_target``."""
    if not 0.0 < p_target < 1.0:
        raise ValueError("p_target must lie in (0, 1)")
    eg = expected_chains(spec)
    n = max(1, math.ceil(eg / (1.0 - p_target)))
    # guard against the ceil landing one off through rounding in the division
    while n > 1 and 1.0 - eg / (n - 1) >= p_target:
        n -= 1
    while 1.0 - eg / n < p_target:
        n += 1
    return n


def chain_bound(spec: ModeSpec, p_target: float) -> BoundResult:
    n = required_chains(spec, p_target)
    return BoundResult(expected_chains(spec), bound_probability(spec, n), n)


def mc_oracle_expected_chains(
    spec: ModeSpec, n_trials: int, rng: np.random.Generator, block: int = 64, max_batch: int = 200_000
) -> tuple[float, float]:
    """Simulate chains landing in modes until all are seen; mean and standard error."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    cdf = np.cumsum(spec.probabilities)
    cdf[-1] = 1.0
    n_modes = spec.n_modes
    counts = np.empty(n_trials, dtype=np.int64)
    for start in range(0, n_trials, max_batch):
        n = min(max_batch, n_trials - start)
        seen = np.zeros((n, n_modes), dtype=bool)
        done_at = np.zeros(n, dtype=np.int64)
        active = np.arange(n)
        offset = 0
        while active.size:
            draws = np.searchsorted(cdf, rng.random((active.size, block)), side="right")
            draws = np.minimum(draws, n_modes - 1)
            hit = draws[:, :, None] == np.arange(n_modes)
            # first step within the block where each mode appears (block if never)
            first = np.where(hit.any(axis=1), hit.argmax(axis=1), block)
            first = np.where(seen[active], -1, first)
            complete = (first < block).all(axis=1)
            done_at[active[complete]] = offset + first[complete].max(axis=1) + 1
            seen[active] |= hit.any(axis=1)
            active = active[~complete]
            offset += block
        counts[start:start + n] = done_at
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(n_trials)) if n_trials > 1 else 0.0
    return mean, se
