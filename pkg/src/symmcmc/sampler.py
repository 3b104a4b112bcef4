"""NUTS chains and the many-short-chains orchestrator.

Each chain owns its random streams, derived only from its own seed, so chains
can run in any order or on any number of workers and still produce the same
draws. Initial states are drawn from the target's prior.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from symmcmc import _nuts
from symmcmc.model import ParamState
from symmcmc.net import Architecture, param_dim
from symmcmc.targets import Target

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    warmup_steps: int = 1024
    initial_step_size: float = 1.0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    adapt_mass: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.initial_step_size <= 0:
            raise ValueError("initial_step_size must be positive")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")


@dataclass
class ChainDiagnostics:
    chain_id: int
    seed: int
    step_size: float = float("nan")
    mean_accept: float = float("nan")
    n_divergent: int = 0
    mean_tree_depth: float = float("nan")
    n_leapfrog: int = 0
    failed: bool = False
    message: str = ""


@dataclass
class SampleSet:
    """Posterior draws stored row-wise as ``(theta_1..theta_d, log_sigma)``."""

    states: np.ndarray
    chain_ids: np.ndarray
    draw_idx: np.ndarray
    seeds: np.ndarray | None = None
    arch: Architecture | None = None
    diagnostics: list[ChainDiagnostics] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        G = self.states.shape[0]
        self.chain_ids = np.asarray(self.chain_ids, dtype=np.int64).reshape(G)
        self.draw_idx = np.asarray(self.draw_idx, dtype=np.int64).reshape(G)
        if self.seeds is not None:
            self.seeds = np.asarray(self.seeds, dtype=np.int64).reshape(G)
        if self.arch is not None and self.states.shape[1] != param_dim(self.arch) + 1:
            raise ValueError(f"draws have {self.states.shape[1]} columns, architecture needs "
                             f"{param_dim(self.arch) + 1}")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def thetas(self) -> np.ndarray:
        return self.states[:, :-1]

    @property
    def log_sigmas(self) -> np.ndarray:
        return self.states[:, -1]

    @property
    def sigmas(self) -> np.ndarray:
        return np.exp(self.states[:, -1])

    @property
    def draws(self) -> list[ParamState]:
        return [ParamState.from_vector(q) for q in self.states]

    def copy(self) -> "SampleSet":
        return SampleSet(self.states.copy(), self.chain_ids.copy(), self.draw_idx.copy(),
                         None if self.seeds is None else self.seeds.copy(), self.arch, list(self.diagnostics))

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.states[idx], self.chain_ids[idx], self.draw_idx[idx],
                         None if self.seeds is None else self.seeds[idx], self.arch)

    @classmethod
    def concat(cls, parts: list["SampleSet"]) -> "SampleSet":
        if not parts:
            raise ValueError("nothing to concatenate")
        seeds = None
        if all(p.seeds is not None for p in parts):
            seeds = np.concatenate([p.seeds for p in parts])
        return cls(
            np.concatenate([p.states for p in parts]),
            np.concatenate([p.chain_ids for p in parts]),
            np.concatenate([p.draw_idx for p in parts]),
            seeds,
            parts[0].arch,
            [d for p in parts for d in p.diagnostics],
        )

    def to_csv(self, path: str | Path) -> None:
        d = self.states.shape[1] - 1
        header = ["chain_id", "draw_idx"] + [f"theta_{i + 1}" for i in range(d)] + ["log_sigma"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for c, k, row in zip(self.chain_ids, self.draw_idx, self.states):
                writer.writerow([int(c), int(k)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path: str | Path, arch: Architecture | None = None) -> "SampleSet":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:2] != ["chain_id", "draw_idx"] or header[-1] != "log_sigma":
                raise ValueError(f"{path}: not a sample file (bad header)")
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                rows.append(row)
        if not rows:
            raise ValueError(f"{path}: no draws")
        table = np.array(rows, dtype=float)
        return cls(table[:, 2:], table[:, 0].astype(np.int64), table[:, 1].astype(np.int64), arch=arch)


class ChainFailure(RuntimeError):
    pass


def chain_seeds(seed: int) -> tuple[np.random.Generator, int]:
    """Initial-state generator and the 32-bit seed of the compiled sampler's stream."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1))
    init_ss, kernel_ss = ss.spawn(2)
    return np.random.default_rng(init_ss), int(kernel_ss.generate_state(1)[0])


def sample_chain(
    target: Target,
    config: SamplerConfig,
    n_draws: int = 1,
    chain_id: int = 0,
    init: np.ndarray | None = None,
    arch: Architecture | None = None,
    warn: bool = True,
) -> SampleSet:
    """Run one chain: warmup with step size and diagonal mass adaptation, then ``n_draws`` draws."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    rng, kernel_seed = chain_seeds(config.seed)
    q0 = target.init(rng) if init is None else np.asarray(init, dtype=float)
    if q0.shape != (target.dim,):
        raise ValueError(f"initial state has shape {q0.shape}, target dimension is {target.dim}")
    draws, accept, depths, leapfrogs, divergent, eps, _, status = _nuts.run_nuts(
        target.logp_grad, target.args, np.ascontiguousarray(q0), config.warmup_steps, n_draws,
        config.initial_step_size, config.target_accept, config.max_tree_depth, kernel_seed, config.adapt_mass,
    )
    if status != _nuts.STATUS_OK:
        raise ChainFailure(f"chain {chain_id}: non-finite log density or gradient at the initial state")
    post = slice(config.warmup_steps, None)
    diag = ChainDiagnostics(
        chain_id=chain_id,
        seed=config.seed,
        step_size=float(eps),
        mean_accept=float(accept[post].mean()),
        n_divergent=int(divergent[post].sum()),
        mean_tree_depth=float(depths[post].mean()),
        n_leapfrog=int(leapfrogs.sum()),
    )
    if diag.n_divergent > 0.25 * n_draws:
        diag.message = f"{diag.n_divergent} of {n_draws} post-warmup transitions diverged"
        if warn:
            log.warning("chain %d: %s", chain_id, diag.message)
    if not np.all(np.isfinite(draws)):
        raise ChainFailure(f"chain {chain_id}: non-finite draw")
    return SampleSet(draws, np.full(n_draws, chain_id), np.arange(n_draws), np.full(n_draws, config.seed),
                     arch, [diag])


def _run_one(args) -> SampleSet | ChainDiagnostics:
    target, config, n_draws, chain_id, arch = args
    try:
        # with one or two draws per chain a single divergence trips the per-chain rule; run_chains checks the pool
        return sample_chain(target, config, n_draws, chain_id, arch=arch, warn=False)
    except (ChainFailure, FloatingPointError, ValueError) as exc:
        return ChainDiagnostics(chain_id=chain_id, seed=config.seed, failed=True, message=str(exc))


def run_chains(
    target: Target,
    config: SamplerConfig,
    n_chains: int,
    draws_per_chain: int = 1,
    workers: int | None = None,
    arch: Architecture | None = None,
    max_failure_rate: float = 0.05,
    progress: bool = False,
) -> SampleSet:
    """Independent chains with seeds ``config.seed + chain_id``, merged in chain order."""
    if n_chains < 1:
        raise ValueError("n_chains must be >= 1")
    jobs = []
    for c in range(n_chains):
        cfg = SamplerConfig(config.warmup_steps, config.initial_step_size, config.target_accept,
                            config.max_tree_depth, config.adapt_mass, config.seed + c)
        jobs.append((target, cfg, draws_per_chain, c, arch))
    workers = workers or os.cpu_count() or 1
    if workers == 1 or n_chains == 1:
        results = []
        for i, job in enumerate(jobs):
            results.append(_run_one(job))
            if progress and (i + 1) % max(1, n_chains // 20) == 0:
                log.info("%d/%d chains done", i + 1, n_chains)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=max(1, n_chains // (4 * workers))))
    parts = [r for r in results if isinstance(r, SampleSet)]
    failed = [r for r in results if isinstance(r, ChainDiagnostics)]
    for f in failed:
        log.warning("chain %d failed: %s", f.chain_id, f.message)
    if len(failed) > max_failure_rate * n_chains or not parts:
        raise ChainFailure(f"{len(failed)} of {n_chains} chains failed")
    merged = SampleSet.concat(parts)
    merged.diagnostics.extend(failed)
    n_div = sum(p.diagnostics[0].n_divergent for p in parts)
    if n_div > 0.25 * len(merged):
        log.warning("%d of %d post-warmup transitions diverged", n_div, len(merged))
    return merged
