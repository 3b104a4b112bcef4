"""Command-line entry point: ``symmcmc <command> [options]``.

Results go to stdout (or ``--out``) as JSON, bulk numbers as CSV, and a short
human-readable summary to stderr. Failures exit with status 1 and a JSON
error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from symmcmc import analysis, chains, data, model, removal
from symmcmc.net import Architecture
from symmcmc.sampler import SampleSet, SamplerConfig, run_chains
from symmcmc.targets import mlp_posterior

log = logging.getLogger("symmcmc")


class StageError(Exception):
    def __init__(self, stage: str, cause: str) -> None:
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _emit(result: dict, out: str | None) -> None:
    text = json.dumps(result, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _summary(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_arch(path: str) -> Architecture:
    try:
        return Architecture.load(path)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise StageError("load-architecture", str(exc)) from exc


def _load_dataset(path: str, targets: str | None) -> data.Dataset:
    cols = targets.split(",") if targets else None
    try:
        return data.load_csv(path, cols)
    except (OSError, ValueError) as exc:
        raise StageError("load-data", str(exc)) from exc


def _load_samples(path: str, arch: Architecture) -> SampleSet:
    try:
        return SampleSet.from_csv(path, arch)
    except (OSError, ValueError) as exc:
        raise StageError("load-samples", str(exc)) from exc


def _check_dims(arch: Architecture, ds: data.Dataset) -> None:
    if ds.X.shape[1] != arch.n_inputs or ds.Y.shape[1] != arch.n_outputs:
        raise StageError("validate", f"data is {ds.X.shape[1]} -> {ds.Y.shape[1]}, architecture is "
                                     f"{arch.n_inputs} -> {arch.n_outputs}")


def _parse_pi(text: str) -> chains.ModeSpec:
    try:
        return chains.ModeSpec(tuple(float(v) for v in text.split(",")))
    except ValueError as exc:
        raise StageError("bound", str(exc)) from exc


def _sampler_config(args) -> SamplerConfig:
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text())
    if args.warmup is not None:
        cfg["warmup_steps"] = args.warmup
    if args.max_tree_depth is not None:
        cfg["max_tree_depth"] = args.max_tree_depth
    cfg["seed"] = args.seed
    return SamplerConfig(**cfg)


def _removal_config(args) -> removal.RemovalConfig:
    return removal.RemovalConfig(C=args.C, K_beta=args.K_beta, k=args.k, iterations=args.iterations)


def cmd_gen_data(args) -> dict:
    if args.dataset == "regression2d":
        ds = data.gen_regression2d(args.n_points or 256, args.seed)
    else:
        spec = data.SinusoidSpec(args.amplitude, args.frequency, args.noise, tuple(_intervals(args.intervals)))
        ds = data.gen_sinusoidal(args.n_points or 150, args.seed, spec)
    train, test = data.split_standardize(ds, args.train_frac, args.split_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train.to_csv(out / "train.csv")
    test.to_csv(out / "test.csv")
    data.save_metadata(train, out / "meta.json")
    _summary(f"{ds.name}: {len(train)} train / {len(test)} test rows written to {out}")
    return {"dataset": ds.name, "n_train": len(train), "n_test": len(test),
            "train": str(out / "train.csv"), "test": str(out / "test.csv")}


def _intervals(text: str) -> list[tuple[float, float]]:
    pairs = []
    for part in text.split(";"):
        lo, hi = part.split(",")
        pairs.append((float(lo), float(hi)))
    return pairs


def cmd_sample(args) -> dict:
    arch = _load_arch(args.arch)
    ds = _load_dataset(args.data, args.targets)
    _check_dims(arch, ds)
    cfg = _sampler_config(args)
    t0 = time.perf_counter()
    try:
        samples = run_chains(mlp_posterior(arch, ds.regression_data), cfg, args.chains, args.draws_per_chain,
                             workers=args.workers, arch=arch, progress=True)
    except RuntimeError as exc:
        raise StageError("sample", str(exc)) from exc
    samples.to_csv(args.out)
    diags = [d for d in samples.diagnostics if not d.failed]
    n_div = sum(d.n_divergent for d in diags)
    result = {
        "samples": args.out,
        "n_draws": len(samples),
        "n_chains": args.chains,
        "failed_chains": sum(d.failed for d in samples.diagnostics),
        "divergent_transitions": n_div,
        "divergence_flag": n_div > 0.25 * len(samples),
        "mean_accept": float(np.mean([d.mean_accept for d in diags])),
    }
    _summary(f"{len(samples)} draws from {args.chains} chains in {time.perf_counter() - t0:.1f}s")
    return result


def cmd_bound(args) -> dict:
    spec = _parse_pi(args.pi)
    res = chains.chain_bound(spec, args.target)
    result = {"expected_chains": res.expected_chains, "required_chains": res.required_chains,
              "bound_probability": res.bound_probability}
    if args.chains is not None:
        result["bound_probability_at_chains"] = chains.bound_probability(spec, args.chains)
    if args.oracle_trials:
        mean, se = chains.mc_oracle_expected_chains(spec, args.oracle_trials, np.random.default_rng(args.seed))
        result["oracle_expected_chains"] = mean
        result["oracle_se"] = se
    _summary(f"expected chains {res.expected_chains:.6g}; {res.required_chains} chains for P >= {args.target}")
    return result


def cmd_remove(args) -> dict:
    arch = _load_arch(args.arch)
    samples = _load_samples(args.samples, arch)
    try:
        canon, report = removal.geometry_removal(samples, _removal_config(args), np.random.default_rng(args.seed))
    except ValueError as exc:
        raise StageError("remove-symmetries", str(exc)) from exc
    canon.to_csv(args.out)
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_json(), indent=2) + "\n")
    _summary(f"canonicalized {len(canon)} draws -> {args.out}")
    return {"samples": args.out, "report": report.to_json()}


def cmd_evaluate(args) -> dict:
    arch = _load_arch(args.arch)
    samples = _load_samples(args.samples, arch)
    test = _load_dataset(args.test, args.targets)
    _check_dims(arch, test)
    res = analysis.lppd(samples, test.X, test.Y)
    _summary(f"mean LPPD {res.mean:.4f} (± {res.se:.4f}) over {len(test)} test points")
    return res.to_json()


def _grid(args) -> analysis.GridSpec:
    return analysis.GridSpec(args.x_min, args.x_max, args.n_x, args.y_min, args.y_max, args.n_y)


def cmd_kl_track(args) -> dict:
    arch = _load_arch(args.arch)
    samples = _load_samples(args.samples, arch)
    kl = analysis.kl_consecutive(samples, _grid(args))
    with open(args.csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["draw", "kl"])
        for g, v in enumerate(kl, start=2):
            writer.writerow([g, repr(float(v))])
    _summary(f"KL at draw {len(samples)}: {kl[-1]:.3g}")
    return {"csv": args.csv, "n_draws": len(samples), "final_kl": float(kl[-1])}


def cmd_ppd_grid(args) -> dict:
    arch = _load_arch(args.arch)
    samples = _load_samples(args.samples, arch)
    grid = analysis.ppd_grid(samples, _grid(args))
    with open(args.csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "density"])
        for row in grid.rows():
            writer.writerow([repr(v) for v in row])
    return {"csv": args.csv, "n_x": len(grid.x_grid), "n_y": len(grid.y_grid)}


def cmd_cluster(args) -> dict:
    arch = _load_arch(args.arch)
    samples = _load_samples(args.samples, arch)
    res = analysis.spectral_cluster(samples.thetas, args.k_clusters, args.knn, seed=args.seed)
    with open(args.csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain_id", "draw_idx", "cluster"])
        for c, k, lab in zip(samples.chain_ids, samples.draw_idx, res.labels):
            writer.writerow([int(c), int(k), int(lab)])
    sizes = np.bincount(res.labels, minlength=args.k_clusters + 1)[1:]
    _summary(f"cluster sizes {sizes.tolist()}")
    return {"csv": args.csv, "cluster_sizes": sizes.tolist(), "eigenvalues": res.eigenvalues.tolist()}


def _state_csv(states: list[model.ParamState], path: str) -> None:
    s = SampleSet(np.array([st.as_vector() for st in states]), np.arange(len(states)), np.zeros(len(states)))
    s.to_csv(path)


def cmd_map(args) -> dict:
    arch = _load_arch(args.arch)
    ds = _load_dataset(args.data, args.targets)
    _check_dims(arch, ds)
    init = model.prior_init(arch, np.random.default_rng(args.seed))
    try:
        state = model.map_estimate(ds.regression_data, arch, init, args.steps, args.lr)
    except FloatingPointError as exc:
        raise StageError("map", str(exc)) from exc
    _state_csv([state], args.out)
    loss, _ = model.map_loss_and_grad(state.as_vector(), ds.regression_data.kernel_args(arch))
    return {"state": args.out, "loss": loss, "sigma": state.sigma}


def cmd_ensemble(args) -> dict:
    arch = _load_arch(args.arch)
    ds = _load_dataset(args.data, args.targets)
    _check_dims(arch, ds)
    seeds = [args.seed + i for i in range(args.members)]
    try:
        members = model.deep_ensemble(ds.regression_data, arch, args.members, seeds, args.steps, args.lr)
    except FloatingPointError as exc:
        raise StageError("ensemble", str(exc)) from exc
    _state_csv(members, args.out)
    return {"samples": args.out, "members": args.members}


@dataclass
class ExperimentConfig:
    """Everything one end-to-end run needs; loaded from JSON."""

    arch: dict
    dataset: dict = field(default_factory=lambda: {"name": "regression2d", "n_points": 256})
    sampler: dict = field(default_factory=dict)
    removal: dict = field(default_factory=dict)
    bound: dict = field(default_factory=lambda: {"pi": [0.57, 0.35, 0.08], "p_target": 0.99})
    chains: int | None = None
    draws_per_chain: int = 1
    out_dir: str = "run"
    seed: int = 0

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        return cls(**json.loads(Path(path).read_text()))


def cmd_run(args) -> dict:
    cfg = ExperimentConfig.load(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arch = Architecture.from_json(cfg.arch)
    arch.save(out / "arch.json")
    ds_cfg = dict(cfg.dataset)
    name = ds_cfg.pop("name", "regression2d")
    if name == "regression2d":
        ds = data.gen_regression2d(ds_cfg.get("n_points", 256), cfg.seed)
    elif name == "sinusoidal":
        spec = data.SinusoidSpec(**{k: v for k, v in ds_cfg.items() if k != "n_points"})
        ds = data.gen_sinusoidal(ds_cfg.get("n_points", 150), cfg.seed, spec)
    else:
        raise StageError("gen-data", f"unknown dataset {name!r}")
    train, test = data.split_standardize(ds, 0.8, cfg.seed)
    _check_dims(arch, train)
    train.to_csv(out / "train.csv")
    test.to_csv(out / "test.csv")
    data.save_metadata(train, out / "meta.json")

    bound = chains.chain_bound(chains.ModeSpec(tuple(cfg.bound["pi"])), cfg.bound["p_target"])
    n_chains = cfg.chains or bound.required_chains
    scfg = SamplerConfig(**{**cfg.sampler, "seed": cfg.seed})
    samples = run_chains(mlp_posterior(arch, train.regression_data), scfg, n_chains, cfg.draws_per_chain,
                         workers=args.workers, arch=arch, progress=True)
    samples.to_csv(out / "samples.csv")
    canon, report = removal.geometry_removal(samples, removal.RemovalConfig(**cfg.removal),
                                             np.random.default_rng(cfg.seed))
    canon.to_csv(out / "canonical.csv")
    res = analysis.lppd(samples, test.X, test.Y)
    result = {
        "bound": asdict(bound),
        "n_chains": n_chains,
        "lppd": {"mean_lppd": res.mean, "se": res.se},
        "removal": report.to_json(),
    }
    if arch.n_inputs == 1 and len(samples) > 1:
        kl = analysis.kl_consecutive(samples)
        with open(out / "kl.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["draw", "kl"])
            for g, v in enumerate(kl, start=2):
                writer.writerow([g, repr(float(v))])
        result["final_kl"] = float(kl[-1])
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    _summary(f"run complete: mean LPPD {res.mean:.4f} with {n_chains} chains; outputs in {out}")
    return result


def _add_grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--x-min", type=float, default=-3.0)
    p.add_argument("--x-max", type=float, default=3.0)
    p.add_argument("--n-x", type=int, default=61)
    p.add_argument("--y-min", type=float, default=-3.0)
    p.add_argument("--y-max", type=float, default=3.0)
    p.add_argument("--n-y", type=int, default=121)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symmcmc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and split a synthetic dataset")
    p.add_argument("--dataset", choices=["regression2d", "sinusoidal"], default="regression2d")
    p.add_argument("--n-points", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--frequency", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--intervals", default="-1,1", help="input intervals as 'lo,hi;lo,hi'; write --intervals=-2,-1;1,2 when the value starts with '-'")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("sample", help="run many independent NUTS chains")
    p.add_argument("--arch", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--targets")
    p.add_argument("--config", help="sampler config JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--draws-per-chain", type=int, default=1)
    p.add_argument("--warmup", type=int)
    p.add_argument("--max-tree-depth", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="sample CSV")
    p.add_argument("--summary")
    p.set_defaults(func=cmd_sample, out_key="summary")

    p = sub.add_parser("bound", help="number of chains needed to visit every mode")
    p.add_argument("--pi", required=True, help="comma-separated mode probabilities")
    p.add_argument("--target", type=float, default=0.99)
    p.add_argument("--chains", type=int, help="also report the bound at this chain count")
    p.add_argument("--oracle-trials", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, help="accepted for symmetry; the vectorized oracle runs in one process")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("remove-symmetries", help="canonicalize samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--K-beta", type=int, default=8)
    p.add_argument("--k", type=int, default=1024)
    p.add_argument("--iterations", type=int, default=256)
    p.set_defaults(func=cmd_remove, out_key=None)

    p = sub.add_parser("evaluate", help="mean test LPPD")
    p.add_argument("--samples", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--targets")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("kl-track", help="KL between consecutive predictive grids")
    p.add_argument("--samples", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--out")
    _add_grid_args(p)
    p.set_defaults(func=cmd_kl_track)

    p = sub.add_parser("ppd-grid", help="dump the predictive density grid as CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--out")
    _add_grid_args(p)
    p.set_defaults(func=cmd_ppd_grid)

    p = sub.add_parser("cluster", help="spectral clustering of (canonicalized) draws")
    p.add_argument("--samples", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--csv", required=True)
    p.add_argument("--k-clusters", type=int, default=3)
    p.add_argument("--knn", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    for name, func, help_ in (("map", cmd_map, "single MAP estimate"), ("ensemble", cmd_ensemble, "deep ensemble")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--arch", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--targets")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, default=500)
        p.add_argument("--lr", type=float, default=1e-4)
        p.add_argument("--out", required=True, help="parameter CSV")
        p.add_argument("--summary")
        if name == "ensemble":
            p.add_argument("--members", type=int, default=10)
        p.set_defaults(func=func, out_key="summary")

    p = sub.add_parser("run", help="end-to-end experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_key = getattr(args, "out_key", "out")
    try:
        result = args.func(args)
    except StageError as exc:
        print(json.dumps({"error": {"stage": exc.stage, "cause": exc.cause}}), file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(json.dumps({"error": {"stage": args.command, "cause": str(exc)}}), file=sys.stderr)
        return 1
    _emit(result, getattr(args, out_key) if out_key else None)
    return 0


if __name__ == "__main__":
    sys.exit(main())
