"""Configuration-driven command line: training experiments, sampler
diagnostics, variance-lab reports, and similarity probes.

Subcommands take a JSON config file; `--out` picks the output directory and
`--threads` the worker count for seed-parallel work. Exit codes are stable:
0 success, 2 config error, 3 numeric abort, 4 insufficient kernel rank.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .dpp import KDppSampler, kdpp_prob_bruteforce
from .errors import ConfigError, InsufficientRankError, NumericError, ValidationError
from .kernel import cka
from .rl.config import SELECTION_MODES, RedqConfig
from .rl.train import RunResult, metrics_csv, train_run
from .rng import make_rng
from .variance_lab import (
    Independent,
    KdppDriven,
    NegativelyCoupled,
    VarianceModel,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_RANK = 4


def _load_json(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top-level JSON value must be an object")
    return payload


def _require_keys(payload: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(payload) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(payload)
    if missing:
        raise ConfigError(f"{where}: missing required keys {sorted(missing)}")


def _json_dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ----------------------------------------------------------------- train ---


def _train_one(args: tuple) -> tuple[str, int, RunResult]:
    redq_payload, selection, seed, total_steps, cadence = args
    cfg = RedqConfig.from_dict({**redq_payload, "selection": selection})
    result = train_run(cfg, seed=seed, total_steps=total_steps, cadence=cadence)
    return selection, seed, result


def cmd_train(config_path: str, out_dir: Path, threads: int) -> int:
    payload = _load_json(config_path)
    _require_keys(
        payload,
        allowed={"env", "seeds", "total_steps", "cadence", "selections", "redq", "out_dir"},
        required={"seeds", "total_steps", "redq"},
        where=config_path,
    )
    env_name = payload.get("env", "point_mass")
    if env_name != "point_mass":
        raise ConfigError(f"unknown env {env_name!r}; only 'point_mass' is available")
    seeds = payload["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    total_steps = payload["total_steps"]
    if not isinstance(total_steps, int) or total_steps < 1:
        raise ConfigError(f"total_steps must be a positive integer, got {total_steps}")
    cadence = payload.get("cadence", 100)
    if not isinstance(cadence, int) or cadence < 1:
        raise ConfigError(f"cadence must be a positive integer, got {cadence}")
    if not isinstance(payload["redq"], dict):
        raise ConfigError("redq must be an object")
    redq_payload = dict(payload["redq"])
    selections = payload.get("selections")
    if selections is None:
        selections = [redq_payload.get("selection", "dns")]
    if not isinstance(selections, list) or not selections:
        raise ConfigError("selections must be a non-empty list")
    for sel in selections:
        if sel not in SELECTION_MODES:
            raise ConfigError(f"unknown selection {sel!r}, expected one of {SELECTION_MODES}")
    redq_payload.pop("selection", None)
    # validate the payload once before any work
    RedqConfig.from_dict({**redq_payload, "selection": selections[0]})

    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (redq_payload, sel, seed, total_steps, cadence)
        for sel in selections
        for seed in seeds
    ]
    results: dict[tuple[str, int], RunResult] = {}
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for sel, seed, res in pool.map(_train_one, jobs):
                results[(sel, seed)] = res
    else:
        for job in jobs:
            sel, seed, res = _train_one(job)
            results[(sel, seed)] = res

    summary: dict = {"total_steps": total_steps, "seeds": seeds, "variants": {}}
    for sel in selections:
        finals = [results[(sel, s)].final_return for s in seeds]
        fwd = sum(
            results[(sel, s)].critic_ledger.forward_flops
            + results[(sel, s)].policy_ledger.forward_flops
            for s in seeds
        )
        bwd_critic = sum(results[(sel, s)].critic_ledger.backward_flops for s in seeds)
        bwd_policy = sum(results[(sel, s)].policy_ledger.backward_flops for s in seeds)
        summary["variants"][sel] = {
            "final_return_mean": float(np.mean(finals)),
            "final_return_std": float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0,
            "final_return_per_seed": finals,
            "fwd_flops": fwd,
            "bwd_flops_critic": bwd_critic,
            "bwd_flops_policy": bwd_policy,
            "bwd_flops": bwd_critic + bwd_policy,
            "dpp_fallbacks": sum(results[(sel, s)].dpp_fallbacks for s in seeds),
        }
        for seed in seeds:
            name = f"metrics_{sel}_seed{seed}.csv"
            (out_dir / name).write_text(metrics_csv(results[(sel, seed)]))
    if "all" in selections:
        base = summary["variants"]["all"]
        for sel in selections:
            var = summary["variants"][sel]
            var["bwd_ratio_vs_all"] = var["bwd_flops"] / base["bwd_flops"]
            var["bwd_critic_ratio_vs_all"] = (
                var["bwd_flops_critic"] / base["bwd_flops_critic"]
            )
    (out_dir / "summary.json").write_text(_json_dumps(summary))
    print(f"wrote {len(jobs)} metrics files and summary.json to {out_dir}")
    for sel in selections:
        var = summary["variants"][sel]
        line = f"  {sel:9s} mean final return {var['final_return_mean']:.4f}"
        if "bwd_ratio_vs_all" in var:
            line += f"  bwd ratio vs all {var['bwd_ratio_vs_all']:.4f}"
        print(line)
    return EXIT_OK


# ------------------------------------------------------------- dpp-check ---


def cmd_dpp_check(config_path: str, out_dir: Path) -> int:
    payload = _load_json(config_path)
    _require_keys(
        payload,
        allowed={"kernel", "k", "n_draws", "seed", "tv_threshold"},
        required={"kernel", "k"},
        where=config_path,
    )
    kernel = np.asarray(payload["kernel"], dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] != kernel.shape[1]:
        raise ConfigError(f"kernel must be a square matrix, got shape {kernel.shape}")
    if kernel.shape[0] > 12:
        raise ConfigError("dpp-check enumerates subsets; kernel size is capped at 12")
    k = payload["k"]
    if not isinstance(k, int) or k < 1:
        raise ConfigError(f"k must be a positive integer, got {k}")
    n_draws = payload.get("n_draws", 200_000)
    if not isinstance(n_draws, int) or n_draws < 1000:
        raise ConfigError(f"n_draws must be an integer >= 1000, got {n_draws}")
    seed = payload.get("seed", 0)
    threshold = payload.get("tv_threshold", 0.01)

    exact = kdpp_prob_bruteforce(kernel, k)
    sampler = KDppSampler.from_kernel(kernel, k)
    rng = make_rng(seed)
    counts: dict[tuple[int, ...], int] = {}
    for _ in range(n_draws):
        s = sampler.sample(rng)
        counts[s] = counts.get(s, 0) + 1
    support = set(exact) | set(counts)
    tv = 0.5 * sum(abs(counts.get(s, 0) / n_draws - exact.get(s, 0.0)) for s in support)

    print(f"{'subset':>16s} {'exact':>10s} {'empirical':>10s}")
    for subset in sorted(exact):
        emp = counts.get(subset, 0) / n_draws
        print(f"{str(subset):>16s} {exact[subset]:10.6f} {emp:10.6f}")
    print(f"total-variation distance: {tv:.6f} (threshold {threshold})")
    out_dir.mkdir(parents=True, exist_ok=True)
    report = {
        "k": k,
        "n_draws": n_draws,
        "seed": seed,
        "tv_distance": tv,
        "tv_threshold": threshold,
        "subsets": {
            ";".join(map(str, s)): {"exact": exact[s], "empirical": counts.get(s, 0) / n_draws}
            for s in sorted(exact)
        },
    }
    (out_dir / "dpp_check.json").write_text(_json_dumps(report))
    return EXIT_OK if tv <= threshold else EXIT_NUMERIC


# ----------------------------------------------------------- variance-lab ---

_DEFAULT_GRID = {
    "a": -1.0,
    "b": 1.0,
    "c_values": [0.2, 0.5, 0.9],
    "d_values": [-0.5, 0.2, 0.9],
    "p_values": [0.1, 0.5, 0.9],
}


def _coupling_from_payload(payload: dict, model: VarianceModel):
    kind = payload.get("coupling", "negatively_coupled")
    if kind == "independent":
        return Independent()
    if kind == "negatively_coupled":
        return NegativelyCoupled()
    if kind == "kdpp_driven":
        kernel = payload.get("kernel")
        if kernel is None:
            raise ConfigError("kdpp_driven coupling needs a 'kernel' matrix")
        k = payload.get("k")
        if not isinstance(k, int) or k < 1:
            raise ConfigError("kdpp_driven coupling needs a positive integer 'k'")
        return KdppDriven(np.asarray(kernel, dtype=np.float64), k)
    raise ConfigError(f"unknown coupling {kind!r}")


def cmd_variance_lab(config_path: str, out_dir: Path) -> int:
    payload = _load_json(config_path)
    _require_keys(
        payload,
        allowed={"n_draws", "seed", "experiments", "grid_n_draws"},
        required=set(),
        where=config_path,
    )
    n_draws = payload.get("n_draws", 1_000_000)
    seed = payload.get("seed", 0)
    rng = make_rng(seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    experiments = payload.get("experiments")
    reports = []
    if experiments is None:
        # default sweep: closed-form agreement across the parameter grid plus
        # one high-power coupled comparison and one determinantal drive
        grid_n = payload.get("grid_n_draws", 200_000)
        g = _DEFAULT_GRID
        for c, d, p in itertools.product(g["c_values"], g["d_values"], g["p_values"]):
            model = VarianceModel(
                a=g["a"], b=g["b"], c=c, d=d, p_marginal=p, p_joint=p * p
            )
            reports.append(run_experiment(model, Independent(), grid_n, rng))
        strong = VarianceModel(a=-1, b=1, c=0.9, d=0.9, p_marginal=0.5, p_joint=0.05)
        reports.append(run_experiment(strong, NegativelyCoupled(), n_draws, rng))
        kernel = 0.9 * np.ones((5, 5)) + 0.1 * np.eye(5)
        kdpp_model = VarianceModel(
            a=-1, b=1, c=0.9, d=0.9, p_marginal=0.4, p_joint=0.16, n_members=5
        )
        reports.append(run_experiment(kdpp_model, KdppDriven(kernel, 2), 100_000, rng))
    else:
        if not isinstance(experiments, list) or not experiments:
            raise ConfigError("experiments must be a non-empty list")
        for i, exp in enumerate(experiments):
            where = f"experiments[{i}]"
            _require_keys(
                exp,
                allowed={
                    "a", "b", "c", "d", "p_marginal", "p_joint", "n_members",
                    "coupling", "kernel", "k", "n_draws",
                },
                required={"a", "b", "c", "d", "p_marginal", "p_joint"},
                where=where,
            )
            model = VarianceModel(
                a=exp["a"],
                b=exp["b"],
                c=exp["c"],
                d=exp["d"],
                p_marginal=exp["p_marginal"],
                p_joint=exp["p_joint"],
                n_members=exp.get("n_members", 2),
            )
            coupling = _coupling_from_payload(exp, model)
            reports.append(run_experiment(model, coupling, exp.get("n_draws", n_draws), rng))

    failures = 0
    informational = 0
    for rep in reports:
        for name, value in rep["checks"].items():
            if value is True or value in ("reduced", "tie_within_error"):
                continue
            if value == "positive_coupling_informational":
                informational += 1
                continue
            failures += 1
    (out_dir / "variance_lab.json").write_text(_json_dumps({"experiments": reports}))
    print(
        f"{len(reports)} experiments, {failures} failed checks, "
        f"{informational} informational notes -> {out_dir / 'variance_lab.json'}"
    )
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


# -------------------------------------------------------------------- cka ---


def cmd_cka(path_x: str, path_y: str, kind: str, sigma: float | None) -> int:
    try:
        x = np.loadtxt(path_x, delimiter=",", ndmin=2)
        y = np.loadtxt(path_y, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load activations: {exc}") from exc
    value = cka(x, y, kind=kind, sigma=sigma)
    print(f"{value:.9g}")
    return EXIT_OK


# ------------------------------------------------------------------- main ---


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dppsel",
        description="Determinantal selection of ensemble critics: training, "
        "sampler diagnostics, and variance experiments.",
    )
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--threads", type=int, default=1, help="parallel workers for seeds")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run training per a JSON config")
    p_train.add_argument("config", help="JSON config path")

    p_check = sub.add_parser("dpp-check", help="empirical vs exact subset probabilities")
    p_check.add_argument("config", help="JSON config path")

    p_lab = sub.add_parser("variance-lab", help="closed-form vs MC variance report")
    p_lab.add_argument("config", help="JSON config path")

    p_cka = sub.add_parser("cka", help="similarity of two activation CSV files")
    p_cka.add_argument("activations_x", help="CSV, rows = examples")
    p_cka.add_argument("activations_y", help="CSV, rows = examples")
    p_cka.add_argument("--kernel", choices=["linear", "rbf"], default="linear")
    p_cka.add_argument("--sigma", type=float, default=None, help="rbf bandwidth")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    try:
        if args.command == "train":
            return cmd_train(args.config, out_dir, max(1, args.threads))
        if args.command == "dpp-check":
            return cmd_dpp_check(args.config, out_dir)
        if args.command == "variance-lab":
            return cmd_variance_lab(args.config, out_dir)
        if args.command == "cka":
            return cmd_cka(args.activations_x, args.activations_y, args.kernel, args.sigma)
        raise ConfigError(f"unknown command {args.command!r}")
    except InsufficientRankError as exc:
        print(f"error: insufficient kernel rank: {exc}", file=sys.stderr)
        return EXIT_RANK
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
