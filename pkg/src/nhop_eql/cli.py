# Command-line experiment driver: estimate / train / verify pipelines with
# CSV artifacts.
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, ExperimentConfig, parse_config
from .ensemble import run_neql_pipeline, run_simple_q, run_vi_ensemble
from .environments import TabularEnvironment
from .estimation import estimate_model, estimation_error
from .mdp import matrix_power_ptt, value_iteration
from .metrics import atomic_write_text

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCOMPLETE = 3
EXIT_VERIFY_FAILED = 4

MODEL_MAGIC = "# nhop-eql model v1"
POLICY_MAGIC = "# nhop-eql policy v1"


def _thread_count(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("NHOP_EQL_THREADS", "1")))


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    out = args.out or os.environ.get("NHOP_EQL_OUT") or cfg.output_dir
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _map_seeds(fn, seeds, threads: int):
    """Run one job per seed, preserving seed order in the results."""
    if threads <= 1 or len(seeds) <= 1:
        return [fn(seed) for seed in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


def _fmt_array_records(arr: np.ndarray) -> list[str]:
    lines = []
    for index in zip(*np.nonzero(arr)):
        lines.append(" ".join(str(int(i)) for i in index) + f" {float(arr[index])!r}")
    return lines


def write_model_file(path, model, cfg: ExperimentConfig) -> None:
    """Model file: metadata header, then kernel and cost sections in the
    sparse record format used by the tensor files."""
    p = model.p_hat.entries
    c = model.c_hat.expected_costs
    lines = [
        MODEL_MAGIC,
        f"# samples_used={model.samples_used} min_visits={cfg.sampling.min_visits} "
        f"cap={cfg.sampling.max_total_samples} complete={int(model.complete)} "
        f"config_hash={cfg.config_hash()}",
        "ptt " + " ".join(str(d) for d in p.shape),
        *_fmt_array_records(p),
        "costs " + " ".join(str(d) for d in c.shape),
        *_fmt_array_records(c),
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_policy_file(path, policy: np.ndarray, cfg: ExperimentConfig, seed: int) -> None:
    lines = [POLICY_MAGIC,
             f"# seed={seed} config_hash={cfg.config_hash()}",
             "state action"]
    lines += [f"{s} {int(a)}" for s, a in enumerate(policy)]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _geometric_milestones(start: int, cap: int, ratio: float = 2.0) -> list[int]:
    out = []
    m = max(2, start)
    while m <= cap:
        out.append(int(m))
        m = int(np.ceil(m * ratio))
    return out


def cmd_estimate(cfg: ExperimentConfig, out_dir: Path, threads: int) -> int:
    env = cfg.build_env()
    S, A = env.num_states, env.num_actions
    milestones = _geometric_milestones(S * A, cfg.sampling.max_total_samples)

    def job(seed: int):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE57]))
        curve: list[tuple[int, float]] = []

        def checkpoint(samples, snapshot):
            curve.append((samples, estimation_error(env.ptt, snapshot.p_hat)))

        model = estimate_model(env, cfg.sampling, rng, milestones, checkpoint)
        curve.append((model.samples_used, estimation_error(env.ptt, model.p_hat)))
        return model, curve

    results = _map_seeds(job, cfg.seeds, threads)
    status = EXIT_OK
    for seed, (model, curve) in zip(cfg.seeds, results):
        write_model_file(out_dir / f"model_seed{seed}.txt", model, cfg)
        lines = ["# nhop-eql estimation v1",
                 f"# seed={seed} config_hash={cfg.config_hash()}",
                 "samples,error"]
        lines += [f"{n},{e:.12g}" for n, e in curve]
        atomic_write_text(out_dir / f"estimation_error_seed{seed}.csv",
                          "\n".join(lines) + "\n")
        if not model.complete:
            log.error("seed %d: sample cap hit before the visit target", seed)
            status = EXIT_INCOMPLETE
    return status


def cmd_train(cfg: ExperimentConfig, out_dir: Path, threads: int,
              baseline: str | None, plots: bool) -> int:
    env = cfg.build_env()
    _, _, q_star = value_iteration(env.ptt, env.costs, cfg.gamma)

    def job(seed: int):
        t0 = time.perf_counter()
        result = run_neql_pipeline(
            env, cfg.sampling, cfg.schedules, cfg.gamma, seed,
            q_star=q_star, probe_cells=cfg.probe_cells,
            max_iters=cfg.max_iters,
            track_learner_errors=bool(cfg.probe_cells),
        )
        result.log.config_hash = cfg.config_hash()
        result.log.wall_time = time.perf_counter() - t0
        base = None
        if baseline == "simple":
            base = run_simple_q(env, cfg.schedules, cfg.gamma,
                                v=cfg.sampling.min_visits,
                                l=cfg.sampling.trajectory_length, seed=seed,
                                q_star=q_star, probe_cells=cfg.probe_cells,
                                max_iters=len(result.log))
            base.log.config_hash = cfg.config_hash()
        elif baseline == "vi":
            base = run_vi_ensemble(env, cfg.sampling, cfg.schedules, cfg.gamma,
                                   seed, max_iters=max(1, len(result.log)
                                                       // cfg.sampling.trajectory_length))
            base.log.config_hash = cfg.config_hash()
        return result, base

    results = _map_seeds(job, cfg.seeds, threads)
    status = EXIT_OK
    for seed, (result, base) in zip(cfg.seeds, results):
        result.log.to_csv(out_dir / f"metrics_seed{seed}.csv")
        write_policy_file(out_dir / f"policy_seed{seed}.txt", result.policy, cfg, seed)
        if base is not None:
            base.log.to_csv(out_dir / f"baseline_{baseline}_seed{seed}.csv")
        if not result.complete:
            log.warning("seed %d: iteration cap reached before full visit coverage", seed)
            status = EXIT_INCOMPLETE
    if plots:
        _maybe_plot_ape(out_dir, cfg, [r for r, _ in results])
    return status


def _maybe_plot_ape(out_dir: Path, cfg: ExperimentConfig, results) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping plots")
        return
    fig, ax = plt.subplots()
    for seed, result in zip(cfg.seeds, results):
        ax.plot(result.log.iterations, result.log.ape, label=f"seed {seed}")
    ax.set_xlabel("iteration")
    ax.set_ylabel("APE")
    ax.legend()
    fig.savefig(out_dir / "ape.png", dpi=120)
    plt.close(fig)


def _powered_envs(env: TabularEnvironment, orders: tuple[int, ...]) -> list[TabularEnvironment]:
    return [
        TabularEnvironment(ptt=matrix_power_ptt(env.ptt, n), costs=env.costs,
                           rng_seed=env.rng_seed, label=n)
        for n in orders
    ]


def cmd_verify(cfg: ExperimentConfig, out_dir: Path, threads: int) -> int:
    env = cfg.build_env()
    _, pi_star, q_star = value_iteration(env.ptt, env.costs, cfg.gamma)
    report = analysis.CheckReport()

    if "prop3" in cfg.checks:
        envs = _powered_envs(env, tuple(range(1, 11)))
        report.extend(analysis.check_prop3(envs, pi_star, cfg.gamma))

    if "prop4" in cfg.checks:
        envs = _powered_envs(env, (1, 2, 3, 4, 6, 8, 12))
        report.extend(analysis.check_prop4_ordering(envs, pi_star))

    need_run = {"bounds", "adc", "weights"} & set(cfg.checks)
    if need_run:
        probes = cfg.probe_cells or ((0, 0),)
        schedules = cfg.schedules
        if "bounds" in cfg.checks:
            # a constant blend keeps the steady-state variance nonzero so the
            # closed-form bounds are a meaningful comparison
            schedules = replace(schedules, update_form="constant")
        result = run_neql_pipeline(
            env, cfg.sampling, schedules, cfg.gamma, cfg.seeds[0],
            q_star=q_star, probe_cells=probes, max_iters=cfg.max_iters,
            track_learner_errors=True,
        )
        T = len(result.log)
        errs = result.log.ensemble_errors[:, 0]
        w10 = max(2, T // 10)

        if "bounds" in cfg.checks:
            lam = analysis.estimate_lambda(result.log.learner_errors, slice(0, w10))
            params = analysis.BoundParams(u=schedules.u_constant, lam=lam,
                                          K=cfg.sampling.num_environments)
            late_var = float(np.var(errs[-w10:]))
            report.add("bounds", "prop1", "late_variance_vs_bound", late_var,
                       analysis.prop1_bound(params))
            report.add("bounds", "cor2", "late_variance_le_bound", late_var,
                       analysis.cor2_bound(params),
                       late_var <= analysis.cor2_bound(params))

        if "adc" in cfg.checks:
            report.add("adc", "ensemble_error", "lagged_dcor",
                       analysis.adc_error_independence(errs))

        if "weights" in cfg.checks:
            w = result.log.weights
            K = w.shape[1]
            lo = 1.0 / (1.0 + (K - 1) * np.e)
            hi = np.e / (np.e + K - 1)
            sums_ok = bool(np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-9))
            in_band = bool(np.all((w >= lo - 1e-12) & (w <= hi + 1e-12)))
            report.add("weights", "simplex", "rows_sum_to_one", float(sums_ok), 1.0,
                       sums_ok)
            report.add("weights", "interval", "all_in_band", float(in_band), 1.0,
                       in_band)
            conv = analysis.weight_convergence(result.log)
            report.add("weights", "convergence", "iteration",
                       float(-1 if conv.convergence_iteration is None
                             else conv.convergence_iteration))

    if "variance_vs_k" in cfg.checks:
        def builder(K, seed):
            samp = replace(cfg.sampling, num_environments=K, order_set=())
            sch = replace(cfg.schedules, update_form="constant").with_learners(K)
            res = run_neql_pipeline(env, samp, sch, cfg.gamma, seed,
                                    q_star=q_star,
                                    probe_cells=cfg.probe_cells or ((0, 0),),
                                    max_iters=cfg.max_iters)
            return res.log

        report.extend(analysis.check_variance_vs_k(
            builder, [2, 4, 6], list(cfg.seeds), budget=cfg.max_iters))

    report.to_csv(out_dir / "report.csv")
    return EXIT_OK if report.ok else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhop-eql",
        description="Multi-timescale ensemble Q-learning experiment driver.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
        ("estimate", "estimate the transition model and error-vs-samples curve"),
        ("train", "run the ensemble learner and emit metrics and the policy"),
        ("verify", "run the theory checks and emit a report"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", required=True, help="experiment JSON file")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads across seeds")
        if name == "train":
            p.add_argument("--baseline", choices=("simple", "vi"))
            p.add_argument("--plots", action="store_true")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _out_dir(args, cfg)
    threads = _thread_count(args)
    if args.command == "estimate":
        return cmd_estimate(cfg, out_dir, threads)
    if args.command == "train":
        return cmd_train(cfg, out_dir, threads, args.baseline, args.plots)
    return cmd_verify(cfg, out_dir, threads)


if __name__ == "__main__":
    sys.exit(main())
