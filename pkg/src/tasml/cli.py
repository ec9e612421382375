"""Command-line entry point.

Subcommands:
  run        meta-train and evaluate for every configured seed
  ablate     sweep one axis (kernel family, top-M, beta weights, steps, init)
  bench      time adaptation steps per second and the one-off scoring latency
  gen-tasks  export the synthetic class banks as an embedding file
"""

import argparse
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import reports
from .config import ExperimentConfig, load_config, scaled_top_m_grid
from .dataset_kernel import score
from .driver import adapt, build_metaset, evaluate, meta_train, save_checkpoint
from .errors import ConfigInvalid, TasmlError
from .taskgen import sample_class_bank, write_embedding_file

EPILOG = """\
output files (written into the configured output_dir):
  results.csv   experiment,variant,seed,mean_acc_pct,std_acc_pct,steps_per_sec,wall_s
                one row per (variant, seed) plus one aggregate row per variant
                (seed column 'all'); accuracies are percentages; timing columns
                are 'na' here because results files are byte-deterministic
  traces.csv    experiment,variant,seed,task,step,objective,acc_pct
                one row per adaptation step per test task (step 0 included)
  curves.csv    experiment,variant,step,mean_acc_pct,std_acc_pct
  *.png         rendered figures for the same data
  bench.json    steps/sec and scoring latency (bench subcommand only)
exit codes: 0 success, 2 configuration error, 1 runtime failure
"""


def _run_variants(cfg: ExperimentConfig, variants: list[tuple[str, ExperimentConfig]],
                  out_dir: Path, write_checkpoint: bool = False) -> int:
    """Shared pipeline behind `run` and `ablate`."""
    result_rows: list[reports.ResultRow] = []
    trace_rows: list[tuple] = []
    systems: dict[tuple, object] = {}

    for variant, vcfg in variants:
        for seed in vcfg.seeds:
            train_key = (
                seed,
                vcfg.kernel,
                vcfg.random_init,
                vcfg.init_steps,
                vcfg.source,
                vcfg.n_train_tasks,
            )
            if train_key not in systems:
                train = build_metaset(vcfg, seed, "train", vcfg.n_train_tasks)
                systems[train_key] = meta_train(train, vcfg, seed)
            system = systems[train_key]
            test = build_metaset(vcfg, seed, "test", vcfg.test_tasks)
            summary = evaluate(
                system,
                test,
                adapt_steps=vcfg.adapt_steps,
                top_m=vcfg.top_m,
                beta1=vcfg.beta1,
                beta2=vcfg.beta2,
                cfg=vcfg,
                seed=seed,
                trace_eval=vcfg.trace_eval,
            )
            result_rows.append(
                reports.ResultRow(
                    experiment=vcfg.experiment,
                    variant=variant,
                    seed=str(seed),
                    mean_acc_pct=100.0 * summary.mean_acc,
                    std_acc_pct=100.0 * summary.std_acc,
                )
            )
            for task_idx, trace in enumerate(summary.traces):
                for step in range(trace.steps + 1):
                    acc = trace.accuracy[step]
                    trace_rows.append(
                        (
                            vcfg.experiment,
                            variant,
                            seed,
                            task_idx,
                            step,
                            trace.objective[step],
                            100.0 * acc if not np.isnan(acc) else float("nan"),
                        )
                    )
            if write_checkpoint:
                save_checkpoint(system, out_dir / f"checkpoint_seed{seed}.tasml")

    all_rows = reports.aggregate_rows(result_rows)
    reports.write_results_csv(out_dir / "results.csv", all_rows)
    reports.write_traces_csv(out_dir / "traces.csv", trace_rows)
    curves = reports.curve_from_traces(trace_rows)
    reports.write_curves_csv(out_dir / "curves.csv", curves)
    if curves:
        reports.render_curves_png(
            out_dir / "accuracy_curve.png", curves, "query accuracy per adaptation step"
        )
    if len(variants) > 1:
        reports.render_variants_png(
            out_dir / "variants.png", all_rows, "accuracy by variant"
        )
    return 0


def cmd_run(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return _run_variants(cfg, [("tasml", cfg)], out_dir, write_checkpoint=True)


def _ablation_variants(cfg: ExperimentConfig, which: str):
    if which == "kernel":
        return [
            (family, cfg.with_overrides(kernel=replace(cfg.kernel, family=family)))
            for family in ("gaussian", "linear", "laplace")
        ]
    if which == "topm":
        return [
            (f"M={m}", cfg.with_overrides(top_m=m))
            for m in scaled_top_m_grid(cfg.n_train_tasks)
        ]
    if which == "beta":
        cells = ((0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (1.0, 2.0))
        return [
            (
                f"beta1={b1:g};beta2={b2:g}",
                cfg.with_overrides(beta1=b1, beta2=b2),
            )
            for b1, b2 in cells
        ]
    if which == "steps":
        return [("steps", cfg.with_overrides(trace_eval=True))]
    if which == "init":
        return [
            ("with-init", cfg.with_overrides(random_init=False)),
            ("random-init", cfg.with_overrides(random_init=True)),
        ]
    raise ConfigInvalid("which", f"unknown ablation {which!r}")


def cmd_ablate(cfg: ExperimentConfig, which: str) -> int:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return _run_variants(cfg, _ablation_variants(cfg, which), out_dir)


def cmd_bench(cfg: ExperimentConfig) -> int:
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    train = build_metaset(cfg, seed, "train", cfg.n_train_tasks)
    system = meta_train(train, cfg, seed)
    test = build_metaset(cfg, seed, "test", cfg.test_tasks)
    n_bench = min(len(test), 10)

    scoring_times = []
    rates = []
    for i in range(n_bench):
        task = test.tasks[i]
        t0 = time.perf_counter()
        score(system.scoring, task.support)
        scoring_times.append(time.perf_counter() - t0)
        trace = adapt(
            system,
            task,
            adapt_steps=cfg.adapt_steps,
            top_m=cfg.top_m,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            cfg=cfg,
            batch_seed=seed,
            trace_eval=False,
        )
        if cfg.adapt_steps > 0:
            rates.append(cfg.adapt_steps / trace.loop_seconds)

    if rates:
        mean_rate = statistics.mean(rates)
        std_rate = statistics.pstdev(rates)
        rate_line = f"meta-gradient steps/sec: {mean_rate:.2f} +/- {std_rate:.2f}"
    else:
        mean_rate = std_rate = None
        rate_line = "meta-gradient steps/sec: na (adapt_steps is 0)"
    scoring_ms = 1000.0 * statistics.mean(scoring_times)
    report = {
        "tasks_benched": n_bench,
        "adapt_steps": cfg.adapt_steps,
        "steps_per_sec_mean": mean_rate,
        "steps_per_sec_std": std_rate,
        "scoring_latency_ms_mean": scoring_ms,
        "n_train_tasks": cfg.n_train_tasks,
    }
    reports.write_bench_report(Path(cfg.output_dir) / "bench.json", report)
    print(rate_line)
    print(f"task-weight scoring latency: {scoring_ms:.2f} ms "
          f"(one-time per target, N={cfg.n_train_tasks})")
    return 0


def cmd_gen_tasks(cfg: ExperimentConfig, out: str, per_class: int) -> int:
    if cfg.source.type != "generator":
        raise ConfigInvalid("source.type", "gen-tasks needs a generator source")
    bank = sample_class_bank(cfg.generator_config(cfg.seeds[0]), per_class)
    out_path = Path(out)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_file(out_path, bank)
    print(f"wrote {len(bank)} classes x {per_class} examples to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tasml",
        description="Task-adaptive meta-learning experiments",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="meta-train and evaluate per seed")
    p_run.add_argument("config", help="path to the JSON experiment config")

    p_abl = sub.add_parser("ablate", help="run one ablation sweep")
    p_abl.add_argument(
        "--which",
        required=True,
        choices=("kernel", "topm", "beta", "steps", "init"),
        help="which axis to sweep",
    )
    p_abl.add_argument("config", help="path to the JSON experiment config")

    p_bench = sub.add_parser("bench", help="measure steps/sec and scoring latency")
    p_bench.add_argument("config", help="path to the JSON experiment config")

    p_gen = sub.add_parser(
        "gen-tasks", help="emit an embedding file from the synthetic generator"
    )
    p_gen.add_argument("config", help="path to the JSON experiment config")
    p_gen.add_argument("--out", required=True, help="output embedding file path")
    p_gen.add_argument(
        "--per-class", type=int, default=20, help="examples per class (default 20)"
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg, args.which)
        if args.command == "bench":
            return cmd_bench(cfg)
        if args.command == "gen-tasks":
            return cmd_gen_tasks(cfg, args.out, args.per_class)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TasmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
