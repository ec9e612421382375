"""Result serialization: delimited outputs plus rendered figures.

CSV files are byte-deterministic for a given config and seed: fixed column
order, fixed row order, fixed numeric formatting, and no timing values
(timings live in the bench report, which is inherently non-deterministic).
Figures are rendered to files next to the CSVs.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

RESULTS_HEADER = (
    "experiment",
    "variant",
    "seed",
    "mean_acc_pct",
    "std_acc_pct",
    "steps_per_sec",
    "wall_s",
)
TRACES_HEADER = ("experiment", "variant", "seed", "task", "step", "objective", "acc_pct")
CURVES_HEADER = ("experiment", "variant", "step", "mean_acc_pct", "std_acc_pct")

AGGREGATE_SEED = "all"


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    variant: str
    seed: str
    mean_acc_pct: float
    std_acc_pct: float
    steps_per_sec: str = "na"
    wall_s: str = "na"


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def round_written(value: float) -> float:
    """The value a reader of the CSV would see; aggregates use this so they
    stay recomputable from the file itself."""
    return float(_fmt(value))


def aggregate_rows(rows: list[ResultRow]) -> list[ResultRow]:
    """Append one aggregate row per (experiment, variant) group.

    The aggregate mean/std are the arithmetic mean and population standard
    deviation of the per-seed means as written to the file.
    """
    out = list(rows)
    groups: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        groups.setdefault((row.experiment, row.variant), []).append(
            round_written(row.mean_acc_pct)
        )
    for (experiment, variant), means in groups.items():
        arr = np.array(means)
        out.append(
            ResultRow(
                experiment=experiment,
                variant=variant,
                seed=AGGREGATE_SEED,
                mean_acc_pct=float(arr.mean()),
                std_acc_pct=float(arr.std()),
            )
        )
    return out


def write_results_csv(path: str | Path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.experiment,
                    row.variant,
                    row.seed,
                    _fmt(row.mean_acc_pct),
                    _fmt(row.std_acc_pct),
                    row.steps_per_sec,
                    row.wall_s,
                ]
            )


def write_traces_csv(path: str | Path, trace_rows: list[tuple]) -> None:
    """Rows are (experiment, variant, seed, task, step, objective, acc_pct)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACES_HEADER)
        for experiment, variant, seed, task, step, objective, acc in trace_rows:
            acc_str = "na" if np.isnan(acc) else _fmt(acc)
            writer.writerow(
                [experiment, variant, seed, task, step, _fmt(objective), acc_str]
            )


def curve_from_traces(
    trace_rows: list[tuple],
) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per (experiment, variant): steps, mean accuracy, std across tasks/seeds."""
    buckets: dict[tuple[str, str], dict[int, list[float]]] = {}
    for experiment, variant, _seed, _task, step, _objective, acc in trace_rows:
        if np.isnan(acc):
            continue
        buckets.setdefault((experiment, variant), {}).setdefault(step, []).append(acc)
    curves = {}
    for key, per_step in buckets.items():
        steps = np.array(sorted(per_step))
        mean = np.array([np.mean(per_step[s]) for s in steps])
        std = np.array([np.std(per_step[s]) for s in steps])
        curves[key] = (steps, mean, std)
    return curves


def write_curves_csv(path: str | Path, curves) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVES_HEADER)
        for (experiment, variant) in sorted(curves):
            steps, mean, std = curves[(experiment, variant)]
            for s, m, sd in zip(steps, mean, std):
                writer.writerow([experiment, variant, s, _fmt(m), _fmt(sd)])


def render_curves_png(path: str | Path, curves, title: str) -> None:
    """Accuracy-versus-step curves with a one-std band, one line per variant."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (_, variant) in sorted(curves):
        steps, mean, std = curves[(_, variant)]
        ax.plot(steps, mean, label=variant)
        ax.fill_between(steps, mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("adaptation step")
    ax.set_ylabel("query accuracy (%)")
    ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_variants_png(path: str | Path, rows: list[ResultRow], title: str) -> None:
    """Bar chart of aggregate accuracy per variant with std error bars."""
    agg = [r for r in rows if r.seed == AGGREGATE_SEED]
    if not agg:
        agg = rows
    labels = [r.variant for r in agg]
    means = [r.mean_acc_pct for r in agg]
    stds = [r.std_acc_pct for r in agg]
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(agg)), 4))
    xs = np.arange(len(agg))
    ax.bar(xs, means, yerr=stds, capsize=4, color="tab:blue", alpha=0.85)
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.set_title(title)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_bench_report(path: str | Path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
