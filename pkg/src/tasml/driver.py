"""End-to-end driver: meta-train once, then adapt per target task.

Meta-training fits the scoring model over the training tasks and optionally
learns a shared warm-start initialization by unconditional training. For a
target task, adaptation scores and filters the training tasks, then runs a
fixed budget of optimizer steps on the weighted objective, re-initializing
from the warm start every time. The target's query set is used only to
measure accuracy, never inside any gradient.
"""

import io
import json
import math
import os
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig, from_dict as config_from_dict
from .dataset_kernel import (
    KernelConfig,
    ScoringModel,
    fit_scoring,
    median_sigma,
    score,
    stack_signatures,
    top_m_filter,
)
from .errors import ConfigInvalid
from .ls_meta_learn import MetaParams, task_loss
from .meta_objectives import (
    WeightedObjectiveSpec,
    erm_objective,
    optimizer_init,
    optimizer_step,
    weighted_objective,
)
from .numerics import CholeskyFactor
from .seeding import derive_rng
from .taskgen import (
    MetaSet,
    Task,
    load_embedding_metaset,
    read_embedding_file,
    sample_multimodal_tasks,
)

CHECKPOINT_FORMAT = "tasml-checkpoint-1"


@dataclass(frozen=True)
class TrainedSystem:
    scoring: ScoringModel
    theta0: MetaParams
    train_set: MetaSet
    snapshot: dict


@dataclass(frozen=True)
class AdaptationTrace:
    """Per-step record of one adaptation run; index 0 is pre-adaptation."""

    objective: np.ndarray  # (J+1,)
    accuracy: np.ndarray  # (J+1,) query accuracy; NaN where tracing is off
    final_theta: MetaParams
    selected: tuple[tuple[int, float], ...]
    loop_seconds: float

    @property
    def steps(self) -> int:
        return self.objective.shape[0] - 1


@dataclass(frozen=True)
class EvaluationSummary:
    final_acc: np.ndarray  # (n_tasks,)
    step0_acc: np.ndarray  # (n_tasks,)
    traces: tuple[AdaptationTrace, ...]

    @property
    def mean_acc(self) -> float:
        return float(self.final_acc.mean())

    @property
    def std_acc(self) -> float:
        return float(self.final_acc.std())

    @property
    def mean_step0(self) -> float:
        return float(self.step0_acc.mean())


def worker_count() -> int:
    """Bounded worker pool size; the TASML_THREADS env var caps it."""
    env = os.environ.get("TASML_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigInvalid("TASML_THREADS", f"not an integer: {env!r}") from None
    return min(4, os.cpu_count() or 1)


def build_metaset(
    cfg: ExperimentConfig, seed: int, split: str, n_tasks: int
) -> MetaSet:
    """Materialize one split of tasks from the configured source."""
    if cfg.source.type == "generator":
        return sample_multimodal_tasks(cfg.generator_config(seed), n_tasks, split)

    episode = dict(
        n_ways=cfg.n_ways,
        n_shots=cfg.n_shots,
        query_per_class=cfg.query_per_class,
        n_tasks=n_tasks,
        seed=seed,
    )
    if cfg.source.test_path:
        path = cfg.source.path if split == "train" else cfg.source.test_path
        return load_embedding_metaset(path, split=split, **episode)
    # one file: partition classes deterministically into disjoint split pools
    bank_ids = sorted(read_embedding_file(cfg.source.path))
    perm = derive_rng(seed, "class-split").permutation(len(bank_ids))
    n_train = max(1, math.ceil(cfg.source.train_fraction * len(bank_ids)))
    chosen = perm[:n_train] if split == "train" else perm[n_train:]
    ids = tuple(bank_ids[i] for i in sorted(chosen))
    if not ids:
        raise ConfigInvalid(
            "source.train_fraction", "leaves no classes for the test split"
        )
    return load_embedding_metaset(
        cfg.source.path, split=split, class_ids=ids, **episode
    )


def resolve_kernel(cfg: ExperimentConfig, train: MetaSet) -> KernelConfig:
    """Concrete kernel for a training set, resolving the median bandwidth."""
    if cfg.kernel.sigma != "median":
        return cfg.kernel_config()
    probe = cfg.kernel_config(sigma=1.0)
    sigs, _ = stack_signatures(train, probe)
    return cfg.kernel_config(sigma=median_sigma(sigs))


def meta_train(train: MetaSet, cfg: ExperimentConfig, seed: int) -> TrainedSystem:
    """Fit the scoring model and learn the shared warm-start parameters.

    With `random_init` set (or zero init steps) the warm start is the fresh
    initialization and no unconditional training runs.
    """
    if len(train) == 0:
        raise ValueError("training metaset is empty")
    kernel = resolve_kernel(cfg, train)
    scoring = fit_scoring(train, kernel, cfg.score_lambda)

    p = train.tasks[0].support.dim
    theta = MetaParams.initial(p, derive_rng(seed, "theta0"))
    if not cfg.random_init and cfg.init_steps > 0:
        state = optimizer_init(theta, cfg.learning_rate, cfg.optimizer)
        batch_rng = derive_rng(seed, "init-batches")
        n = len(train)
        for _ in range(cfg.init_steps):
            idx = batch_rng.integers(0, n, size=cfg.meta_batch)
            batch = [train.tasks[i] for i in idx]
            _, grad = erm_objective(theta, batch, cfg.lambda_theta, cfg.l2_theta)
            state, theta = optimizer_step(state, theta, grad)

    snapshot = {
        "format": CHECKPOINT_FORMAT,
        "seed": int(seed),
        "config": cfg.to_dict(),
        "kernel_resolved": {
            "family": kernel.family,
            "sigma": kernel.sigma,
            "c": kernel.c,
            "feature_map": kernel.feature_map,
            "proj_dim": kernel.proj_dim,
            "proj_seed": kernel.proj_seed,
        },
    }
    return TrainedSystem(
        scoring=scoring, theta0=theta, train_set=train, snapshot=snapshot
    )


def adapt(
    system: TrainedSystem,
    target: Task,
    *,
    adapt_steps: int,
    top_m: int,
    beta1: float,
    beta2: float,
    cfg: ExperimentConfig,
    batch_rng: np.random.Generator | None = None,
    batch_seed: int = 0,
    trace_eval: bool = True,
) -> AdaptationTrace:
    """Adapt the warm-start parameters to one target task.

    Scores the training tasks against the target support, keeps the top-M,
    then takes `adapt_steps` optimizer steps on mini-batches of the weighted
    objective (the target term rides along in every step). The trace records
    the objective per step and, when tracing is on, the query accuracy.
    """
    if adapt_steps < 0:
        raise ValueError("adapt_steps must be >= 0")
    weights = top_m_filter(score(system.scoring, target.support), top_m)
    tasks = system.train_set.tasks
    selected_tasks = [tasks[i] for i, _ in weights.selected]
    selected_w = np.array([w for _, w in weights.selected])
    n_sel = len(selected_tasks)
    rng = batch_rng if batch_rng is not None else derive_rng(batch_seed, "adapt-batches")

    objective = np.empty(adapt_steps + 1)
    accuracy = np.full(adapt_steps + 1, np.nan)

    def measure(theta: MetaParams) -> float:
        return task_loss(
            theta, target.support, target.query, cfg.lambda_theta
        ).accuracy

    full_spec = WeightedObjectiveSpec(
        weighted_tasks=tuple(zip(selected_tasks, selected_w)),
        target_task=target,
        beta1=beta1,
        beta2=beta2,
        lambda_theta=cfg.lambda_theta,
        l2_theta=cfg.l2_theta,
    )
    theta = system.theta0
    objective[0], _ = weighted_objective(theta, full_spec)
    if trace_eval or adapt_steps == 0:
        accuracy[0] = measure(theta)

    state = optimizer_init(theta, cfg.learning_rate, cfg.optimizer)
    scale = n_sel / cfg.meta_batch
    start = time.perf_counter()
    for step in range(1, adapt_steps + 1):
        idx = rng.integers(0, n_sel, size=cfg.meta_batch)
        batch_spec = WeightedObjectiveSpec(
            weighted_tasks=tuple(
                (selected_tasks[i], selected_w[i] * scale) for i in idx
            ),
            target_task=target,
            beta1=beta1,
            beta2=beta2,
            lambda_theta=cfg.lambda_theta,
            l2_theta=cfg.l2_theta,
        )
        loss, grad = weighted_objective(theta, batch_spec)
        state, theta = optimizer_step(state, theta, grad)
        objective[step] = loss
        if trace_eval:
            accuracy[step] = measure(theta)
    loop_seconds = time.perf_counter() - start
    if not trace_eval and adapt_steps > 0:
        accuracy[-1] = measure(theta)

    return AdaptationTrace(
        objective=objective,
        accuracy=accuracy,
        final_theta=theta,
        selected=weights.selected,
        loop_seconds=loop_seconds,
    )


def evaluate(
    system: TrainedSystem,
    test: MetaSet,
    *,
    adapt_steps: int,
    top_m: int,
    beta1: float,
    beta2: float,
    cfg: ExperimentConfig,
    seed: int,
    trace_eval: bool = True,
    workers: int | None = None,
) -> EvaluationSummary:
    """Adapt to every test task (in parallel) and aggregate final accuracies.

    Results are deterministic: each task gets its own derived batch stream
    and rows are collected in task order, not completion order.
    """
    if len(test) == 0:
        raise ValueError("test metaset is empty")

    def one(i: int) -> AdaptationTrace:
        return adapt(
            system,
            test.tasks[i],
            adapt_steps=adapt_steps,
            top_m=top_m,
            beta1=beta1,
            beta2=beta2,
            cfg=cfg,
            batch_rng=derive_rng(seed, "adapt", i),
            trace_eval=trace_eval,
        )

    n_workers = workers if workers is not None else worker_count()
    indices = range(len(test))
    if n_workers <= 1:
        traces = [one(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            traces = list(pool.map(one, indices))

    final_acc = np.array([t.accuracy[-1] for t in traces])
    step0_acc = np.array([t.accuracy[0] for t in traces])
    return EvaluationSummary(
        final_acc=final_acc, step0_acc=step0_acc, traces=tuple(traces)
    )


# ---------------------------------------------------------------------------
# Checkpointing


def _npy_bytes(arr: np.ndarray, dtype: str) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr.astype(dtype)))
    return buf.getvalue()


def save_checkpoint(system: TrainedSystem, path) -> None:
    """Single-archive checkpoint; contents round-trip bit-exactly."""
    entries = {
        "meta.json": json.dumps(
            system.snapshot, sort_keys=True, separators=(",", ":")
        ).encode(),
        "theta0/w1.npy": _npy_bytes(system.theta0.w1, "<f8"),
        "theta0/b1.npy": _npy_bytes(system.theta0.b1, "<f8"),
        "theta0/w2.npy": _npy_bytes(system.theta0.w2, "<f8"),
        "theta0/b2.npy": _npy_bytes(system.theta0.b2, "<f8"),
        "scoring/signatures.npy": _npy_bytes(system.scoring.signatures, "<f8"),
        "scoring/n_points.npy": _npy_bytes(system.scoring.n_points, "<i8"),
        "scoring/chol_lower.npy": _npy_bytes(system.scoring.chol.lower, "<f8"),
        "scoring/chol_jitter.npy": _npy_bytes(
            np.array(system.scoring.chol.jitter), "<f8"
        ),
        "scoring/lam.npy": _npy_bytes(np.array(system.scoring.lam), "<f8"),
    }
    # fixed timestamps so identical systems serialize to identical bytes
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, entries[name])


def load_checkpoint(path) -> TrainedSystem:
    """Rebuild a trained system; the training tasks are regenerated from the
    recorded config and seed, which is deterministic for both sources."""
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {meta.get('format')!r}")

        def arr(name: str) -> np.ndarray:
            return np.load(io.BytesIO(zf.read(name)))

        theta0 = MetaParams(
            w1=arr("theta0/w1.npy"),
            b1=arr("theta0/b1.npy"),
            w2=arr("theta0/w2.npy"),
            b2=arr("theta0/b2.npy"),
        )
        kernel = KernelConfig(**meta["kernel_resolved"])
        scoring = ScoringModel(
            signatures=arr("scoring/signatures.npy"),
            n_points=arr("scoring/n_points.npy"),
            chol=CholeskyFactor(
                lower=arr("scoring/chol_lower.npy"),
                jitter=float(arr("scoring/chol_jitter.npy").ravel()[0]),
            ),
            lam=float(arr("scoring/lam.npy").ravel()[0]),
            kernel=kernel,
        )
    cfg = config_from_dict(meta["config"])
    train = build_metaset(cfg, meta["seed"], "train", cfg.n_train_tasks)
    return TrainedSystem(
        scoring=scoring, theta0=theta0, train_set=train, snapshot=meta
    )
