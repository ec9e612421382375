"""Meta-objectives over task sets and the stochastic optimizer.

The unconditional objective averages the task loss over a batch; the
weighted objective scales each task's loss by a relevance weight and can
add a target-task term in which the target's support set plays both the
support and query role. Both return exact gradients assembled from the
per-task closed-form gradients.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionMismatch
from .ls_meta_learn import MetaParams, task_loss_grad
from .taskgen import Task

DEFAULT_LEARNING_RATE = 1e-4


@dataclass(frozen=True)
class WeightedObjectiveSpec:
    weighted_tasks: tuple[tuple[Task, float], ...]
    target_task: Task | None
    beta1: float = 1.0
    beta2: float = 1.0
    lambda_theta: float = 0.1
    l2_theta: float = 0.0

    def __post_init__(self):
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta weights must be >= 0")
        if any(w < 0 for _, w in self.weighted_tasks):
            raise ValueError("task weights must be >= 0")
        if not self.weighted_tasks and not (
            self.target_task is not None and self.beta2 > 0
        ):
            raise ValueError(
                "spec needs weighted tasks or a target task with beta2 > 0"
            )


def erm_objective(
    theta: MetaParams,
    batch: list[Task] | tuple[Task, ...],
    lambda_theta: float,
    l2_theta: float,
) -> tuple[float, np.ndarray]:
    """Mean task loss over the batch plus one l2 term, with exact gradient."""
    if not batch:
        raise ValueError("batch is empty")
    loss_sum = 0.0
    grad_sum = np.zeros(theta.size)
    for task in batch:
        report, grad = task_loss_grad(
            theta, task.support, task.query, lambda_theta, l2_theta=0.0
        )
        loss_sum += report.loss
        grad_sum += grad
    n = len(batch)
    loss = loss_sum / n
    grad = grad_sum / n
    if l2_theta > 0:
        flat = theta.to_flat()
        loss += l2_theta * float(flat @ flat)
        grad = grad + 2.0 * l2_theta * flat
    return loss, grad


def weighted_objective(
    theta: MetaParams, spec: WeightedObjectiveSpec
) -> tuple[float, np.ndarray]:
    """Relevance-weighted sum of task losses plus the optional target term.

    loss = beta1 * sum_i w_i * L(task_i) + beta2 * L(target support as both
    support and query) + l2_theta * ||theta||^2, with the exact gradient.
    Terms are accumulated in index order so results are reproducible.
    """
    loss = 0.0
    grad = np.zeros(theta.size)
    if spec.beta1 > 0:
        for task, w in spec.weighted_tasks:
            if w == 0.0:
                continue
            report, g = task_loss_grad(
                theta, task.support, task.query, spec.lambda_theta, l2_theta=0.0
            )
            loss += spec.beta1 * w * report.loss
            grad += (spec.beta1 * w) * g
    if spec.beta2 > 0:
        if spec.target_task is None:
            raise ValueError("beta2 > 0 requires a target task")
        sup = spec.target_task.support
        report, g = task_loss_grad(
            theta, sup, sup, spec.lambda_theta, l2_theta=0.0
        )
        loss += spec.beta2 * report.loss
        grad += spec.beta2 * g
    if spec.l2_theta > 0:
        flat = theta.to_flat()
        loss += spec.l2_theta * float(flat @ flat)
        grad = grad + 2.0 * spec.l2_theta * flat
    return loss, grad


@dataclass(frozen=True)
class OptimizerState:
    """Adam or plain-SGD state over the flat parameter vector."""

    learning_rate: float
    mode: str = "adam"
    step_count: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.mode not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer mode {self.mode!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def optimizer_init(
    theta: MetaParams,
    learning_rate: float = DEFAULT_LEARNING_RATE,
    mode: str = "adam",
) -> OptimizerState:
    dim = theta.size
    return OptimizerState(
        learning_rate=learning_rate,
        mode=mode,
        step_count=0,
        m=np.zeros(dim),
        v=np.zeros(dim),
    )


def optimizer_step(
    state: OptimizerState, theta: MetaParams, grad: np.ndarray
) -> tuple[OptimizerState, MetaParams]:
    """One deterministic update; SGD mode is exactly theta - lr * grad."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (theta.size,):
        raise DimensionMismatch(
            f"gradient shape {grad.shape} does not match parameter count {theta.size}"
        )
    flat = theta.to_flat()
    t = state.step_count + 1
    if state.mode == "sgd":
        new_flat = flat - state.learning_rate * grad
        new_state = replace(state, step_count=t)
    else:
        m = state.beta1 * state.m + (1 - state.beta1) * grad
        v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        new_flat = flat - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
        new_state = replace(state, step_count=t, m=m, v=v)
    return new_state, MetaParams.from_flat(theta.p, new_flat)
