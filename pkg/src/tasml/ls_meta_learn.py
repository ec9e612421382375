"""Least-squares inner learner over a residual meta-representation.

The representation is a two-layer fully-connected network with a residual
connection, features(x) = x + W2 relu(W1 x + b1) + b2, applied to embedded
inputs. The per-task predictor is a linear head fit in closed form by ridge
regression on the task's support features, and the task loss is the mean
squared error between head outputs and one-hot targets on the query set.

Gradients with respect to the representation parameters are exact: the
backward pass differentiates through the closed-form ridge solve using
d(A^-1) = -A^-1 dA A^-1 with the same Cholesky factor reused for the
adjoint solves.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .numerics import cholesky_factor
from .taskgen import LabeledSet

DEFAULT_LAMBDA_THETA = 0.1


@dataclass(frozen=True)
class MetaParams:
    """Parameters of the residual representation network."""

    w1: np.ndarray  # (p, p)
    b1: np.ndarray  # (p,)
    w2: np.ndarray  # (p, p)
    b2: np.ndarray  # (p,)

    def __post_init__(self):
        p = self.b1.shape[0]
        shapes = (self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape)
        if shapes != ((p, p), (p,), (p, p), (p,)):
            raise DimensionMismatch(f"inconsistent parameter shapes {shapes}")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(arr).all():
                raise ValueError("parameters contain NaN or Inf")

    @property
    def p(self) -> int:
        return self.b1.shape[0]

    @property
    def size(self) -> int:
        return 2 * self.p * self.p + 2 * self.p

    def to_flat(self) -> np.ndarray:
        return np.concatenate(
            [self.w1.ravel(), self.b1, self.w2.ravel(), self.b2]
        )

    @classmethod
    def from_flat(cls, p: int, flat: np.ndarray) -> "MetaParams":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (2 * p * p + 2 * p,):
            raise DimensionMismatch(
                f"flat vector has shape {flat.shape}, expected ({2 * p * p + 2 * p},)"
            )
        i = 0
        w1 = flat[i : i + p * p].reshape(p, p).copy()
        i += p * p
        b1 = flat[i : i + p].copy()
        i += p
        w2 = flat[i : i + p * p].reshape(p, p).copy()
        i += p * p
        b2 = flat[i : i + p].copy()
        return cls(w1=w1, b1=b1, w2=w2, b2=b2)

    @classmethod
    def initial(cls, p: int, rng: np.random.Generator) -> "MetaParams":
        """Scaled Gaussian weights (std sqrt(2/p)), zero biases."""
        std = np.sqrt(2.0 / p)
        return cls(
            w1=std * rng.standard_normal((p, p)),
            b1=np.zeros(p),
            w2=std * rng.standard_normal((p, p)),
            b2=np.zeros(p),
        )

    @classmethod
    def zeros(cls, p: int) -> "MetaParams":
        return cls(
            w1=np.zeros((p, p)), b1=np.zeros(p), w2=np.zeros((p, p)), b2=np.zeros(p)
        )


@dataclass(frozen=True)
class RidgeHead:
    """Closed-form linear head; predictions are W @ features(x)."""

    w: np.ndarray  # (C, p)
    lambda_theta: float


@dataclass(frozen=True)
class TaskLossReport:
    loss: float
    accuracy: float
    per_example: np.ndarray | None = None


def _forward(theta: MetaParams, x: np.ndarray):
    """Batched representation forward pass; returns (pre-activation, hidden, features)."""
    z = x @ theta.w1.T + theta.b1
    h = np.maximum(z, 0.0)
    phi = x + h @ theta.w2.T + theta.b2
    return z, h, phi


def repr_forward(theta: MetaParams, x: np.ndarray) -> np.ndarray:
    """Residual representation of one input vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != theta.p:
        raise DimensionMismatch(
            f"input dim {batch.shape[1]} does not match parameter dim {theta.p}"
        )
    _, _, phi = _forward(theta, batch)
    return phi[0] if single else phi


def _one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    return np.eye(n_classes)[y]


def solve_head(
    theta: MetaParams,
    support: LabeledSet,
    lambda_theta: float = DEFAULT_LAMBDA_THETA,
) -> RidgeHead:
    """Fit the linear head by ridge regression on the support features.

    Solved in the dual (m x m) form W = Phi^T (Phi Phi^T + lam I)^-1 Y,
    which is cheap because support sets are small.
    """
    if len(support) == 0:
        raise DimensionMismatch("support set is empty")
    if not lambda_theta > 0:
        raise ValueError("lambda_theta must be > 0")
    _, _, phi = _forward(theta, support.x)
    y = _one_hot(support.y, support.n_classes)
    gram = phi @ phi.T + lambda_theta * np.eye(phi.shape[0])
    coef = cholesky_factor(gram, base_jitter=0.0).solve(y)
    return RidgeHead(w=(phi.T @ coef).T, lambda_theta=lambda_theta)


def task_loss(
    theta: MetaParams,
    support: LabeledSet,
    query: LabeledSet,
    lambda_theta: float = DEFAULT_LAMBDA_THETA,
) -> TaskLossReport:
    """Mean squared error and accuracy of the ridge head on the query set."""
    head = solve_head(theta, support, lambda_theta)
    _, _, phi_q = _forward(theta, query.x)
    preds = phi_q @ head.w.T
    resid = preds - _one_hot(query.y, query.n_classes)
    per_example = np.sum(resid**2, axis=1)
    return TaskLossReport(
        loss=float(per_example.mean()),
        accuracy=float(np.mean(np.argmax(preds, axis=1) == query.y)),
        per_example=per_example,
    )


def _backprop_features(theta, x, z, grad_phi):
    """Gradient of the representation parameters given d(loss)/d(features)."""
    h = np.maximum(z, 0.0)
    g_w2 = grad_phi.T @ h
    g_b2 = grad_phi.sum(axis=0)
    grad_z = (grad_phi @ theta.w2) * (z > 0)
    g_w1 = grad_z.T @ x
    g_b1 = grad_z.sum(axis=0)
    return g_w1, g_b1, g_w2, g_b2


def task_loss_grad(
    theta: MetaParams,
    support: LabeledSet,
    query: LabeledSet,
    lambda_theta: float = DEFAULT_LAMBDA_THETA,
    l2_theta: float = 0.0,
) -> tuple[TaskLossReport, np.ndarray]:
    """Task loss plus the exact gradient of [loss + l2_theta * ||theta||^2].

    The report carries the bare task loss; the returned flat gradient
    includes the l2 term when l2_theta > 0.
    """
    if l2_theta < 0:
        raise ValueError("l2_theta must be >= 0")
    # forward
    z_s, h_s, phi_s = _forward(theta, support.x)
    z_q, _, phi_q = _forward(theta, query.x)
    y_s = _one_hot(support.y, support.n_classes)
    m = phi_s.shape[0]
    q = phi_q.shape[0]
    gram = phi_s @ phi_s.T + lambda_theta * np.eye(m)
    factor = cholesky_factor(gram, base_jitter=0.0)
    coef = factor.solve(y_s)  # (m, C)
    w_pc = phi_s.T @ coef  # (p, C)
    preds = phi_q @ w_pc
    resid = preds - _one_hot(query.y, query.n_classes)
    per_example = np.sum(resid**2, axis=1)
    report = TaskLossReport(
        loss=float(per_example.mean()),
        accuracy=float(np.mean(np.argmax(preds, axis=1) == query.y)),
        per_example=per_example,
    )

    # backward: loss = ||phi_q w - Y_q||^2 / q with w = phi_s^T (gram)^-1 y_s
    g_preds = (2.0 / q) * resid  # (q, C)
    g_w = phi_q.T @ g_preds  # (p, C)
    grad_phi_q = g_preds @ w_pc.T  # (q, p)
    grad_phi_s = coef @ g_w.T  # (m, p), from w = phi_s^T coef
    g_coef = phi_s @ g_w  # (m, C)
    # coef = gram^-1 y_s and d(gram^-1) = -gram^-1 d(gram) gram^-1
    g_coef_solved = factor.solve(g_coef)
    g_gram = -(g_coef_solved @ coef.T)  # (m, m)
    grad_phi_s += (g_gram + g_gram.T) @ phi_s

    g_s = _backprop_features(theta, support.x, z_s, grad_phi_s)
    g_q = _backprop_features(theta, query.x, z_q, grad_phi_q)
    grad = MetaParams(
        w1=g_s[0] + g_q[0],
        b1=g_s[1] + g_q[1],
        w2=g_s[2] + g_q[2],
        b2=g_s[3] + g_q[3],
    ).to_flat()
    if l2_theta > 0:
        grad = grad + 2.0 * l2_theta * theta.to_flat()
    return report, grad
