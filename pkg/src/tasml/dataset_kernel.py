"""Kernels between datasets and the task-weight scoring function.

A dataset is summarized by its signature, the mean of (optionally
feature-mapped) inputs over its support examples. Kernels on signatures
give a similarity between tasks; fitting ridge coefficients against the
kernel matrix of the training tasks yields a scoring function that, for
any target support set, produces one relevance weight per training task.
"""

import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, EmptyDataset
from .numerics import CholeskyFactor, cholesky_factor
from .taskgen import LabeledSet, MetaSet

KERNEL_FAMILIES = ("gaussian", "linear", "laplace")
FEATURE_MAPS = ("identity", "random_projection")

DEFAULT_SCORE_LAMBDA = 1e-8
DEFAULT_SIGMA = 50.0


@dataclass(frozen=True)
class KernelConfig:
    family: str = "gaussian"
    sigma: float = DEFAULT_SIGMA
    c: float = 0.0
    feature_map: str = "identity"
    proj_dim: int | None = None
    proj_seed: int = 0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.feature_map not in FEATURE_MAPS:
            raise ValueError(f"unknown feature map {self.feature_map!r}")
        if self.family in ("gaussian", "laplace") and not self.sigma > 0:
            raise ValueError("sigma must be > 0 for gaussian/laplace kernels")
        if self.c < 0:
            raise ValueError("linear offset c must be >= 0")
        if self.feature_map == "random_projection" and not self.proj_dim:
            raise ValueError("random_projection needs proj_dim")


@dataclass(frozen=True)
class Signature:
    """Mean embedding of a dataset's support inputs."""

    mean_embedding: np.ndarray  # (p,) float64
    n_points: int

    @property
    def dim(self) -> int:
        return self.mean_embedding.shape[0]


@dataclass(frozen=True)
class TaskWeights:
    """Scoring output: raw weights per training task, plus the top-M selection."""

    full: np.ndarray  # (N,) float64
    selected: tuple[tuple[int, float], ...] | None = None


@dataclass(frozen=True)
class ScoringModel:
    """Factorized (K + lambda I) plus the training signatures it was built from."""

    signatures: np.ndarray  # (N, p) stacked mean embeddings
    n_points: np.ndarray  # (N,) support sizes
    chol: CholeskyFactor
    lam: float
    kernel: KernelConfig

    @property
    def n_tasks(self) -> int:
        return self.signatures.shape[0]


@lru_cache(maxsize=16)
def _projection(d: int, p: int, seed: int) -> np.ndarray:
    """Fixed seeded (p, d) matrix with orthonormal rows."""
    if p > d:
        raise ValueError(f"projection dim {p} exceeds input dim {d}")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, p)))
    return np.ascontiguousarray(q.T)


def _feature_map(x: np.ndarray, kernel: KernelConfig) -> np.ndarray:
    if kernel.feature_map == "identity":
        return x
    proj = _projection(x.shape[1], kernel.proj_dim, kernel.proj_seed)
    return x @ proj.T


def signature(task_support: LabeledSet, kernel: KernelConfig) -> Signature:
    """Mean of feature-mapped support inputs.

    Rows are summed in lexicographic order so any reordering of the dataset
    yields a bitwise-equal signature.
    """
    if len(task_support) == 0:
        raise EmptyDataset("cannot compute the signature of an empty dataset")
    x = task_support.x
    order = np.lexsort(x.T[::-1])
    mapped = _feature_map(x[order], kernel)
    return Signature(
        mean_embedding=mapped.mean(axis=0), n_points=len(task_support)
    )


def kernel_eval(a: Signature, b: Signature, kernel: KernelConfig) -> float:
    """Scalar kernel value between two signatures."""
    if a.dim != b.dim:
        raise DimensionMismatch(f"signature dims differ: {a.dim} vs {b.dim}")
    u, v = a.mean_embedding, b.mean_embedding
    if kernel.family == "gaussian":
        return float(np.exp(-np.sum((u - v) ** 2) / kernel.sigma**2))
    if kernel.family == "laplace":
        return float(np.exp(-np.linalg.norm(u - v) / kernel.sigma))
    return float(u @ v + kernel.c)


def _pairwise_kernel(
    a: np.ndarray, b: np.ndarray, kernel: KernelConfig
) -> np.ndarray:
    if kernel.family == "gaussian":
        return np.exp(-cdist(a, b, "sqeuclidean") / kernel.sigma**2)
    if kernel.family == "laplace":
        return np.exp(-cdist(a, b, "euclidean") / kernel.sigma)
    return a @ b.T + kernel.c


def stack_signatures(
    train_tasks: MetaSet, kernel: KernelConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Signatures of every training task's support set, stacked row-wise."""
    sigs = [signature(t.support, kernel) for t in train_tasks.tasks]
    return (
        np.vstack([s.mean_embedding for s in sigs]),
        np.array([s.n_points for s in sigs], dtype=np.int64),
    )


def median_sigma(signatures_matrix: np.ndarray) -> float:
    """Median pairwise distance between signatures; bandwidth heuristic."""
    n = signatures_matrix.shape[0]
    if n < 2:
        return 1.0
    dists = cdist(signatures_matrix, signatures_matrix, "euclidean")
    med = float(np.median(dists[np.triu_indices(n, k=1)]))
    return med if med > 0 else 1.0


def fit_scoring(
    train_tasks: MetaSet,
    kernel: KernelConfig,
    lam: float = DEFAULT_SCORE_LAMBDA,
) -> ScoringModel:
    """Factor (K + lambda I) over the training tasks' signatures.

    The result is reusable for any number of target tasks; scoring a target
    is a kernel evaluation against the stored signatures plus one solve
    against the cached factor.
    """
    if not lam > 0:
        raise ValueError("lam must be > 0")
    if len(train_tasks) == 0:
        raise EmptyDataset("cannot fit scoring on an empty task set")
    sigs, n_points = stack_signatures(train_tasks, kernel)
    gram = _pairwise_kernel(sigs, sigs, kernel)
    gram = 0.5 * (gram + gram.T)  # kill last-bit asymmetry before factoring
    shifted = gram + lam * np.eye(gram.shape[0])
    chol = cholesky_factor(shifted, base_jitter=0.0)
    return ScoringModel(
        signatures=sigs, n_points=n_points, chol=chol, lam=lam, kernel=kernel
    )


def score(model: ScoringModel, target_support: LabeledSet) -> TaskWeights:
    """Relevance weights of every training task for the given target support."""
    target = signature(target_support, model.kernel)
    if target.dim != model.signatures.shape[1]:
        raise DimensionMismatch(
            f"target signature dim {target.dim} vs model dim {model.signatures.shape[1]}"
        )
    v = _pairwise_kernel(
        model.signatures, target.mean_embedding[None, :], model.kernel
    )[:, 0]
    full = model.chol.solve(v)
    return TaskWeights(full=full, selected=None)


def top_m_filter(weights: TaskWeights, m: int) -> TaskWeights:
    """Keep the M largest weights, clamp negatives, renormalize to sum 1.

    Ties are broken toward the lower index. If every kept weight clamps to
    zero, the selection falls back to uniform.
    """
    full = weights.full
    n = full.shape[0]
    if m < 1:
        raise ValueError("M must be >= 1")
    if m > n:
        warnings.warn(f"top-M filter: M={m} exceeds N={n}, clamping to N")
        m = n
    order = np.argsort(-full, kind="stable")[:m]
    kept = np.clip(full[order], 0.0, None)
    total = kept.sum()
    if total < 1e-12:
        kept = np.full(m, 1.0 / m)
    else:
        kept = kept / total
    selected = tuple((int(i), float(w)) for i, w in zip(order, kept))
    return TaskWeights(full=full, selected=selected)


def with_sigma(kernel: KernelConfig, sigma: float) -> KernelConfig:
    return replace(kernel, sigma=sigma)
