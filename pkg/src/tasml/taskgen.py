"""Episodic task generation.

Two sources are supported: a synthetic multimodal distribution with known
structure (each task records which mode generated it), and ingestion of
precomputed embedding files for real benchmarks.

Synthetic geometry. The embedding space is split into `n_modes` coordinate
blocks. Mode m places its mode centroid and all of its class-center offsets
inside block m, while per-example noise is isotropic over all dimensions.
Tasks of one mode therefore cluster in input space (so a kernel on dataset
means can tell modes apart), and the dimensions that carry class signal for
one mode are pure noise for every other mode, so no single representation
suits all modes at once. Each mode additionally relabels its classes by a
fixed permutation, making the x -> y map mode-dependent.

Class identities are partitioned into disjoint pools per (split, mode), so
train/validation/test tasks never share classes.
"""

import csv
import struct
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalid,
    FileMalformed,
    InsufficientClasses,
    InsufficientExamplesPerClass,
)
from .seeding import derive_rng

SPLITS = ("train", "validation", "test")

EMBEDDING_MAGIC = b"TASKEMB1"


@dataclass(frozen=True)
class LabeledSet:
    """Embedded examples with integer class labels in [0, n_classes)."""

    x: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int64
    n_classes: int

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=np.float64))
        y = np.ascontiguousarray(np.asarray(self.y, dtype=np.int64))
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError(f"inconsistent shapes x={x.shape} y={y.shape}")
        if not np.isfinite(x).all():
            raise ValueError("examples contain NaN or Inf")
        if y.size and (y.min() < 0 or y.max() >= self.n_classes):
            raise ValueError("labels out of range")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class Task:
    """A support/query pair; the episodic unit of meta-learning."""

    support: LabeledSet
    query: LabeledSet
    mode_id: int | None = None

    def __post_init__(self):
        if self.support.n_classes != self.query.n_classes:
            raise ValueError("support and query disagree on class count")
        if self.support.dim != self.query.dim:
            raise ValueError("support and query disagree on embedding dim")
        if not set(np.unique(self.query.y)) <= set(np.unique(self.support.y)):
            raise ValueError("query contains classes absent from support")


@dataclass(frozen=True)
class MetaSet:
    """An ordered collection of tasks for one split."""

    tasks: tuple[Task, ...]
    split: str
    class_pool: frozenset[int]

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass(frozen=True)
class GeneratorConfig:
    n_modes: int = 2
    d: int = 64
    n_ways: int = 5
    n_shots: int = 5
    query_per_class: int = 15
    cluster_spread: float = 1.0
    mode_permutations: tuple[tuple[int, ...], ...] | None = None
    seed: int = 0
    # geometry knobs; defaults give cleanly separated modes at desk scale
    mode_separation: float = 8.0
    signal_scale: float = 1.0
    classes_per_pool: int = 12

    def __post_init__(self):
        if self.n_modes < 1:
            raise ConfigInvalid("n_modes", "must be >= 1")
        if self.query_per_class < 1:
            raise ConfigInvalid("query_per_class", "must be >= 1")
        if self.n_ways < 2:
            raise ConfigInvalid("n_ways", "must be >= 2")
        if self.n_shots < 1:
            raise ConfigInvalid("n_shots", "must be >= 1")
        if self.d < self.n_modes:
            raise ConfigInvalid("d", "must be >= n_modes")
        if self.cluster_spread <= 0:
            raise ConfigInvalid("cluster_spread", "must be > 0")
        if self.classes_per_pool < self.n_ways:
            raise ConfigInvalid("classes_per_pool", "must be >= n_ways")
        if self.mode_permutations is not None:
            if len(self.mode_permutations) != self.n_modes:
                raise ConfigInvalid("mode_permutations", "need one per mode")
            for perm in self.mode_permutations:
                if sorted(perm) != list(range(self.n_ways)):
                    raise ConfigInvalid(
                        "mode_permutations", f"{perm} is not a permutation of ways"
                    )


def default_mode_permutations(
    n_modes: int, n_ways: int, seed: int
) -> tuple[tuple[int, ...], ...]:
    """Mode 0 keeps labels; two modes get {identity, reverse}; more get seeded shuffles."""
    perms = [tuple(range(n_ways))]
    if n_modes == 2:
        perms.append(tuple(range(n_ways - 1, -1, -1)))
    else:
        for m in range(1, n_modes):
            rng = derive_rng(seed, "mode-perm", m)
            perms.append(tuple(int(v) for v in rng.permutation(n_ways)))
    return tuple(perms[:n_modes])


def _block(cfg: GeneratorConfig, mode: int) -> slice:
    width = cfg.d // cfg.n_modes
    start = mode * width
    # last block absorbs the remainder dims
    stop = cfg.d if mode == cfg.n_modes - 1 else start + width
    return slice(start, stop)


def mode_centroids(cfg: GeneratorConfig) -> np.ndarray:
    """(n_modes, d) centroids; mode m sits on its own coordinate block."""
    centroids = np.zeros((cfg.n_modes, cfg.d))
    for m in range(cfg.n_modes):
        blk = _block(cfg, m)
        width = blk.stop - blk.start
        centroids[m, blk] = cfg.mode_separation / np.sqrt(width)
    return centroids


def class_pools(cfg: GeneratorConfig) -> dict[tuple[str, int], tuple[int, ...]]:
    """Disjoint class-id pools per (split, mode)."""
    pools = {}
    next_id = 0
    for split in SPLITS:
        for m in range(cfg.n_modes):
            ids = tuple(range(next_id, next_id + cfg.classes_per_pool))
            pools[(split, m)] = ids
            next_id += cfg.classes_per_pool
    return pools


def class_centers(cfg: GeneratorConfig) -> dict[int, np.ndarray]:
    """Fixed center per class id: mode centroid plus an offset in the mode's block."""
    centroids = mode_centroids(cfg)
    rng = derive_rng(cfg.seed, "class-centers")
    centers = {}
    for split in SPLITS:
        for m in range(cfg.n_modes):
            blk = _block(cfg, m)
            for cid in class_pools(cfg)[(split, m)]:
                center = centroids[m].copy()
                center[blk] += cfg.signal_scale * rng.standard_normal(
                    blk.stop - blk.start
                )
                centers[cid] = center
    return centers


@lru_cache(maxsize=32)
def _generator_tables(cfg: GeneratorConfig):
    pools = class_pools(cfg)
    centers = class_centers(cfg)
    perms = cfg.mode_permutations or default_mode_permutations(
        cfg.n_modes, cfg.n_ways, cfg.seed
    )
    # Every class carries a fixed base label (its index within the pool,
    # mod ways), so the x -> y map is a consistent function within a mode;
    # the mode permutation then relabels those base labels.
    by_label = {}
    for key, ids in pools.items():
        groups = [[] for _ in range(cfg.n_ways)]
        for i, cid in enumerate(ids):
            groups[i % cfg.n_ways].append(cid)
        by_label[key] = tuple(tuple(g) for g in groups)
    return pools, by_label, centers, perms


def sample_multimodal_tasks(
    cfg: GeneratorConfig, n_tasks: int, split: str
) -> MetaSet:
    """Draw episodic tasks from the synthetic multimodal distribution.

    Each task picks a mode uniformly, draws one class per base label from
    that mode's pool for the split, samples support/query points around the
    class centers, and relabels the base labels by the mode's permutation.
    Deterministic given (cfg.seed, split); tasks record their mode id.
    """
    if split not in SPLITS:
        raise ConfigInvalid("split", f"must be one of {SPLITS}, got {split!r}")
    if n_tasks < 1:
        raise ConfigInvalid("n_tasks", "must be >= 1")
    _, by_label, centers, perms = _generator_tables(cfg)
    rng = derive_rng(cfg.seed, "tasks", split)
    C, K, Q = cfg.n_ways, cfg.n_shots, cfg.query_per_class

    tasks = []
    for _ in range(n_tasks):
        mode = int(rng.integers(cfg.n_modes))
        groups = by_label[(split, mode)]
        chosen = [groups[b][rng.integers(len(groups[b]))] for b in range(C)]
        sx = np.empty((C * K, cfg.d))
        sy = np.empty(C * K, dtype=np.int64)
        qx = np.empty((C * Q, cfg.d))
        qy = np.empty(C * Q, dtype=np.int64)
        for slot, cid in enumerate(chosen):
            label = perms[mode][slot]
            pts = centers[int(cid)] + cfg.cluster_spread * rng.standard_normal(
                (K + Q, cfg.d)
            )
            sx[slot * K : (slot + 1) * K] = pts[:K]
            sy[slot * K : (slot + 1) * K] = label
            qx[slot * Q : (slot + 1) * Q] = pts[K:]
            qy[slot * Q : (slot + 1) * Q] = label
        tasks.append(
            Task(
                support=LabeledSet(sx, sy, C),
                query=LabeledSet(qx, qy, C),
                mode_id=mode,
            )
        )
    pool = frozenset(
        cid
        for m in range(cfg.n_modes)
        for group in by_label[(split, m)]
        for cid in group
    )
    return MetaSet(tasks=tuple(tasks), split=split, class_pool=pool)


def sample_class_bank(
    cfg: GeneratorConfig, per_class: int = 20
) -> dict[int, np.ndarray]:
    """Raw per-class example banks for every class of every split and mode.

    Used to export the synthetic distribution as an embedding file.
    """
    if per_class < 1:
        raise ConfigInvalid("per_class", "must be >= 1")
    _, _, centers, _ = _generator_tables(cfg)
    bank = {}
    for cid in sorted(centers):
        rng = derive_rng(cfg.seed, "bank", cid)
        bank[cid] = centers[cid] + cfg.cluster_spread * rng.standard_normal(
            (per_class, cfg.d)
        )
    return bank


# ---------------------------------------------------------------------------
# Embedding files


def write_embedding_file(path: str | Path, bank: dict[int, np.ndarray]) -> None:
    """Write per-class embedding banks in the binary interchange format.

    Layout: magic "TASKEMB1", u32 class_count, u32 dim, then per class
    u32 class_id, u32 n_examples and n_examples*dim little-endian float32.
    """
    path = Path(path)
    if not bank:
        raise ValueError("bank is empty")
    dims = {v.shape[1] for v in bank.values()}
    if len(dims) != 1:
        raise ValueError(f"inconsistent dims across classes: {sorted(dims)}")
    dim = dims.pop()
    with open(path, "wb") as fh:
        fh.write(EMBEDDING_MAGIC)
        fh.write(struct.pack("<II", len(bank), dim))
        for cid in sorted(bank):
            vecs = np.asarray(bank[cid], dtype="<f4")
            fh.write(struct.pack("<II", cid, vecs.shape[0]))
            fh.write(vecs.tobytes(order="C"))


def _read_binary_embeddings(path: Path) -> dict[int, np.ndarray]:
    data = path.read_bytes()
    if len(data) < len(EMBEDDING_MAGIC) + 8:
        raise FileMalformed(f"{path}: file shorter than header")
    if data[: len(EMBEDDING_MAGIC)] != EMBEDDING_MAGIC:
        raise FileMalformed(
            f"{path}: bad magic {data[:8]!r}, expected {EMBEDDING_MAGIC!r}"
        )
    off = len(EMBEDDING_MAGIC)
    n_classes, dim = struct.unpack_from("<II", data, off)
    off += 8
    if dim == 0:
        raise FileMalformed(f"{path}: dim is zero")
    bank: dict[int, np.ndarray] = {}
    for k in range(n_classes):
        if off + 8 > len(data):
            raise FileMalformed(
                f"{path}: truncated class header for record {k} at byte {off}"
            )
        cid, n_ex = struct.unpack_from("<II", data, off)
        off += 8
        nbytes = n_ex * dim * 4
        if off + nbytes > len(data):
            raise FileMalformed(
                f"{path}: truncated examples for class {cid} at byte {off}"
            )
        vecs = np.frombuffer(data, dtype="<f4", count=n_ex * dim, offset=off)
        bank[cid] = vecs.astype(np.float64).reshape(n_ex, dim)
        off += nbytes
    if off != len(data):
        raise FileMalformed(f"{path}: {len(data) - off} trailing bytes")
    return bank


def _read_csv_embeddings(path: Path) -> dict[int, np.ndarray]:
    rows: dict[int, list[np.ndarray]] = {}
    dim = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                cid = int(row[0])
            except ValueError:
                if lineno == 1:
                    continue  # tolerate a header line
                raise FileMalformed(
                    f"{path}:{lineno}: class id {row[0]!r} is not an integer"
                ) from None
            try:
                vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError as exc:
                raise FileMalformed(f"{path}:{lineno}: {exc}") from None
            if vec.size == 0:
                raise FileMalformed(f"{path}:{lineno}: row has no embedding values")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise FileMalformed(
                    f"{path}:{lineno}: expected {dim} values, got {vec.size}"
                )
            rows.setdefault(cid, []).append(vec)
    if not rows:
        raise FileMalformed(f"{path}: no data rows")
    return {cid: np.vstack(vecs) for cid, vecs in rows.items()}


def read_embedding_file(path: str | Path) -> dict[int, np.ndarray]:
    """Load class embedding banks; CSV when the extension is .csv, else binary."""
    path = Path(path)
    if not path.exists():
        raise FileMalformed(f"{path}: no such file")
    if path.suffix.lower() == ".csv":
        return _read_csv_embeddings(path)
    return _read_binary_embeddings(path)


def load_embedding_metaset(
    path: str | Path,
    *,
    n_ways: int,
    n_shots: int,
    query_per_class: int,
    n_tasks: int,
    seed: int,
    split: str = "train",
    class_ids: tuple[int, ...] | None = None,
) -> MetaSet:
    """Sample episodes from a precomputed embedding file.

    Within a task, examples are drawn without replacement; across tasks the
    pool is reused. `class_ids` restricts the episode pool, which lets one
    file serve disjoint train/test splits.
    """
    bank = read_embedding_file(path)
    if class_ids is not None:
        missing = sorted(set(class_ids) - set(bank))
        if missing:
            raise InsufficientClasses(
                f"{path}: requested classes {missing} not present"
            )
        bank = {cid: bank[cid] for cid in class_ids}

    need = n_shots + query_per_class
    if len(bank) < n_ways:
        raise InsufficientClasses(
            f"{path}: {len(bank)} classes available, episode needs {n_ways}"
        )
    eligible = {cid: v for cid, v in bank.items() if v.shape[0] >= need}
    if len(eligible) < n_ways:
        short = {
            cid: v.shape[0] for cid, v in bank.items() if v.shape[0] < need
        }
        raise InsufficientExamplesPerClass(
            f"{path}: need {need} examples per class, short classes: {short}"
        )

    ids = np.array(sorted(eligible), dtype=np.int64)
    dim = next(iter(eligible.values())).shape[1]
    rng = derive_rng(seed, "episodes", split)
    tasks = []
    for _ in range(n_tasks):
        chosen = rng.choice(ids, size=n_ways, replace=False)
        sx = np.empty((n_ways * n_shots, dim))
        sy = np.empty(n_ways * n_shots, dtype=np.int64)
        qx = np.empty((n_ways * query_per_class, dim))
        qy = np.empty(n_ways * query_per_class, dtype=np.int64)
        for slot, cid in enumerate(chosen):
            pool = eligible[int(cid)]
            pick = rng.choice(pool.shape[0], size=need, replace=False)
            sx[slot * n_shots : (slot + 1) * n_shots] = pool[pick[:n_shots]]
            sy[slot * n_shots : (slot + 1) * n_shots] = slot
            qx[slot * query_per_class : (slot + 1) * query_per_class] = pool[
                pick[n_shots:]
            ]
            qy[slot * query_per_class : (slot + 1) * query_per_class] = slot
        tasks.append(
            Task(
                support=LabeledSet(sx, sy, n_ways),
                query=LabeledSet(qx, qy, n_ways),
                mode_id=None,
            )
        )
    return MetaSet(
        tasks=tuple(tasks),
        split=split,
        class_pool=frozenset(int(cid) for cid in ids),
    )


def with_seed(cfg: GeneratorConfig, seed: int) -> GeneratorConfig:
    """Copy of the generator config with a different seed."""
    return replace(cfg, seed=seed)
