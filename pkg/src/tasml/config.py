"""Experiment configuration: one canonical JSON document.

Field defaults follow the reference hyperparameter table (scoring
regularizer 1e-8, ridge regularizer 0.1, bandwidth 50, learning rate 1e-4,
30000 training tasks, top-M 500). Desk-scale overrides live in the shipped
example config, not in the defaults.
"""

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .dataset_kernel import FEATURE_MAPS, KERNEL_FAMILIES, KernelConfig
from .errors import ConfigInvalid
from .taskgen import SPLITS, GeneratorConfig


@dataclass(frozen=True)
class SourceSpec:
    type: str = "generator"  # generator | embedding
    # generator fields
    n_modes: int = 2
    cluster_spread: float = 1.0
    mode_separation: float = 8.0
    signal_scale: float = 1.0
    classes_per_pool: int = 12
    # embedding fields
    path: str | None = None
    test_path: str | None = None
    train_fraction: float = 0.8


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    sigma: float | str = 50.0  # number, or "median" for the distance heuristic
    c: float = 0.0
    feature_map: str = "identity"
    proj_dim: int | None = None
    proj_seed: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "tasml"
    source: SourceSpec = field(default_factory=SourceSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    n_ways: int = 5
    n_shots: int = 5
    query_per_class: int = 15
    score_lambda: float = 1e-8
    lambda_theta: float = 0.1
    learning_rate: float = 1e-4
    n_train_tasks: int = 30000
    top_m: int = 500
    adapt_steps: int = 100
    beta1: float = 1.0
    beta2: float = 1.0
    l2_theta: float = 1e-4
    rep_dim: int = 640
    init_steps: int = 1000
    meta_batch: int = 12
    test_tasks: int = 200
    seeds: tuple[int, ...] = (0,)
    optimizer: str = "adam"
    random_init: bool = False
    trace_eval: bool = True
    output_dir: str = "out"

    def generator_config(self, seed: int) -> GeneratorConfig:
        if self.source.type != "generator":
            raise ConfigInvalid("source.type", "not a generator source")
        return GeneratorConfig(
            n_modes=self.source.n_modes,
            d=self.rep_dim,
            n_ways=self.n_ways,
            n_shots=self.n_shots,
            query_per_class=self.query_per_class,
            cluster_spread=self.source.cluster_spread,
            mode_separation=self.source.mode_separation,
            signal_scale=self.source.signal_scale,
            classes_per_pool=self.source.classes_per_pool,
            seed=seed,
        )

    def kernel_config(self, sigma: float | None = None) -> KernelConfig:
        """Concrete kernel; pass sigma when the config asked for "median"."""
        if sigma is None:
            if self.kernel.sigma == "median":
                raise ConfigInvalid(
                    "kernel.sigma", "median bandwidth must be resolved first"
                )
            sigma = float(self.kernel.sigma)
        return KernelConfig(
            family=self.kernel.family,
            sigma=sigma,
            c=self.kernel.c,
            feature_map=self.kernel.feature_map,
            proj_dim=self.kernel.proj_dim,
            proj_seed=self.kernel.proj_seed,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


def _expect(cond: bool, fieldname: str, message: str) -> None:
    if not cond:
        raise ConfigInvalid(fieldname, message)


def _take(raw: dict, known: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigInvalid(f"{prefix}{key}", "unknown field")
        out[key] = value
    return out


_SOURCE_FIELDS = {f for f in SourceSpec.__dataclass_fields__}
_KERNEL_FIELDS = {f for f in KernelSpec.__dataclass_fields__}
_TOP_FIELDS = {f for f in ExperimentConfig.__dataclass_fields__}


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config; errors name the offending field."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("config", "top-level document must be an object")
    raw = dict(raw)
    src_raw = raw.pop("source", {})
    ker_raw = raw.pop("kernel", {})
    if not isinstance(src_raw, dict):
        raise ConfigInvalid("source", "must be an object")
    if not isinstance(ker_raw, dict):
        raise ConfigInvalid("kernel", "must be an object")

    source = SourceSpec(**_take(src_raw, _SOURCE_FIELDS, "source."))
    kernel = KernelSpec(**_take(ker_raw, _KERNEL_FIELDS, "kernel."))
    top = _take(raw, _TOP_FIELDS - {"source", "kernel"})
    if "seeds" in top:
        _expect(
            isinstance(top["seeds"], (list, tuple)) and len(top["seeds"]) > 0,
            "seeds",
            "must be a non-empty list",
        )
        top["seeds"] = tuple(int(s) for s in top["seeds"])
    cfg = ExperimentConfig(source=source, kernel=kernel, **top)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    _expect(cfg.source.type in ("generator", "embedding"), "source.type",
            "must be 'generator' or 'embedding'")
    if cfg.source.type == "embedding":
        _expect(bool(cfg.source.path), "source.path", "required for embedding source")
        _expect(0 < cfg.source.train_fraction < 1, "source.train_fraction",
                "must be in (0, 1)")
    else:
        _expect(cfg.source.n_modes >= 1, "source.n_modes", "must be >= 1")
        _expect(cfg.source.cluster_spread > 0, "source.cluster_spread", "must be > 0")
        _expect(cfg.source.classes_per_pool >= cfg.n_ways, "source.classes_per_pool",
                "must be >= n_ways")
    _expect(cfg.kernel.family in KERNEL_FAMILIES, "kernel.family",
            f"must be one of {KERNEL_FAMILIES}")
    if cfg.kernel.sigma != "median":
        _expect(isinstance(cfg.kernel.sigma, (int, float)) and cfg.kernel.sigma > 0,
                "kernel.sigma", "must be > 0 or 'median'")
    _expect(cfg.kernel.c >= 0, "kernel.c", "must be >= 0")
    _expect(cfg.kernel.feature_map in FEATURE_MAPS, "kernel.feature_map",
            f"must be one of {FEATURE_MAPS}")
    if cfg.kernel.feature_map == "random_projection":
        _expect(bool(cfg.kernel.proj_dim), "kernel.proj_dim",
                "required for random_projection")
    _expect(cfg.n_ways >= 2, "n_ways", "must be >= 2")
    _expect(cfg.n_shots >= 1, "n_shots", "must be >= 1")
    _expect(cfg.query_per_class >= 1, "query_per_class", "must be >= 1")
    _expect(cfg.score_lambda > 0, "score_lambda", "must be > 0")
    _expect(cfg.lambda_theta > 0, "lambda_theta", "must be > 0")
    _expect(cfg.learning_rate > 0, "learning_rate", "must be > 0")
    _expect(cfg.n_train_tasks >= 1, "n_train_tasks", "must be >= 1")
    _expect(cfg.top_m >= 1, "top_m", "must be >= 1")
    _expect(cfg.adapt_steps >= 0, "adapt_steps", "must be >= 0")
    _expect(cfg.beta1 >= 0, "beta1", "must be >= 0")
    _expect(cfg.beta2 >= 0, "beta2", "must be >= 0")
    _expect(cfg.l2_theta >= 0, "l2_theta", "must be >= 0")
    _expect(cfg.rep_dim >= 2, "rep_dim", "must be >= 2")
    _expect(cfg.init_steps >= 0, "init_steps", "must be >= 0")
    _expect(cfg.meta_batch >= 1, "meta_batch", "must be >= 1")
    _expect(cfg.test_tasks >= 1, "test_tasks", "must be >= 1")
    _expect(all(isinstance(s, int) and s >= 0 for s in cfg.seeds), "seeds",
            "must be non-negative integers")
    _expect(cfg.optimizer in ("adam", "sgd"), "optimizer",
            "must be 'adam' or 'sgd'")
    _expect(isinstance(cfg.output_dir, str) and cfg.output_dir != "", "output_dir",
            "must be a non-empty path")


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid("config", f"no such file: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("config", f"invalid JSON: {exc}") from None
    try:
        return from_dict(raw)
    except TypeError as exc:
        raise ConfigInvalid("config", str(exc)) from None


def scaled_top_m_grid(n_train_tasks: int) -> list[int]:
    """Reference top-M sweep values scaled proportionally to the task count."""
    reference = (100, 500, 1000, 10000, 30000)
    reference_n = 30000
    grid = []
    for m in reference:
        scaled = max(3, round(m * n_train_tasks / reference_n))
        grid.append(min(scaled, n_train_tasks))
    return sorted(set(grid))


def default_top_m(n_train_tasks: int) -> int:
    """About 1% of the training tasks, floor 5."""
    return max(5, min(n_train_tasks, round(0.01 * n_train_tasks)))


__all__ = [
    "ExperimentConfig",
    "SourceSpec",
    "KernelSpec",
    "from_dict",
    "load_config",
    "validate",
    "scaled_top_m_grid",
    "default_top_m",
    "SPLITS",
]
