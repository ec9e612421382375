"""Task-adaptive meta-learning: kernel scoring over datasets, a closed-form
least-squares inner learner, weighted meta-objectives, and an experiment
harness."""

from .config import ExperimentConfig, load_config
from .dataset_kernel import (
    KernelConfig,
    ScoringModel,
    Signature,
    TaskWeights,
    fit_scoring,
    kernel_eval,
    median_sigma,
    score,
    signature,
    top_m_filter,
)
from .driver import (
    AdaptationTrace,
    EvaluationSummary,
    TrainedSystem,
    adapt,
    build_metaset,
    evaluate,
    load_checkpoint,
    meta_train,
    save_checkpoint,
)
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    EmptyDataset,
    FileMalformed,
    InsufficientClasses,
    InsufficientExamplesPerClass,
    NonFiniteValue,
    NotPositiveDefinite,
    TasmlError,
)
from .ls_meta_learn import (
    MetaParams,
    RidgeHead,
    TaskLossReport,
    repr_forward,
    solve_head,
    task_loss,
    task_loss_grad,
)
from .meta_objectives import (
    OptimizerState,
    WeightedObjectiveSpec,
    erm_objective,
    optimizer_init,
    optimizer_step,
    weighted_objective,
)
from .numerics import CholeskyFactor, cholesky_factor, cholesky_solve, grad_check
from .taskgen import (
    GeneratorConfig,
    LabeledSet,
    MetaSet,
    Task,
    load_embedding_metaset,
    read_embedding_file,
    sample_multimodal_tasks,
    write_embedding_file,
)

__version__ = "0.1.0"
