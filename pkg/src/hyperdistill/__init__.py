"""Online gradient-based hyperparameter optimization by hypergradient distillation.

The library computes hypergradients for long inner optimizations by
distilling the unrolled second-order term into a single Jacobian
product against a running weighted-average weight and batch, plus a
scale factor fitted online.  Exact reverse-mode and the standard
approximations (DrMAD, first-order, one-step truncation, Neumann IFT)
are provided as baselines over the same gradient substrate.
"""

from .distill import (
    DistillState,
    EstimatorState,
    distill_forward_update,
    estimator_predict,
    fit_theta,
    hyperdistill_hypergradient,
    linear_estimation,
    subsample,
)
from .engine import Backend, Batch, InnerProblem, JvpRequest, grad_train, sgd_step, val_grads, vjp_A, vjp_B
from .errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    DomainError,
    EstimationError,
    HyperdistillError,
    NeumannDivergence,
    NormalizationError,
    TrajectoryError,
)
from .hypergrad import (
    Hypergradient,
    drmad,
    fo_hypergradient,
    neumann_ift,
    one_step,
    rmd_exact,
    so_geometric_reference,
)
from .metaloop import (
    MetaConfig,
    RunRecord,
    baseline_run,
    hyper_lr_schedule,
    hyperdistill_run,
    meta_test,
    reptile_update,
    run_strategy,
)
from .problems import LinearTask, QuadraticTask, ReweightTask, SinusoidTask, TaskSampler
from .trajectory import Trajectory, run_inner
from .vecmath import cosine_similarity, normalize, weighted_average

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "Batch",
    "ConfigError",
    "DimensionError",
    "DistillState",
    "DivergenceError",
    "DomainError",
    "EstimationError",
    "EstimatorState",
    "Hypergradient",
    "HyperdistillError",
    "InnerProblem",
    "JvpRequest",
    "LinearTask",
    "MetaConfig",
    "NeumannDivergence",
    "NormalizationError",
    "QuadraticTask",
    "ReweightTask",
    "RunRecord",
    "SinusoidTask",
    "TaskSampler",
    "Trajectory",
    "TrajectoryError",
    "baseline_run",
    "cosine_similarity",
    "distill_forward_update",
    "drmad",
    "estimator_predict",
    "fit_theta",
    "fo_hypergradient",
    "grad_train",
    "hyper_lr_schedule",
    "hyperdistill_hypergradient",
    "hyperdistill_run",
    "linear_estimation",
    "meta_test",
    "neumann_ift",
    "normalize",
    "one_step",
    "reptile_update",
    "rmd_exact",
    "run_inner",
    "run_strategy",
    "sgd_step",
    "so_geometric_reference",
    "subsample",
    "val_grads",
    "vjp_A",
    "vjp_B",
    "weighted_average",
]
