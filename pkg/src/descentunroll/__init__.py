"""Unrolled optimizers trained under per-layer descent constraints."""

from .errors import ConfigError, FileFormatError, NumericalError
from .grads import (
    Batch,
    ConstraintFamily,
    ConstraintKind,
    ParamGrads,
    constraint_slacks,
    empirical_lagrangian,
    finite_diff_check,
    lagrangian_grad,
)
from .network import (
    Arch,
    ListaLayerParams,
    ModelParams,
    NoiseMode,
    NoiseSchedule,
    ResGdLayerParams,
    Trajectory,
    forward,
    forward_batch,
    init_lista,
    init_resgd,
)
from .optimizee import (
    ObjectiveKind,
    ProblemSpec,
    ista_solve,
    lasso_objective,
    lasso_oracle_small,
    lasso_subgradient,
    quad_gradient,
    quad_objective,
    quad_solve,
    soft_threshold,
)
from .training import (
    AdamConfig,
    DualState,
    TrainConfig,
    TrainHistory,
    dual_step,
    load_checkpoint,
    primal_step,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
