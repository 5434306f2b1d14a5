"""Deterministic federated-learning simulator over convex tasks.

Implements plain federated averaging, an annealed local/global mixing variant,
and its gap-gated-upload extension, together with the convergence-rate bounds
that the simulated trajectories can be checked against.
"""

from .aggregation import ModelUpdate, WeightScheme, aggregate, weights
from .annealing import AnnealConfig, mix, sample_mask, selection_probability
from .bounds import (
    BoundInputs,
    corollary1_bound,
    corollary1_constant,
    fit_rate,
    measure_bound_inputs,
    rate_class,
    theorem1_bound,
    theorem3_bound,
    theorem3_constant,
)
from .datasets import load_csv, make_blobs, make_linear_regression, save_csv
from .objectives import (
    ConvergenceError,
    CurvatureBounds,
    Dataset,
    GradientUnavailableError,
    Objective,
    Sample,
    curvature,
    empirical_risk,
    grad,
    loss,
    optimum_oracle,
    per_sample_grads,
    predict_classes,
)
from .partition import PartitionSpec, partition, partition_with_holdout, sample_sizes
from .simulation import (
    DeviceState,
    RoundRecord,
    RunResult,
    ServerState,
    SimConfig,
    build_state,
    global_estimate,
    run,
    run_round,
)
from .training import DivergenceError, LrSchedule, run_local_epochs, sgd_step
from .upload_gate import GateConfig, GateState, accuracy_proxy, decide_upload, performance_gap, upload_probability

__version__ = "0.1.0"

__all__ = [
    "AnnealConfig",
    "BoundInputs",
    "ConvergenceError",
    "CurvatureBounds",
    "Dataset",
    "DeviceState",
    "DivergenceError",
    "GateConfig",
    "GateState",
    "GradientUnavailableError",
    "LrSchedule",
    "ModelUpdate",
    "Objective",
    "PartitionSpec",
    "RoundRecord",
    "RunResult",
    "Sample",
    "ServerState",
    "SimConfig",
    "WeightScheme",
    "accuracy_proxy",
    "aggregate",
    "build_state",
    "corollary1_bound",
    "corollary1_constant",
    "curvature",
    "decide_upload",
    "empirical_risk",
    "fit_rate",
    "global_estimate",
    "grad",
    "load_csv",
    "loss",
    "make_blobs",
    "make_linear_regression",
    "measure_bound_inputs",
    "mix",
    "optimum_oracle",
    "partition",
    "partition_with_holdout",
    "per_sample_grads",
    "performance_gap",
    "predict_classes",
    "rate_class",
    "run",
    "run_local_epochs",
    "run_round",
    "sample_mask",
    "sample_sizes",
    "save_csv",
    "selection_probability",
    "sgd_step",
    "theorem1_bound",
    "theorem3_bound",
    "theorem3_constant",
    "upload_probability",
    "weights",
]
