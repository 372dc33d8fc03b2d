"""Distributed consensus ADMM with adaptive per-worker penalty parameters.

Model fitting problems (elastic net regression, sparse logistic
regression, linear SVM) are solved in consensus form over row-sharded
data.  Five penalty policies are available, from a fixed penalty through
residual balancing to worker-local spectral adaptation, all safeguarded
so the convergence guarantee is preserved.
"""

from .adaptation import (
    AdaptationDeltas,
    CurvatureEstimate,
    PolicyConfig,
    aadmm_update,
    acadmm_candidate,
    acadmm_update,
    correlation,
    crb_update,
    rb_update,
    safeguard_clip,
    spectral_estimate,
)
from .bench import ExperimentConfig, MetricsRow, run_experiment
from .datagen import Dataset, build_problem, gen_synthetic1, gen_synthetic2, partition_indices
from .engine import (
    AdmmEngine,
    EngineConfig,
    IterationRecord,
    RunResult,
    check_stop,
    compute_residuals,
    dual_step,
    h_norm_progress,
    hat_lambda,
    run,
    u_step,
    v_step,
)
from .errors import InvalidInputError, ParseError, ProtocolError, SubproblemError
from .libsvm import LibsvmRecord, load_libsvm, parse_libsvm
from .problem import (
    ConsensusProblem,
    ElasticNet,
    GlobalState,
    L1,
    ResidualReport,
    Ridge,
    SparseMatrix,
    WorkerShard,
    WorkerState,
    evaluate_objective,
    local_norms,
)
from .runtime import RunTopology, deterministic_reduce, run_distributed
from .subproblems import (
    FactorizationCache,
    InnerSolverConfig,
    prox_regularizer,
    solve_u_enet,
    solve_u_logistic,
    solve_u_svm,
)

__version__ = "0.1.0"

__all__ = [
    "AdaptationDeltas",
    "AdmmEngine",
    "ConsensusProblem",
    "CurvatureEstimate",
    "Dataset",
    "ElasticNet",
    "EngineConfig",
    "ExperimentConfig",
    "FactorizationCache",
    "GlobalState",
    "InnerSolverConfig",
    "InvalidInputError",
    "IterationRecord",
    "L1",
    "LibsvmRecord",
    "MetricsRow",
    "ParseError",
    "PolicyConfig",
    "ProtocolError",
    "ResidualReport",
    "Ridge",
    "RunResult",
    "RunTopology",
    "SparseMatrix",
    "SubproblemError",
    "WorkerShard",
    "WorkerState",
    "aadmm_update",
    "acadmm_candidate",
    "acadmm_update",
    "build_problem",
    "check_stop",
    "compute_residuals",
    "correlation",
    "crb_update",
    "deterministic_reduce",
    "dual_step",
    "evaluate_objective",
    "gen_synthetic1",
    "gen_synthetic2",
    "h_norm_progress",
    "hat_lambda",
    "load_libsvm",
    "local_norms",
    "parse_libsvm",
    "partition_indices",
    "prox_regularizer",
    "rb_update",
    "run",
    "run_distributed",
    "run_experiment",
    "safeguard_clip",
    "solve_u_enet",
    "solve_u_logistic",
    "solve_u_svm",
    "spectral_estimate",
    "u_step",
    "v_step",
]
