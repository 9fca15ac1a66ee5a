"""Density-dependent Markov chains: exact simulation, deterministic limits,
fluctuation-cost functionals, and rare-event estimation."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DdmcError,
    GridMismatchError,
    LeftDomainError,
    ModelValidationError,
    NonfiniteWeightError,
    OutsideDomainError,
    ParamsOutOfRangeError,
    RateOverflowError,
    SigmaSingularError,
    SingularCovarianceError,
    SingularEndpointCovarianceError,
    ThinningBoundError,
    UnboundedRatioError,
)
from .model import (
    Domain,
    LipschitzEstimate,
    ModelSpec,
    Polynomial,
    ValidatedModel,
    builtin_model,
    validate_model,
)
from .fluid import (
    FluidSolution,
    OracleValues,
    TiltControl,
    closed_form_oracle,
    propagator_to_end,
    solve_fluid,
    solve_lyapunov,
    solve_tilted_ode,
    uniform_grid,
)
from .simulate import (
    FluctuationPath,
    TrajectoryPath,
    WeightedSample,
    dominated_pair,
    fluctuation,
    gillespie,
    random_time_change,
    sample_endpoints,
    sample_grid_batch,
    tilted_simulate,
    untilted_weight,
    yule_domination_constants,
)
from .ratefn import (
    CandidatePath,
    RateReport,
    endpoint_min_cost,
    endpoint_min_cost_qp,
    optimal_tilt,
    rate_closed_form,
    rate_degenerate,
    variational_sup,
    variational_value,
)
from .experiments import (
    EstimateRow,
    EventSpec,
    ExperimentConfig,
    clt_check,
    lln_check,
    martingale_mean_check,
    mdp_estimate,
    poisson_tail_exponent,
)

__all__ = [name for name in dir() if not name.startswith("_")]
