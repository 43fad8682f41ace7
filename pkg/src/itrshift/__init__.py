"""Learning and evaluating individualized treatment rules when the deployment
population differs from the study sample and outcomes are right-censored.

The package estimates the value (survival probability or restricted mean
survival time) of linear treatment rules from a source study plus a weighted
covariate survey of the target population, searches for the best rule, and
quantifies uncertainty by bootstrap or influence-value plug-in.
"""
from .calibrate import (
    Calibration,
    MomentMap,
    entropy_balance,
    first_moments,
    named_transform,
    second_order_moments,
)
from .crossfit import (
    NuisanceSpec,
    PipelineValue,
    crossfit_decompositions,
    crossfit_search,
    crossfit_value,
    fit_nuisances,
    make_folds,
)
from .data import (
    BadK,
    DegenerateRule,
    DegenerateWeights,
    DimensionMismatch,
    EmptyArm,
    FoldFitFailure,
    InfeasibleCalibration,
    ItrError,
    LinearRule,
    MissingEIF,
    MissingNuisance,
    NoEvents,
    NonFiniteValue,
    NonPositiveTime,
    NonPositiveWeight,
    ReplicateFailure,
    Separation,
    SingularHessian,
    SourceSample,
    TargetSample,
    ValueEstimate,
    ZeroSurvival,
    apply_rule,
    normalize_eta,
    read_source_csv,
    read_target_csv,
    with_intercept,
    write_source_csv,
    write_target_csv,
)
from .inference import BootstrapResult, bootstrap_value, normal_quantile, wald_ci
from .search import SearchConfig, SearchResult, optimize_rule, search_rule
from .simulate import (
    SCENARIOS,
    Dgp,
    Oracle,
    StudyConfig,
    StudyResult,
    correct_decision_rate,
    run_study,
    scenario_spec,
)
from .value import (
    ALL_KINDS,
    Horizon,
    Nuisances,
    ValueDecomposition,
    build_decompositions,
    censoring_martingale_term,
    eif_variance,
    estimate_value,
    rmst_from_curve,
    value_curve,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_KINDS",
    "BadK",
    "BootstrapResult",
    "Calibration",
    "DegenerateRule",
    "DegenerateWeights",
    "Dgp",
    "DimensionMismatch",
    "EmptyArm",
    "FoldFitFailure",
    "Horizon",
    "InfeasibleCalibration",
    "ItrError",
    "LinearRule",
    "MissingEIF",
    "MissingNuisance",
    "MomentMap",
    "NoEvents",
    "NonFiniteValue",
    "NonPositiveTime",
    "NonPositiveWeight",
    "NuisanceSpec",
    "Nuisances",
    "Oracle",
    "PipelineValue",
    "ReplicateFailure",
    "SCENARIOS",
    "SearchConfig",
    "SearchResult",
    "Separation",
    "SingularHessian",
    "SourceSample",
    "StudyConfig",
    "StudyResult",
    "TargetSample",
    "ValueDecomposition",
    "ValueEstimate",
    "ZeroSurvival",
    "apply_rule",
    "bootstrap_value",
    "build_decompositions",
    "censoring_martingale_term",
    "correct_decision_rate",
    "crossfit_decompositions",
    "crossfit_search",
    "crossfit_value",
    "eif_variance",
    "entropy_balance",
    "estimate_value",
    "first_moments",
    "fit_nuisances",
    "make_folds",
    "named_transform",
    "normal_quantile",
    "normalize_eta",
    "optimize_rule",
    "read_source_csv",
    "read_target_csv",
    "rmst_from_curve",
    "run_study",
    "scenario_spec",
    "search_rule",
    "second_order_moments",
    "value_curve",
    "wald_ci",
    "with_intercept",
    "write_source_csv",
    "write_target_csv",
]
