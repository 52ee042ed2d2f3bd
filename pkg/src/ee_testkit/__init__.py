"""Hypothesis tests for extremum estimators.

Bilinear-form (BF1-BF7), Wald, Lagrange-multiplier and distance statistics
for nonlinear restrictions ``g(beta) = 0``, with constrained and
unconstrained estimation and a Monte Carlo harness for size and power.
"""

from .constraints import (
    Restriction,
    eval_restriction,
    get_restriction,
    linear_restriction,
    moore_penrose,
    projection,
)
from .errors import (
    DimensionError,
    DomainError,
    EETestError,
    InputError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    SingularMatrixError,
    SolverOrderingError,
)
from .estimate import (
    ConstrainedFit,
    CovarianceComponents,
    Fit,
    FitOptions,
    compute_covariance_components,
    fit_constrained,
    fit_unconstrained,
    recover_multipliers,
)
from .montecarlo import (
    SCENARIOS,
    ExperimentResult,
    ScenarioConfig,
    generate_dataset,
    run_power_experiment,
    run_size_experiment,
    write_csv,
)
from .numdiff import numeric_gradient, numeric_hessian, numeric_jacobian
from .objective import (
    Dataset,
    MeanLogLikelihood,
    NlsObjective,
    ObjectiveEvaluation,
    QuadraticObjective,
    eval_nls,
    eval_quadratic,
    read_dataset_csv,
)
from .stats import (
    ConvergenceError,
    TestConfig,
    TestInputs,
    TestStatistic,
    bf_statistic,
    chi_square_cdf,
    distance_statistic,
    lm_statistic,
    run_all_tests,
    wald_statistic,
)

__version__ = "0.1.0"
