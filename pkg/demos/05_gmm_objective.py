"""Bilinear-form tests with a GMM criterion.

The exponential regression is estimated by instrumental-variable moments
E[z (y - m(x, b))] = 0 with five instruments, weighted by the inverse
instrument second-moment matrix.  The statistics only need the objective's
value, gradient and Hessian, so nothing changes relative to least squares.

    python demos/05_gmm_objective.py
"""

import numpy as np

from ee_testkit import (
    SCENARIOS,
    FitOptions,
    QuadraticObjective,
    ScenarioConfig,
    TestConfig,
    generate_dataset,
    get_restriction,
    run_all_tests,
)
from ee_testkit.objective import get_mean_function

data = generate_dataset(ScenarioConfig(beta0=SCENARIOS["III"], n=400, replications=1), 0)
m = get_mean_function("linear2-exp3")
X, y, n = data.regressors, data.response, data.n
Z = np.column_stack([np.ones(n), X, X ** 2])
u2 = 0.16  # error variance, so the weight is the efficient one under homoskedasticity

obj = QuadraticObjective(
    moments=lambda b: Z.T @ (y - m.value(X, b)) / n,
    moment_jacobian=lambda b: -Z.T @ m.jacobian(X, b) / n,
    weight=u2 * Z.T @ Z / n,
    nobs=n,
    n_params=3,
    moment_hessian=lambda b: -np.einsum("nm,npq->mpq", Z, m.hessian(X, b)) / n,
)
cfg = TestConfig(fit=FitOptions(initial_point=np.array(SCENARIOS["III"])))
for hyp in ("h0a", "h0b"):
    out = run_all_tests(obj, get_restriction(hyp), config=cfg)
    print(hyp, "  ".join(f"{s.name}={s.value:.4f}" for s in out))
