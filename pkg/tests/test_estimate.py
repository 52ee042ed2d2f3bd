import numpy as np
import pytest

from ee_testkit import (
    SCENARIOS,
    Dataset,
    DomainError,
    FitOptions,
    MeanLogLikelihood,
    NlsObjective,
    NotPositiveDefiniteError,
    QuadraticObjective,
    compute_covariance_components,
    fit_constrained,
    fit_unconstrained,
    get_restriction,
    linear_restriction,
    numeric_hessian,
    recover_multipliers,
)
from ee_testkit.estimate import nls_scale

import oracles
from conftest import exp_dataset, noiseless_dataset

# grid over [0, 2]^3 at step 0.05 followed by 500 Brent coordinate
# refinements (oracles.grid_then_polish) on exp_dataset("IV", n=50, seed=7)
GRID_ORACLE_BETA = [0.9645725243826113, 0.7806120871781039, 0.9982026927152944]
# substitution beta2 = 1 / beta3 solved by scipy least_squares
# (oracles.eliminate_h0) on the same dataset
ELIMINATION_ORACLE_BETA = [0.9520691870330255, 0.9661112445868404, 1.0350774878183435]


def linear_problem(rng, n=60, p=4):
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    return X, y


# ----------------------------------------------------------------------------
# unconstrained


def test_linear_fit_matches_normal_equations(rng):
    X, y = linear_problem(rng)
    fit = fit_unconstrained(NlsObjective(Dataset(y, X), "linear"))
    b = oracles.ols(X, y)
    assert fit.converged
    np.testing.assert_allclose(fit.beta, b, rtol=1e-8)


def test_zero_noise_recovery():
    fit = fit_unconstrained(NlsObjective(noiseless_dataset([1.0, 1.0, 1.0])),
                            FitOptions(initial_point=[0.5, 1.5, 0.7]))
    np.testing.assert_allclose(fit.beta, [1.0, 1.0, 1.0], atol=1e-6)


def test_frozen_grid_oracle_value(exp50):
    fit = fit_unconstrained(NlsObjective(exp50), FitOptions(initial_point=SCENARIOS["IV"]))
    assert fit.converged
    np.testing.assert_allclose(fit.beta, GRID_ORACLE_BETA, atol=1e-4)


def test_grid_oracle_live(exp50):
    X = exp50.regressors
    b = oracles.grid_then_polish(exp50.response, X[:, 0], X[:, 1])
    np.testing.assert_allclose(b, GRID_ORACLE_BETA, atol=1e-8)


def test_fit_invariants(exp50):
    fit = fit_unconstrained(NlsObjective(exp50))
    assert fit.converged and fit.gradient_norm <= 1e-8
    assert fit.iterations >= 1


def test_multistart_returns_best(exp50):
    obj = NlsObjective(exp50)
    one = fit_unconstrained(obj, FitOptions(initial_point=[1, 1, 1]))
    many = fit_unconstrained(obj, FitOptions(initial_point=[1, 1, 1], multistart_count=5, seed=3))
    assert many.objective_value >= one.objective_value - 1e-12


def test_nonconvergence_is_flagged(exp50):
    fit = fit_unconstrained(NlsObjective(exp50), FitOptions(initial_point=[0, 3, 2], max_iterations=1))
    assert not fit.converged


def test_nonfinite_start_raises(exp50):
    with pytest.raises(DomainError):
        fit_unconstrained(NlsObjective(exp50), FitOptions(initial_point=[1, 1, 1e4]))


def test_bounds_are_respected(exp50):
    fit = fit_unconstrained(NlsObjective(exp50),
                            FitOptions(bounds=(np.array([0, 0, 0]), np.array([2, 0.5, 2]))))
    assert fit.beta[1] <= 0.5 + 1e-15


def test_generic_objective_uses_quasi_newton():
    c = np.array([1.0, -2.0, 0.5])
    W = np.diag([1.0, 2.0, 3.0])
    obj = QuadraticObjective(lambda b: b - c, lambda b: np.eye(3), W, 50, 3)
    fit = fit_unconstrained(obj, FitOptions(initial_point=[0, 0, 0]))
    assert fit.converged
    np.testing.assert_allclose(fit.beta, c, atol=1e-8)


def test_loglikelihood_fit(rng):
    y = rng.normal(2.0, 0.5, 400)

    def ll(b):
        return -0.5 * np.log(2 * np.pi) - b[1] - 0.5 * ((y - b[0]) / np.exp(b[1])) ** 2

    fit = fit_unconstrained(MeanLogLikelihood(ll, y.size, 2), FitOptions(initial_point=[0.0, 0.0]))
    np.testing.assert_allclose(fit.beta, [y.mean(), np.log(y.std())], atol=1e-6)


# ----------------------------------------------------------------------------
# constrained


def test_linear_restriction_matches_closed_form(rng):
    X, y = linear_problem(rng)
    R = np.array([[0.0, 1.0, -1.0, 0.0], [1.0, 0.0, 0.0, 1.0]])
    r = np.array([0.2, 1.0])
    cf = fit_constrained(NlsObjective(Dataset(y, X), "linear"), linear_restriction(R, r))
    assert cf.converged
    np.testing.assert_allclose(cf.beta, oracles.restricted_ols(X, y, R, r), rtol=1e-8)


def test_inactive_restriction_zero_noise():
    obj = NlsObjective(noiseless_dataset([1.0, 2.0, 0.5]))
    cf = fit_constrained(obj, get_restriction("h0b"), FitOptions(initial_point=[1.0, 1.0, 1.0]))
    np.testing.assert_allclose(cf.beta, [1.0, 2.0, 0.5], atol=1e-6)
    np.testing.assert_allclose(cf.multipliers, [0.0], atol=1e-6)


def test_h0a_fit_matches_frozen_elimination_oracle(exp50):
    cf = fit_constrained(NlsObjective(exp50), get_restriction("h0a"),
                         FitOptions(initial_point=SCENARIOS["IV"]))
    assert cf.converged
    assert cf.stationarity_residual < 1e-6
    assert cf.constraint_violation < 1e-8
    np.testing.assert_allclose(cf.beta, ELIMINATION_ORACLE_BETA, atol=1e-5)


def test_elimination_oracle_live(exp50):
    X = exp50.regressors
    b = oracles.eliminate_h0(exp50.response, X[:, 0], X[:, 1])
    np.testing.assert_allclose(b, ELIMINATION_ORACLE_BETA, atol=1e-9)


@pytest.mark.parametrize("scenario", sorted(SCENARIOS))
def test_constrained_agrees_with_elimination(scenario):
    beta0 = SCENARIOS[scenario]
    opts = FitOptions(initial_point=beta0)
    for rep in range(20):
        d = exp_dataset(scenario, n=50, seed=11, rep=rep)
        obj = NlsObjective(d)
        X = d.regressors
        ref = oracles.eliminate_h0(d.response, X[:, 0], X[:, 1], start=(beta0[0], beta0[2]))
        for name in ("h0a", "h0b"):
            cf = fit_constrained(obj, get_restriction(name), opts)
            assert cf.converged
            # both first-order conditions hold at the reported point
            assert cf.constraint_violation <= 1e-8 and cf.stationarity_residual <= 1e-6
            np.testing.assert_allclose(cf.beta, ref, atol=1e-5)
        fit = fit_unconstrained(obj, opts)
        assert fit.objective_value >= cf.objective_value


def test_generic_constrained_fit():
    c = np.array([1.0, 2.0])
    obj = QuadraticObjective(lambda b: b - c, lambda b: np.eye(2), np.eye(2), 10, 2)
    cf = fit_constrained(obj, linear_restriction([[1.0, 1.0]], [1.0]),
                         FitOptions(initial_point=[0.0, 0.0]))
    assert cf.converged
    # projection of c onto b1 + b2 = 1
    np.testing.assert_allclose(cf.beta, [0.0, 1.0], atol=1e-8)
    np.testing.assert_allclose(cf.multipliers, [1.0], atol=1e-7)


# ----------------------------------------------------------------------------
# multipliers and covariance components


def test_recover_multipliers_examples():
    G = np.array([[0.0, 1.0, 4.0]])
    np.testing.assert_allclose(recover_multipliers([0.0, 2.0, 8.0], G), [2.0], rtol=1e-15)
    np.testing.assert_array_equal(recover_multipliers(np.zeros(3), G), [0.0])


def test_recover_multipliers_inverts_first_order_condition(rng):
    G = rng.standard_normal((2, 5))
    c = rng.standard_normal(2)
    np.testing.assert_allclose(recover_multipliers(G.T @ c, G), c, rtol=1e-12)


def test_information_mode_gives_s_equal_omega(exp50):
    comp = compute_covariance_components(NlsObjective(exp50, scale=0.16), get_restriction("h0a"),
                                         np.array([1.0, 1.0, 1.0]), mode="information")
    np.testing.assert_array_equal(comp.S, comp.Omega)
    assert comp.information_equality


def test_linear_components_closed_form(rng):
    X, y = linear_problem(rng, n=40, p=3)
    R = np.array([[1.0, -1.0, 0.5]])
    scale = 0.8
    obj = NlsObjective(Dataset(y, X), "linear", scale=scale)
    comp = compute_covariance_components(obj, linear_restriction(R), oracles.ols(X, y),
                                         mode="information")
    np.testing.assert_allclose(comp.A, -X.T @ X / (scale * 40), rtol=1e-12)
    np.testing.assert_allclose(comp.S, R @ np.linalg.inv(X.T @ X) @ R.T * scale * 40, rtol=1e-12)


def test_score_variance_near_information_at_truth():
    beta0 = np.array(SCENARIOS["IV"])
    d = exp_dataset("IV", n=5000, seed=5)
    obj = NlsObjective(d, scale=0.16)
    comp = compute_covariance_components(obj, get_restriction("h0b"), beta0, mode="sandwich")
    assert np.linalg.norm(comp.B + comp.A) / np.linalg.norm(comp.A) < 0.1


def test_sandwich_default_when_scores_exist(exp50):
    comp = compute_covariance_components(NlsObjective(exp50), get_restriction("h0b"),
                                         np.ones(3))
    assert not comp.information_equality


def test_not_negative_definite_hessian():
    # a saddle of the quadratic objective
    obj = QuadraticObjective(lambda b: np.array([b[0], b[1], b[0] * b[1] - 1.0]),
                             lambda b: np.array([[1.0, 0.0], [0.0, 1.0], [b[1], b[0]]]),
                             np.eye(3), 10, 2)
    with pytest.raises(NotPositiveDefiniteError):
        compute_covariance_components(obj, linear_restriction([[1.0, 0.0]]), np.zeros(2),
                                      mode="information")


def test_analytic_hessian_matches_numeric(exp50):
    obj = NlsObjective(exp50, scale=0.16)
    for beta in ([1.0, 1.0, 1.0], [0.7, 1.4, 0.6], GRID_ORACLE_BETA):
        beta = np.asarray(beta)
        A = obj.hessian(beta)
        assert np.abs(A - numeric_hessian(obj.value, beta)).max() / np.abs(A).max() < 1e-5


def test_nls_scale_options():
    assert nls_scale(10.0, 20, 3) == pytest.approx(10.0 / 17)
    assert nls_scale(10.0, 20, 3, ddof=False) == pytest.approx(0.5)
    assert nls_scale(0.0, 20, 3, response_sq_mean=4.0) > 0
