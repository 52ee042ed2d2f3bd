import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ee_testkit import DomainError, numeric_gradient, numeric_hessian, numeric_jacobian


def test_gradient_of_quadratic():
    g = numeric_gradient(lambda b: b @ b, np.array([1.0, 2.0]))
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-7)


def test_gradient_of_constant_is_zero():
    assert np.all(numeric_gradient(lambda b: 3.0, np.array([0.3, -1.0, 5.0])) == 0)


def test_gradient_of_exp():
    g = numeric_gradient(lambda b: np.exp(b[0]), np.array([0.0]))
    assert abs(g[0] - 1.0) < 1e-7


def test_hessian_of_quadratic_form(rng):
    M = rng.standard_normal((4, 4))
    M = M + M.T
    H = numeric_hessian(lambda b: 0.5 * b @ M @ b, rng.standard_normal(4))
    np.testing.assert_allclose(H, M, atol=1e-5)
    np.testing.assert_array_equal(H, H.T)


def test_hessian_of_linear_function_vanishes():
    H = numeric_hessian(lambda b: 3 * b[0] - 2 * b[1] + 1, np.array([0.5, 2.0]))
    assert np.abs(H).max() < 1e-6


def test_hessian_of_exp_sum():
    H = numeric_hessian(lambda b: np.exp(b[0] + b[1]), np.zeros(2))
    np.testing.assert_allclose(H, np.ones((2, 2)), atol=1e-6)


def test_jacobian_shape_and_values():
    J = numeric_jacobian(lambda b: np.array([b[0] * b[1], b[1] ** 2, np.sin(b[0])]),
                         np.array([0.5, 2.0]))
    expected = [[2.0, 0.5], [0.0, 4.0], [np.cos(0.5), 0.0]]
    np.testing.assert_allclose(J, expected, atol=1e-8)


def test_nonfinite_neighbour_names_coordinate():
    def f(b):
        with np.errstate(invalid="ignore"):
            return np.log(b[1])

    with pytest.raises(DomainError, match="1"):
        numeric_gradient(f, np.array([1.0, 1e-9]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5))
def test_gradient_matches_analytic_cubic(values):
    b = np.array(values)
    g = numeric_gradient(lambda x: np.sum(x ** 3) / 3, b)
    np.testing.assert_allclose(g, b ** 2, rtol=1e-6, atol=1e-7)
