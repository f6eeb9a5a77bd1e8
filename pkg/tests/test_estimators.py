import numpy as np
import pytest
from hypothesis import given, strategies as st

from nearps.estimators import (Cauchy, LeastSquares, ShadowOperator,
                               check_majorization, make_estimator, weight)

GRID = np.arange(-10.0, 10.0 + 1e-9, 1e-3)


class Quartic:
    """phi(x) = x^4: violates the majorization condition (test-only)."""

    def phi(self, x):
        return np.asarray(x) ** 4

    def dphi(self, x):
        return 4.0 * np.asarray(x) ** 3

    def ddphi(self, x):
        return 12.0 * np.asarray(x) ** 2


def test_weight_least_squares():
    assert weight(LeastSquares(), 3.0) == 2.0


def test_weight_cauchy_at_lambda():
    assert np.isclose(weight(Cauchy(0.1), 0.1), 1.0, atol=1e-14)


def test_weight_zero_residual_is_zero():
    for est in (LeastSquares(), Cauchy(0.1)):
        assert weight(est, 0.0) == 0.0
        w = weight(est, np.array([0.0, 1.0, -2.0]))
        assert w[0] == 0.0 and np.all(w[1:] > 0)


def test_majorization_cauchy():
    ok, margin = check_majorization(Cauchy(0.1), GRID)
    assert ok
    assert margin >= -1e-12


def test_majorization_least_squares_tight():
    ok, margin = check_majorization(LeastSquares(), GRID)
    assert ok
    assert np.isclose(margin, 0.0, atol=1e-12)


def test_majorization_rejects_quartic():
    ok, margin = check_majorization(Quartic(), GRID)
    assert not ok
    assert margin < -1.0


def test_cauchy_bounded_by_quadratic():
    x = GRID
    phi = Cauchy(0.1).phi(x)
    assert np.all(phi <= x ** 2 + 1e-15)
    assert phi[np.abs(x) > 0.5].max() < (x ** 2)[np.abs(x) > 0.5].min()


@given(st.floats(min_value=0.02, max_value=5.0),
       st.floats(min_value=-50.0, max_value=50.0))
def test_cauchy_derivative_matches_finite_differences(lam, x):
    est = Cauchy(lam)
    h = 1e-6 * max(1.0, abs(x))
    numeric = (est.phi(x + h) - est.phi(x - h)) / (2 * h)
    assert np.isclose(est.dphi(x), numeric, rtol=1e-5, atol=1e-7)


def test_derivatives_match_finite_differences_on_grid():
    xs = GRID[::97]
    h = 1e-6
    for est in (LeastSquares(), Cauchy(0.1)):
        numeric = (est.phi(xs + h) - est.phi(xs - h)) / (2 * h)
        assert np.allclose(est.dphi(xs), numeric, rtol=1e-6, atol=1e-6)


def test_weights_nonnegative_everywhere():
    for est in (LeastSquares(), Cauchy(0.1), Cauchy(3.0)):
        assert np.all(weight(est, GRID) >= 0.0)


def test_shadow_identity():
    op = ShadowOperator("identity")
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(op.apply(x), x)
    assert np.array_equal(op.chi(x), np.ones(3))


def test_shadow_positive_part():
    op = ShadowOperator("positive_part")
    x = np.array([-2.0, 0.0, 3.0])
    assert np.array_equal(op.apply(x), [0.0, 0.0, 3.0])
    assert np.array_equal(op.chi(x), [0.0, 0.0, 1.0])


def test_make_estimator():
    assert isinstance(make_estimator("ls"), LeastSquares)
    est = make_estimator("cauchy", lam=0.7)
    assert isinstance(est, Cauchy) and est.lam == 0.7
    with pytest.raises(ValueError):
        make_estimator("huber")
    with pytest.raises(ValueError):
        Cauchy(0.0)
    with pytest.raises(ValueError):
        ShadowOperator("soft")
    with pytest.raises(ValueError):
        check_majorization(LeastSquares(), np.array([]))
