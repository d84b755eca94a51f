import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvq.mollifier import (
    MollifierSpec,
    gaussian,
    gaussian_derivative,
    hermite_eval,
    l1_norm,
    report_rows,
    rho_mass_and_tail,
    rho_sigma_eval,
    smeared_value,
    sup_norm,
)


def test_hermite_against_numpy():
    x = np.linspace(-3, 3, 13)
    for n in range(8):
        c = np.zeros(n + 1)
        c[n] = 1
        np.testing.assert_allclose(hermite_eval(n, x), np.polynomial.hermite.hermval(x, c), rtol=1e-12, atol=1e-9)


def test_gaussian_derivatives_by_finite_differences():
    s, h = 0.7, 1e-4
    x = np.linspace(-2, 2, 9)
    for j in (1, 2, 3):
        fd = (gaussian_derivative(j - 1, x + h, s) - gaussian_derivative(j - 1, x - h, s)) / (2 * h)
        np.testing.assert_allclose(gaussian_derivative(j, x, s), fd, rtol=1e-6, atol=1e-8)


def test_first_order_closed_form():
    s = 0.3
    x = np.linspace(-1, 1, 11)
    G = gaussian(x, s)
    expected = G * (1.5 - x * x / (2 * s * s))
    np.testing.assert_allclose(rho_sigma_eval(MollifierSpec(1, s), x), expected, rtol=1e-12)
    # same as G - sigma^2 / 2 G''
    np.testing.assert_allclose(expected, G - s * s / 2 * gaussian_derivative(2, x, s), rtol=1e-10, atol=1e-14)


def test_order_zero_is_the_gaussian():
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(rho_sigma_eval(MollifierSpec(0, 0.2), x), gaussian(x, 0.2))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 3), st.floats(1e-3, 2.0))
def test_unit_mass(m, sigma):
    mass, tail = rho_mass_and_tail(MollifierSpec(m, sigma), 0.5)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert tail >= 0


def test_sup_norm_scales_inversely_with_sigma():
    a = sup_norm(MollifierSpec(2, 0.1))
    b = sup_norm(MollifierSpec(2, 0.01))
    assert b / a == pytest.approx(10.0, rel=1e-3)


def test_l1_norm_at_least_mass():
    for m in (0, 1, 2):
        assert l1_norm(MollifierSpec(m, 0.5)) >= 1 - 1e-10
    assert l1_norm(MollifierSpec(0, 0.5)) == pytest.approx(1.0, abs=1e-10)


def test_moment_cancellation_gives_higher_order_convergence():
    # rho of order m reproduces polynomials up to degree 2m + 1
    s = 0.4
    for m in (1, 2):
        for deg in range(2 * m + 2):
            val = smeared_value(MollifierSpec(m, s), lambda x, d=deg: (x + 0.3) ** d)
            assert val == pytest.approx(0.3 ** deg, abs=1e-9)


def test_gap_rate_order_one():
    def phi(x):
        return math.exp(-x * x) * math.cos(x)
    rows = report_rows(1, [0.2, 0.1], phi=phi)
    # error is O(sigma^4) for m = 1
    assert rows[0]["gap"] / rows[1]["gap"] == pytest.approx(16, rel=0.15)


def test_spec_validation():
    with pytest.raises(ValueError):
        MollifierSpec(-1, 1.0)
    with pytest.raises(ValueError):
        MollifierSpec(1, 0.0)
    with pytest.raises(ValueError):
        rho_mass_and_tail(MollifierSpec(1, 1.0), 0.0)
