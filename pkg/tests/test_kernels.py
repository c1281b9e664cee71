import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from hypspde.kernels import (
    AssumptionViolation,
    KernelProfile,
    PlacementError,
    TruncationError,
    fractional_apply,
    laplacian_bump,
    min_modes,
    rescale_coeffs,
    sobolev_norm,
)
from hypspde.model import eigenfunction

NORM_SQ = 2.3819660840534777e-05


def test_bump_norm(bump):
    assert bump.norm_sq == pytest.approx(NORM_SQ, rel=1e-12)
    ref = quad(lambda y: bump(np.array([y]))[0] ** 2, -1, 1, epsabs=0, epsrel=1e-13)[0]
    assert bump.norm_sq == pytest.approx(ref, rel=1e-10)


def test_derivatives_match_finite_differences(bump):
    y = np.linspace(-0.9, 0.9, 7)
    eps = 1e-5
    fd = (bump.derivative(y + eps) - bump.derivative(y - eps)) / (2 * eps)
    np.testing.assert_allclose(bump.derivative(y, 1), fd, rtol=1e-6, atol=1e-12)
    lap = laplacian_bump(1)
    np.testing.assert_allclose(lap(y), bump.derivative(y, 2), rtol=1e-13)


@pytest.mark.parametrize("delta,x", [(0.1, 0.5), (0.05, 0.3), (0.02, 0.77)])
def test_parseval_isometry(bump, delta, x):
    c = rescale_coeffs(bump, delta, x, min_modes(delta))
    assert abs(c.rel_deficit) < 1e-6


def test_even_modes_vanish_at_centre(bump):
    c = rescale_coeffs(bump, 0.1, 0.5, 80).c
    assert np.max(np.abs(c[1::2])) < 1e-14 * np.max(np.abs(c))


def test_coefficients_match_direct_quadrature(bump):
    delta, x = 0.1, 0.37
    c = rescale_coeffs(bump, delta, x, 20, check_truncation=False).c
    for k in (1, 4, 11):
        f = lambda z: eigenfunction(k, np.array([z]))[0] * bump(np.array([(z - x) / delta]))[0] / math.sqrt(delta)
        ref = quad(f, x - delta, x + delta, epsabs=0, epsrel=1e-12)[0]
        assert c[k - 1] == pytest.approx(ref, rel=1e-9, abs=1e-16)


def test_laplacian_coefficients_match_second_derivative(bump):
    delta, x = 0.1, 0.5
    c = rescale_coeffs(bump, delta, x, 80)
    lam_c = fractional_apply(c, 1.0).c
    d2 = rescale_coeffs(laplacian_bump(1), delta, x, 80, check_truncation=False).c
    # -K''_{delta,x} = -delta^{-2} (K'')_{delta,x}
    big = np.abs(lam_c) > 1e-6 * np.abs(lam_c).max()
    np.testing.assert_allclose(lam_c[big], -d2[big] / delta**2, rtol=1e-6)


def test_truncation_and_placement_errors(bump):
    with pytest.raises(TruncationError):
        rescale_coeffs(bump, 0.05, 0.5, 10)
    with pytest.raises(PlacementError):
        rescale_coeffs(bump, 0.1, 0.05, 80)


def test_sobolev_zero_is_l2(bump):
    assert sobolev_norm(bump, 0.0) == pytest.approx(NORM_SQ, rel=1e-10)


def test_sobolev_half_is_derivative_norm(bump):
    ref = quad(lambda y: bump.derivative(np.array([y]), 1)[0] ** 2, -1, 1, epsrel=1e-13)[0]
    assert sobolev_norm(bump, 0.5) == pytest.approx(ref, rel=1e-10)


def test_negative_order_needs_mean_zero(bump):
    with pytest.raises(AssumptionViolation):
        sobolev_norm(bump, -0.5)
    # (-Delta)^{-1/2} K'' has the norm of K'
    assert sobolev_norm(laplacian_bump(1), -0.5) == pytest.approx(sobolev_norm(bump, 0.5), rel=1e-8)


def test_effective_radius_is_monotone(bump):
    r = [bump.effective_radius(t) for t in (1e-8, 1e-10, 1e-12)]
    assert 0 < r[0] < r[1] < r[2] < 1
    assert bump.effective_radius(None) == 1.0


@given(x=st.floats(0.2, 0.8), delta=st.floats(0.02, 0.15))
def test_rescaled_norm_is_preserved(bump, x, delta):
    c = rescale_coeffs(bump, delta, x, min_modes(delta), check_truncation=False)
    assert abs(c.rel_deficit) < 1e-5
