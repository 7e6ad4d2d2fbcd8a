import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as spi
from scipy import special

from pluripot.geometry import AlphaForm, ScalarField, TorusGrid, trig_field
from pluripot.regularize import (RegularizationParams, SmoothingKernel, chi_profile, estimate_K,
                                 hessian_floor_check, kiselman_transform, lambda_slope, lelong_estimate,
                                 monotone_defect, monotone_transform, rho)
from pluripot.supercanonical import green_function

KERNEL = SmoothingKernel(1)
DELTA_DEFAULT = RegularizationParams().delta


def cos_field(N, amp=1.0):
    g = TorusGrid(1, N)
    return ScalarField(g, amp * np.cos(2 * np.pi * g.coord(0, (N, 1))))


def test_kernel_normalizer_closed_form():
    # ∫_0^1 (1-s)^-2 e^{1/(s-1)} ds = 1/e, so C_1 = e / pi
    assert KERNEL.normalizer == pytest.approx(math.e / math.pi, rel=1e-5)
    assert KERNEL.weights.sum() == pytest.approx(1.0)


def test_kernel_normalizer_n2_against_quadrature():
    ref = 1.0 / (2 * np.pi ** 2 * spi.quad(lambda r: chi_profile(r * r) * r ** 3, 0, 1)[0])
    assert SmoothingKernel(2).normalizer == pytest.approx(ref, rel=1e-5)


def test_chi_vanishes_outside_ball():
    assert np.all(chi_profile(np.array([1.0, 1.5, 4.0])) == 0)
    assert np.all(chi_profile(np.linspace(0, 0.99, 50)) > 0)


def test_rho_of_constant():
    g = TorusGrid(1, 32)
    assert np.allclose(rho(ScalarField.constant(g, 2.5).expand((32, 32)), 0.1, KERNEL).values, 2.5)
    with pytest.raises(ValueError):
        rho(ScalarField.constant(g), 0.0, KERNEL)


@pytest.mark.parametrize("t", [0.05, 0.1])
def test_rho_multiplies_cos_mode_by_bessel_average(t):
    mult = 2 * np.pi * KERNEL.normalizer * spi.quad(
        lambda r: chi_profile(r * r) * special.j0(2 * np.pi * t * r) * r, 0, 1)[0]
    u = cos_field(256)
    assert np.max(np.abs(rho(u, t, KERNEL).values - mult * u.values)) < 1e-4


def test_estimate_K_flat_classes():
    g = TorusGrid(1, 16)
    assert estimate_K(AlphaForm.constant(g, 0.0), KERNEL) == pytest.approx(1.0)
    assert estimate_K(AlphaForm.constant(g, 1.0), KERNEL) > 1.0


def test_monotone_with_K_and_not_without():
    N = 256
    u = cos_field(N, 0.1)
    K = estimate_K(AlphaForm.constant(u.grid, 1.0), KERNEL)
    assert monotone_defect(u, RegularizationParams(K=K), KERNEL) < 1e-5
    assert monotone_defect(u, RegularizationParams(K=0.0), KERNEL) > 1e-3
    tab = monotone_transform(u, (0, 0), RegularizationParams(K=K), KERNEL)
    assert tab.is_monotone()


@pytest.mark.parametrize("c", [0.5, 1.0])
def test_lelong_number_of_green_pole(c):
    N = 256
    G = green_function(TorusGrid(1, N), (100, 60))
    assert lelong_estimate(G * c, (100, 60), 8 / N, RegularizationParams(), KERNEL) == pytest.approx(c, abs=2e-3)


def test_smooth_point_has_no_lelong_number():
    N = 256
    G = green_function(TorusGrid(1, N), (100, 60))
    assert abs(lelong_estimate(G, (20, 200), 8 / N, RegularizationParams(), KERNEL)) < 0.02


def test_slope_is_one_sided_at_the_ends():
    u = cos_field(64, 0.1)
    p = RegularizationParams()
    assert lambda_slope(u, (0, 0), p.t_grid[0], p, KERNEL).one_sided
    assert not lambda_slope(u, (0, 0), p.t_grid[5], p, KERNEL).one_sided


def test_params_validation():
    with pytest.raises(ValueError):
        RegularizationParams(t_grid=[0.1, 0.05])
    with pytest.raises(ValueError):
        RegularizationParams(delta=0.5)
    assert RegularizationParams(A=1.5).B(0.5) == pytest.approx(6.0)


def test_kiselman_of_constant_is_constant():
    g = TorusGrid(1, 32)
    res = kiselman_transform(ScalarField.constant(g, -0.3).expand((32, 32)), RegularizationParams(K=1.0), KERNEL)
    assert np.allclose(res.field.values, -0.3)
    assert np.all(res.t_min == DELTA_DEFAULT)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.1, 2.0))
def test_kiselman_bounds_and_monotone_in_c(c1, c2):
    u = trig_field(TorusGrid(1, 32), [((1, 0), 0.05, 0.02), ((1, 1), 0.01, 0.0)])
    lo, hi = sorted((c1, c2))
    delta = 0.125
    a = kiselman_transform(u, RegularizationParams(K=2.0, c=lo, delta=delta), KERNEL).field.values
    b = kiselman_transform(u, RegularizationParams(K=2.0, c=hi, delta=delta), KERNEL).field.values
    assert np.all(a <= b + 1e-12)
    assert np.all(b <= rho(u, delta, KERNEL).values + 1e-12)


def test_floor_check_trivial_psi():
    g = TorusGrid(1, 32)
    rep = hessian_floor_check(ScalarField.constant(g).expand((32, 32)), RegularizationParams(K=1.0),
                              AlphaForm.constant(g, 1.0), KERNEL)
    assert rep.worst_violation == 0.0
    assert rep.min_eigenvalue == pytest.approx(1.0)
    assert rep.as_dict()["floor_min"] == pytest.approx(-DELTA_DEFAULT ** 2)
