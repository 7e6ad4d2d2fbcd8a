import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pluripot.acceptance import mixed_alpha, triad
from pluripot.envelope import candidate_generator
from pluripot.geometry import AlphaForm, ScalarField, TorusGrid, alpha_from_spec, trig_field
from pluripot.monge_ampere import (contact_volume, contact_weights, dilate, energy, energy_derivative_check,
                                   ma_measure, regularity_profile, solve_envelope, variational_gap, volume)


@pytest.fixture(scope="module")
def env128():
    al = mixed_alpha(128)
    return al, solve_envelope(al, dims=[0])


def test_volume_of_flat_and_null_classes():
    g = TorusGrid(1, 16)
    assert volume(AlphaForm.constant(g, 0.7)) == pytest.approx(0.7)
    assert volume(AlphaForm.constant(g, 0.0)) == 0.0


def test_volume_of_mixed_class(env128):
    al, r = env128
    assert volume(al, result=r) == pytest.approx(0.3, abs=1e-4)
    assert contact_volume(al, r) == pytest.approx(0.3, abs=2e-3)


def test_subcell_weights_beat_node_counting(env128):
    al, r = env128
    err_sub = abs(contact_volume(al, r, subcell=True) - 0.3)
    err_node = abs(contact_volume(al, r, subcell=False) - 0.3)
    assert err_sub < err_node


def test_total_mass_is_cohomological(env128):
    al, r = env128
    rep = ma_measure(al, r)
    assert rep.total_mass == pytest.approx(0.3, abs=1e-12)
    assert rep.contact_mass + rep.off_contact_mass == pytest.approx(rep.total_mass)
    assert rep.as_dict()["off_contact_ratio_dilated"] < 1e-3


def test_contact_weights_trivial_masks():
    g = TorusGrid(1, 16)
    phi = trig_field(g, [((1, 0), -1.0, 0.0)], dims=[0])
    phi = phi.with_values(phi.values - 1.0)
    assert np.all(contact_weights(phi, np.ones(phi.values.shape, bool)) == 1.0)
    assert np.all(contact_weights(phi, np.zeros(phi.values.shape, bool)) == 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.5, 3.0))
def test_dilate_grows_and_respects_radius(seed, cells):
    rng = np.random.default_rng(seed)
    mask = rng.random((16, 16)) < 0.05
    big = dilate(mask, cells)
    assert np.all(big >= mask)
    single = np.zeros((16, 16), bool)
    single[8, 8] = True
    grown = np.argwhere(dilate(single, cells)) - 8
    assert np.all((grown ** 2).sum(axis=1) <= cells * cells)


def test_energy_shift_adds_class_mass():
    al = mixed_alpha(64)
    psi = trig_field(al.grid, [((1, 1), 0.02, 0.01)])
    assert energy(al, psi + 0.25) - energy(al, psi) == pytest.approx(0.25 * 0.3, abs=1e-12)


def test_energy_derivative_exact_for_quadratic_energy():
    al = mixed_alpha(32)
    psi = (-al.q).with_values((-al.q).values - 1.0)
    v = trig_field(al.grid, [((1, 0), 0.0, 1.0), ((0, 2), 0.3, 0.0)])
    rep = energy_derivative_check(al, psi, v)
    assert max(rep["errors"]) < 1e-12


def test_energy_derivative_second_order_n2():
    # the triad couples three modes, so the cubic term of E survives and central differences see it
    g = TorusGrid(2, 16)
    al = alpha_from_spec(g, np.eye(2), [((1, 0, 0, 0), 0.05, 0.0)], dims=[0])
    psi = trig_field(g, [((0, 0, 1, 0), 0.02, 0.0)], dims=[2])
    rep = energy_derivative_check(al, psi, triad(g), steps=(0.2, 0.1))
    assert rep["errors"][0] > 1e-8
    assert rep["ratios"][0] == pytest.approx(4.0, abs=0.5)


def test_envelope_minimizes_variational_functional():
    al = mixed_alpha(64)
    r = solve_envelope(al, dims=[0])
    for psi in candidate_generator(al, seed=1, count=8, dims=[0]):
        assert variational_gap(al, psi, r) >= -1e-6
    assert variational_gap(al, r.phi, r) == 0.0


def test_regularity_profile_of_smooth_family():
    phis = [ScalarField(TorusGrid(1, N), np.cos(2 * np.pi * np.arange(N) / N)[:, None]) for N in (32, 64, 128)]
    prof = regularity_profile(phis)
    assert prof.N == [32, 64, 128]
    assert prof.variation < 0.01
    assert prof.growth == pytest.approx(1.0, abs=0.01)
