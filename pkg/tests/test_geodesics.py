import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pluripot.acceptance import geodesic_pair
from pluripot.errors import PreconditionError, ValidationError
from pluripot.geodesics import (GeodesicProblem, boundary_continuity_check, lagrange_window, linear_interpolant,
                                lower_barrier, uniform_bound_check, weak_geodesic)
from pluripot.geometry import AlphaForm, ScalarField, TorusGrid, alpha_from_spec, trig_field


def flat(N):
    return alpha_from_spec(TorusGrid(1, N), [[1.0]], [], dims=[0])


def const(grid, c):
    return ScalarField.constant(grid, c).expand((grid.N, 1))


@pytest.fixture(scope="module")
def pair_run():
    pb = geodesic_pair(32, 8)
    return pb, weak_geodesic(pb), weak_geodesic(pb, init="barrier")


@pytest.mark.parametrize("init", ["linear", "barrier"])
def test_trivial_geodesic(init):
    al = flat(32)
    r = weak_geodesic(GeodesicProblem(al, const(al.grid, 0.0), const(al.grid, 0.0), Nt=8), init=init)
    assert np.all(r.phi == 0.0)


@pytest.mark.parametrize("init", ["linear", "barrier"])
def test_constants_are_joined_linearly(init):
    al = flat(32)
    pb = GeodesicProblem(al, const(al.grid, 0.0), const(al.grid, -0.7), Nt=8)
    r = weak_geodesic(pb, init=init)
    assert np.max(np.abs(r.phi[:, :, 0] + 0.7 * pb.t[:, None])) < 1e-12


def test_preconditions():
    al = flat(32)
    bad = trig_field(al.grid, [((1, 0), 1.0, 0.0)], dims=[0])
    with pytest.raises(PreconditionError):
        GeodesicProblem(al, const(al.grid, 0.0), bad, Nt=8)
    with pytest.raises(PreconditionError):
        GeodesicProblem(AlphaForm.constant(al.grid, -1.0), const(al.grid, 0.0), const(al.grid, 0.0), Nt=8)
    with pytest.raises(ValidationError):
        GeodesicProblem(al, const(al.grid, 0.0), const(al.grid, 0.0), Nt=4)
    with pytest.raises(ValidationError):
        weak_geodesic(GeodesicProblem(al, const(al.grid, 0.0), const(al.grid, 0.0), Nt=8), init="zero")


@given(st.floats(0.0, 9.0), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_lagrange_window_reproduces_cubics(tau, coef):
    start, w = lagrange_window(tau, 10)
    assert 0 <= start <= 6
    nodes = np.arange(start, start + 4)
    assert w.sum() == pytest.approx(1.0)
    assert w @ np.polyval(coef, nodes) == pytest.approx(np.polyval(coef, tau), abs=1e-8)


def test_barrier_matches_data_at_the_ends():
    pb = geodesic_pair(32, 8)
    low = lower_barrier(pb)
    assert np.allclose(low[0], pb.f0.values) and np.allclose(low[-1], pb.f1.values)
    assert np.all(low <= linear_interpolant(pb) + 1e-12)


def test_geodesic_between_barriers(pair_run):
    pb, r, _ = pair_run
    assert r.report["boundary_error"] == 0.0
    assert np.all(r.phi <= linear_interpolant(pb) + 1e-9)
    assert np.all(r.phi >= lower_barrier(pb) - 1e-9)


def test_initializations_agree(pair_run):
    _, r, s = pair_run
    assert np.max(np.abs(r.phi - s.phi)) < 5e-8


def test_slices_stay_alpha_psh_and_convex_in_t(pair_run):
    _, r, _ = pair_run
    rep = r.report
    assert rep["slice_min_eigenvalue"] > -rep["eps_grid"]
    assert rep["t_convexity_min"] >= -rep["eps_grid"]
    assert rep["convexity_violations"] == 0
    assert r.slice(3).values.shape == (32, 1)


def test_bound_and_continuity_summaries(pair_run):
    _, r, s = pair_run
    ub = uniform_bound_check([r, s])
    assert ub["variation"] == pytest.approx(0.0, abs=1e-6)
    bc = boundary_continuity_check(r)
    assert np.isfinite(bc["C0"]) and np.isfinite(bc["C1"])
    assert len(bc["approach0"]) == r.problem.Nt - 1
