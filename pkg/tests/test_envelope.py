import numpy as np
import pytest
from scipy.optimize import brentq

from pluripot.acceptance import mixed_alpha
from pluripot.envelope import (candidate_generator, complementarity_residual, contact_set, envelope_disc_average,
                               envelope_obstacle_1d, make_candidate)
from pluripot.errors import NotPseudoEffectiveError, ValidationError
from pluripot.geometry import AlphaForm, ScalarField, TorusGrid, alpha_from_spec, hessian_fd, min_eigenvalue
from pluripot.monge_ampere import solve_envelope


def exact_envelope(x):
    """Closed form for ``a = 0.3 + cos 2 pi x``: zero on the contact set, a C^1 quadratic-plus-cosine gap."""
    x0 = brentq(lambda t: 0.3 * (0.5 - t) - np.sin(2 * np.pi * t) / (2 * np.pi), 0.05, 0.45)
    F = lambda t: 0.3 * t ** 2 / 2 - np.cos(2 * np.pi * t) / (4 * np.pi ** 2)
    dF = lambda t: 0.3 * t + np.sin(2 * np.pi * t) / (2 * np.pi)
    gap = (x > x0) & (x < 1 - x0)
    return np.where(gap, -4 * np.pi * (F(x) - F(x0) - dF(x0) * (x - x0)), 0.0)


def test_flat_class_has_zero_envelope():
    g = TorusGrid(1, 32)
    for solve in (envelope_obstacle_1d, envelope_disc_average):
        r = solve(AlphaForm.constant(g, 1.0))
        assert np.all(r.phi.values == 0)
        assert np.all(contact_set(r))


def test_obstacle_matches_closed_form():
    N = 128
    r = envelope_obstacle_1d(mixed_alpha(N), shape=(N, 1))
    x = np.arange(N) / N
    assert np.max(np.abs(r.phi.values[:, 0] - exact_envelope(x))) < 1e-5
    # the update tolerance is amplified by 1/(pi h^2) in density units
    assert complementarity_residual(r, mixed_alpha(N)) < r.tol * N * N / np.pi


def test_disc_average_converges_second_order():
    errs = []
    for N in (32, 64):
        r = envelope_disc_average(mixed_alpha(N), dims=[0])
        errs.append(np.max(np.abs(r.phi.values[:, 0] - exact_envelope(np.arange(N) / N))))
    assert errs[1] < 2e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_reduced_layout_matches_full_grid():
    N = 32
    al = mixed_alpha(N)
    full = envelope_obstacle_1d(al, coarse_min=None)
    red = envelope_obstacle_1d(al, shape=(N, 1), coarse_min=None)
    assert full.phi.values.shape == (N, N)
    assert np.max(np.abs(full.phi.values - red.phi.values)) < 1e-6


def test_envelope_is_nonpositive_and_alpha_psh():
    N = 64
    al = mixed_alpha(N)
    r = envelope_obstacle_1d(al, shape=(N, 1))
    assert r.phi.values.max() <= 0
    lam = min_eigenvalue(al.coeff() + hessian_fd(r.phi)).values
    assert lam.min() > -1e-5


def test_monotone_in_the_class():
    N = 64
    small = envelope_obstacle_1d(mixed_alpha(N), shape=(N, 1))
    bigger = envelope_obstacle_1d(mixed_alpha(N).shifted(0.2), shape=(N, 1))
    assert np.all(bigger.phi.values >= small.phi.values - 1e-8)


def test_negative_class_rejected():
    g = TorusGrid(1, 16)
    with pytest.raises(NotPseudoEffectiveError):
        solve_envelope(AlphaForm.constant(g, -0.1))
    with pytest.raises(ValidationError):
        envelope_obstacle_1d(AlphaForm.constant(TorusGrid(2, 8)))


def test_solve_envelope_dispatch():
    N = 32
    r = solve_envelope(mixed_alpha(N), dims=[0])
    assert r.method in ("obstacle", "disc-average")
    assert r.diagnostics()["iterations"] == r.iterations


def test_candidates_are_admissible():
    g = TorusGrid(2, 16)
    al = alpha_from_spec(g, np.eye(2), [((1, 0, 0, 0), 0.05, 0.0)], dims=[0])
    cands = candidate_generator(al, seed=7, count=6, dims=[0, 2])
    again = candidate_generator(al, seed=7, count=6, dims=[0, 2])
    for psi, twin in zip(cands, again):
        assert np.array_equal(psi.values, twin.values)
        assert psi.values.max() <= 0
        assert min_eigenvalue(al.coeff() + hessian_fd(psi)).values.min() > -1e-10


def test_make_candidate_shift():
    al = mixed_alpha(16)
    psi = make_candidate(al, None, 0.0, -0.25)
    assert psi.values.max() == pytest.approx(-0.25)
    assert np.allclose(psi.values - psi.values.max(), (-al.q).values - (-al.q).values.max())
    assert isinstance(psi, ScalarField)
