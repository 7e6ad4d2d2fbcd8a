import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pluripot.errors import KltViolationError, ValidationError
from pluripot.geometry import TorusGrid, integrate
from pluripot.supercanonical import (_SQUARE_SYMMETRIES, GreenTable, KltWeight, SupercanonicalObjective,
                                     SupercanonicalProblem, _lattice_images, atom_values, candidate_envelope,
                                     competitor, equality_probe, green_candidate, green_function, green_kernel,
                                     p_sweep, poisson_residual, supercanonical_envelope)

G32 = TorusGrid(1, 32)


def pole_weight(grid, c=0.5):
    return KltWeight(grid, [(grid.N // 2, grid.N // 2)], [c], normalize=True)


@pytest.fixture(scope="module")
def pole_run():
    return supercanonical_envelope(SupercanonicalProblem(G32, 1.0, pole_weight(G32), eval_stride=8))


def test_green_kernel_invariants():
    G = green_kernel(G32)
    assert abs(G.mean()) < 1e-14
    assert np.allclose(G, np.roll(G[::-1, ::-1], 1, axis=(0, 1)), atol=1e-12)
    assert np.allclose(G, G.T, atol=1e-12)
    assert poisson_residual(G32, G, (0, 0)) < 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 31), st.integers(0, 31))
def test_green_function_is_translation_equivariant(i, j):
    G = green_function(G32, (i, j))
    assert np.allclose(G.values, np.roll(green_kernel(G32), (i, j), axis=(0, 1)))
    assert G.poles == (((i, j), 1.0),)
    assert poisson_residual(G32, G.values, (i, j)) < 1e-9


def test_green_near_field_is_log_distance_squared():
    N = 256
    G = green_kernel(TorusGrid(1, N))
    r = 8 / N
    # log|z|^2 doubles by log 4; the smooth part -pi |z|^2 accounts for the rest
    expected = np.log(4.0) - 3 * np.pi * r * r
    assert G[16, 0] - G[8, 0] == pytest.approx(expected, abs=5e-3)
    assert G[0, 16] - G[0, 8] == pytest.approx(expected, abs=5e-3)


def test_klt_weight_rules():
    with pytest.raises(KltViolationError, match="violates the klt condition"):
        KltWeight(G32, [(8, 8)], [1.2])
    with pytest.raises(ValidationError):
        KltWeight(G32, [(8, 8)], [])
    w = pole_weight(G32)
    assert np.add.reduce(w.quadrature().ravel()) == pytest.approx(1.0, abs=1e-12)
    assert KltWeight(G32).is_trivial and not w.is_trivial


@pytest.mark.parametrize("p", [1.0, 3.0])
def test_green_candidate_saturates_constraint(p):
    gamma = pole_weight(G32)
    u = green_candidate(0.8, gamma, (5, 9), p)
    assert np.add.reduce((gamma.quadrature() * np.exp(p * u.values)).ravel()) == pytest.approx(1.0, abs=1e-12)
    assert np.unravel_index(np.argmin(u.values), u.values.shape) == (5, 9)
    assert np.all(green_candidate(0.0, gamma, (5, 9)).values == 0.0)
    with pytest.raises(ValidationError):
        green_candidate(-1.0, gamma, (5, 9))


def test_problem_validation():
    with pytest.raises(ValidationError):
        SupercanonicalProblem(G32, -0.5)
    with pytest.raises(ValidationError):
        SupercanonicalProblem(G32, 1.0, p=0.5)


def test_zero_lambda_gives_zero():
    pb = supercanonical_envelope(SupercanonicalProblem(G32, 0.0, eval_stride=8))
    assert np.all(pb.phi_can == 0.0)
    assert equality_probe(pb)["gap"] == 0.0


def test_flat_weight_is_translation_invariant():
    pb = supercanonical_envelope(SupercanonicalProblem(G32, 1.0, eval_stride=8))
    assert np.ptp(pb.phi_can) < 1e-9
    probe = equality_probe(pb)
    assert probe["max_support"] == 1
    assert abs(probe["gap"]) < 1e-12


def test_constraint_scaling_shifts_by_log_over_p():
    M, p = 3.0, 2.0
    base = supercanonical_envelope(SupercanonicalProblem(G32, 1.0, eval_stride=8, p=p))
    scaled = supercanonical_envelope(SupercanonicalProblem(G32, 1.0, KltWeight(G32, constant=np.log(M)),
                                                           eval_stride=8, p=p))
    assert np.allclose(scaled.phi_can - base.phi_can, np.log(M) / p, atol=1e-9)


def test_pole_solution_diagnostics(pole_run):
    d = pole_run.diagnostics()
    assert d["constraint_residual"] < 1e-12
    assert d["duality_gap"] < pole_run.gap_tol
    assert d["psh_min"] > -1e-9
    assert pole_run.rho.shape == (16, G32.N ** 2 // 4)
    assert np.allclose(pole_run.rho.sum(axis=1), 1.0)


def test_competitor_attains_value(pole_run):
    for s in pole_run.solutions[:4]:
        assert competitor(pole_run, s)[s.z0] == pytest.approx(s.value, abs=1e-12)


def test_phi_can_dominates_green_candidates(pole_run):
    q = pole_run.gamma.quadrature()
    for s in pole_run.solutions:
        vals = atom_values(SupercanonicalObjective(pole_run.table, q, 1.0, 1.0, s.z0))
        assert s.value >= vals.max() - 1e-9
    assert np.all(pole_run.phi_can >= candidate_envelope(pole_run) - 1e-9)


def test_dirac_weights_recover_green_candidate(pole_run):
    table, gamma = pole_run.table, pole_run.gamma
    obj = SupercanonicalObjective(table, gamma.quadrature(), 1.0, 1.0, (8, 16))
    vals = atom_values(obj)
    for k in (0, 37, 200):
        e = np.zeros(table.n_sources)
        e[k] = 1.0
        ref = green_candidate(1.0, gamma, table.sources[k], 1.0, table).values[8, 16]
        assert obj(e) == pytest.approx(ref, abs=1e-10)
        assert vals[k] == pytest.approx(ref, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.0, 1.0))
def test_objective_is_concave(seed, th):
    table = GreenTable(G32, 2)
    obj = SupercanonicalObjective(table, pole_weight(G32).quadrature(), 1.0, 1.0, (3, 11))
    r1, r2 = np.random.default_rng(seed).dirichlet(np.full(table.n_sources, 0.1), size=2)
    assert obj(th * r1 + (1 - th) * r2) >= th * obj(r1) + (1 - th) * obj(r2) - 1e-9


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 15), st.integers(0, 15), st.integers(0, 7))
def test_lattice_images_preserve_the_objective(seed, i, j, a):
    # an isometry fixing the central pole fixes the weight, so values carry over
    table, q = GreenTable(G32, 2), pole_weight(G32).quadrature()
    pole = np.array([16, 16])
    A = _SQUARE_SYMMETRIES[a]
    z_from = np.array([2 * i, 2 * j])
    z_to = tuple((A @ (z_from - pole) + pole) % 32)
    rho = np.random.default_rng(seed).dirichlet(np.full(table.n_sources, 0.2))
    images = _lattice_images(table, rho, tuple(z_from), z_to)
    assert len(images) == 8 and all(img.sum() == pytest.approx(1.0) for img in images)
    ref = SupercanonicalObjective(table, q, 1.0, 2.0, tuple(z_from))(rho)
    assert SupercanonicalObjective(table, q, 1.0, 2.0, z_to)(images[a]) == pytest.approx(ref, abs=1e-10)


def test_p_sweep_is_monotone():
    sweep = p_sweep(G32, 1.0, pole_weight(G32), ps=(1, 2, 4), eval_stride=16)
    assert np.all(sweep[2].phi_can <= sweep[1].phi_can + 1e-9)
    assert np.all(sweep[4].phi_can <= sweep[2].phi_can + 1e-9)


def test_pole_case_regression_n64():
    g = TorusGrid(1, 64)
    pb = supercanonical_envelope(SupercanonicalProblem(g, 1.0, pole_weight(g), eval_stride=16))
    probe = equality_probe(pb)
    assert pb.phi_can[0, 0] == pytest.approx(0.7632, abs=1e-4)
    assert pb.phi_can[2, 2] == pytest.approx(0.35859, abs=1e-4)
    assert probe["gap"] == pytest.approx(0.11407, abs=1e-4)
    assert probe["max_support"] == 21


def test_normalized_weight_integrates_to_one():
    assert integrate(1.0, log_weight=-pole_weight(G32).gamma) == pytest.approx(1.0, abs=1e-12)
