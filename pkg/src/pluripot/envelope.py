"""Upper envelopes ``phi = sup{psi <= obstacle : alpha + dd^c psi >= 0}``.

Two independent discretizations are provided:

* :func:`envelope_obstacle_1d` (n = 1) solves the linear complementarity
  problem ``u <= 0``, ``a + Δ_h u / 4π >= 0`` with the 5-point Laplacian by
  red-black projected SOR;
* :func:`envelope_disc_average` (n = 1, 2) is a Perron iteration that
  enforces a sub-mean-value inequality on small complex circles along a fixed
  set of complex directions, with a correction calibrated so that functions
  with ``alpha + dd^c u = 0`` are exact fixed points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPseudoEffectiveError, ValidationError
from .geometry import AlphaForm, ScalarField, hessian_fd
from .stencil import (PerronProblem, apply_stencil, circle_offsets, complex_directions, interpolated_quadratic_mean,
                      perron_solve, real_quadratic_form, shift_stencil, stencil_matrix)

TOL_SOLVE = {1: 1e-8, 2: 1e-6}
MAX_ITER = 200_000


@dataclass
class EnvelopeResult:
    phi: ScalarField
    contact: np.ndarray
    iterations: int
    residual: float
    method: str
    tol: float

    @property
    def contact_tol(self) -> float:
        return 10.0 * self.tol

    @property
    def contact_fraction(self) -> float:
        return float(np.mean(np.broadcast_to(self.contact, self.phi.values.shape)))

    def diagnostics(self) -> dict:
        return {"method": self.method, "iterations": self.iterations, "residual": self.residual,
                "tol": self.tol, "contact_fraction": self.contact_fraction}


def _problem_shape(alpha: AlphaForm, obstacle: ScalarField | None, dims):
    shape = alpha.grid.reduced_shape(dims) if dims is not None else (1,) * alpha.grid.ndim
    shape = np.broadcast_shapes(shape, alpha.shape)
    if obstacle is not None:
        shape = np.broadcast_shapes(shape, obstacle.values.shape)
    return tuple(shape)


def _check_pseudo_effective(alpha: AlphaForm):
    mass = alpha.class_mass
    if mass < 0:
        raise NotPseudoEffectiveError(f"class mass {mass:.6g} < 0: the class is not pseudo-effective")
    return mass


def contact_set(result: EnvelopeResult, contact_tol: float | None = None) -> np.ndarray:
    """Nodes where the envelope touches the obstacle, ``phi >= -contact_tol``."""
    tol = result.contact_tol if contact_tol is None else contact_tol
    return result.phi.values >= -tol


def _finish(alpha, u, shape, iters, upd, method, tol, obstacle=None):
    phi = ScalarField(alpha.grid, u.reshape(shape))
    obs = 0.0 if obstacle is None else np.broadcast_to(obstacle.values, shape)
    res = EnvelopeResult(phi, None, iters, float(upd), method, tol)
    res.contact = phi.values >= obs - res.contact_tol
    return res


# ---------------------------------------------------------------------------
# obstacle problem, n = 1
# ---------------------------------------------------------------------------

def laplacian_average_operator(shape, axes):
    """Periodic neighbour average over ``axes`` as a sparse matrix."""
    K = np.zeros(shape)
    for ax in axes:
        for step in (1, -1):
            idx = [0] * len(shape)
            idx[ax] = step % shape[ax]
            K[tuple(idx)] += 0.5 / len(axes)
    return stencil_matrix(K)


def red_black_order(shape, axes) -> np.ndarray:
    """Flat node indices, red nodes (even index sum) first, each color lexicographic."""
    parity = (sum(np.indices(shape)[ax] for ax in axes) % 2).ravel()
    return np.concatenate([np.flatnonzero(parity == 0), np.flatnonzero(parity == 1)]).astype(np.int64)


def _prolong(u, shape, axes):
    """Periodic linear interpolation from a grid coarsened by 2 along ``axes``."""
    for ax in axes:
        fine = np.repeat(u, 2, axis=ax)
        odd = [slice(None)] * u.ndim
        odd[ax] = slice(1, None, 2)
        fine[tuple(odd)] = 0.5 * (u + np.roll(u, -1, ax))
        u = fine
    return u.reshape(shape)


def _obstacle_lcp(a, h, axes, tol, omega, max_iter, init, coarse_min):
    shape = a.shape
    if init is None and min(shape[ax] for ax in axes) >= 2 * coarse_min:
        sub = tuple(slice(None, None, 2) if ax in axes else slice(None) for ax in range(a.ndim))
        uc, _, _ = _obstacle_lcp(np.ascontiguousarray(a[sub]), 2 * h, axes, tol, omega, max_iter, None, coarse_min)
        init = np.minimum(_prolong(uc.reshape(a[sub].shape), shape, axes), 0.0)
    corr = (4 * np.pi * h * h / (2 * len(axes))) * a
    problem = PerronProblem([laplacian_average_operator(shape, axes)], corr.ravel()[None, :], np.zeros(shape))
    problem.order = red_black_order(shape, axes)
    u0 = np.zeros(shape) if init is None else np.minimum(np.broadcast_to(init, shape), 0.0)
    return perron_solve(problem, u0, tol, max_iter, omega)


def envelope_obstacle_1d(alpha: AlphaForm, tol: float | None = None, omega: float = 1.8,
                         max_iter: int = MAX_ITER, init: np.ndarray | None = None,
                         shape: tuple | None = None, coarse_min: int | None = 32) -> EnvelopeResult:
    """Largest ``u <= 0`` with ``a + Δ_h u / 4π >= 0``, by red-black projected SOR.

    Without ``init`` the iteration starts from the interpolated solution on
    the grid coarsened by two (recursively, down to ``coarse_min`` nodes per
    axis; ``None`` disables this and starts from 0).  ``shape`` selects the
    array layout (defaults to the full grid); a reduced layout gives the same
    values when ``alpha`` is invariant along the dropped axes.
    """
    grid = alpha.grid
    if grid.n != 1:
        raise ValidationError("envelope_obstacle_1d needs complex dimension 1")
    _check_pseudo_effective(alpha)
    tol = TOL_SOLVE[1] if tol is None else tol
    shape = grid.shape if shape is None else tuple(np.broadcast_shapes(shape, alpha.shape))
    axes = [ax for ax, s in enumerate(shape) if s > 1]
    if not axes:
        return _finish(alpha, np.zeros(shape), shape, 0, 0.0, "obstacle", tol)
    a = np.ascontiguousarray(np.broadcast_to(np.real(alpha.coeff().coeff[..., 0, 0]), shape))
    u, iters, upd = _obstacle_lcp(a, grid.h, axes, tol, omega, max_iter, init, coarse_min or 10 ** 9)
    return _finish(alpha, u, shape, iters, upd, "obstacle", tol)


def complementarity_residual(result: EnvelopeResult, alpha: AlphaForm) -> float:
    """Node-wise ``sup |min(-phi, a + Δ_h phi / 4π)|`` for an n = 1 envelope."""
    H = hessian_fd(result.phi)
    dens = np.real(alpha.coeff().coeff[..., 0, 0]) + np.real(H.coeff[..., 0, 0])
    return float(np.max(np.abs(np.minimum(-result.phi.values, dens))))


# ---------------------------------------------------------------------------
# disc-average Perron iteration
# ---------------------------------------------------------------------------

def disc_average_operators(alpha: AlphaForm, shape, radius_cells: float = 3.0, n_dirs: int = 16,
                           circle_points: int = 16):
    """Circle-mean matrices and calibrated corrections, one pair per complex direction."""
    grid = alpha.grid
    h = grid.h
    r = radius_cells * h
    A = real_quadratic_form(alpha.beta)
    q = np.broadcast_to(alpha.q.values, shape).copy()
    mats, corrs = [], []
    weights = np.full(circle_points, 1.0 / circle_points)
    for zeta in complex_directions(grid.n, n_dirs):
        off = circle_offsets(zeta, r, circle_points)
        K = shift_stencil(shape, h, off, weights)
        mats.append(stencil_matrix(K))
        corr = interpolated_quadratic_mean(A, off, shape, h) + (apply_stencil(q, K) - q)
        corrs.append(np.broadcast_to(corr, shape).ravel())
    return mats, np.array(corrs)


def envelope_disc_average(alpha: AlphaForm, obstacle: ScalarField | None = None, dims=None,
                          tol: float | None = None, max_iter: int = MAX_ITER, omega: float = 1.0,
                          radius_cells: float = 3.0, n_dirs: int = 16, circle_points: int = 16,
                          init: np.ndarray | None = None) -> EnvelopeResult:
    """Largest fixed point of ``u -> min(obstacle, min_dir circle-mean(u) + correction)``.

    ``dims`` lists the real axes the solution may vary along; the default is
    every axis along which ``alpha`` or ``obstacle`` varies, plus all axes for
    n = 1.  ``omega > 1`` over-relaxes the projected Gauss-Seidel sweep.
    """
    grid = alpha.grid
    _check_pseudo_effective(alpha)
    lam = np.linalg.eigvalsh(alpha.beta)
    if lam.min() < -1e-12:
        raise ValidationError("disc averaging needs a semipositive beta")
    if dims is None and grid.n == 1:
        dims = range(grid.ndim)
    shape = _problem_shape(alpha, obstacle, dims)
    tol = TOL_SOLVE[grid.n] if tol is None else tol
    obs = np.zeros(shape) if obstacle is None else np.broadcast_to(obstacle.values, shape)
    mats, corrs = disc_average_operators(alpha, shape, radius_cells, n_dirs, circle_points)
    problem = PerronProblem(mats, corrs, obs)
    u0 = np.minimum(0.0, obs) if init is None else np.minimum(np.broadcast_to(init, shape), obs)
    u, iters, upd = perron_solve(problem, u0, tol, max_iter, omega)
    return _finish(alpha, u, shape, iters, upd, "disc-average", tol, obstacle)


# ---------------------------------------------------------------------------
# admissible candidates
# ---------------------------------------------------------------------------

def _max_scale(beta, H):
    """Largest ``s`` with ``beta + s H >= 0`` at every node (``beta`` positive definite)."""
    w, V = np.linalg.eigh(beta)
    if w.min() <= 1e-14:
        return 0.0
    B = V @ np.diag(w ** -0.5) @ V.conj().T
    G = B @ H @ B
    lam_min = np.linalg.eigvalsh(G).min(axis=-1)
    worst = -lam_min.min()
    return np.inf if worst <= 0 else 1.0 / worst


def random_trig_modes(rng, ndim, dims, n_modes=4, max_freq=2):
    modes = []
    for _ in range(n_modes):
        k = np.zeros(ndim, dtype=int)
        while not k.any():
            k = np.zeros(ndim, dtype=int)
            for ax in dims:
                k[ax] = rng.integers(-max_freq, max_freq + 1)
        modes.append((k, rng.normal(), rng.normal()))
    return modes


def make_candidate(alpha: AlphaForm, v: ScalarField | None, s: float, shift: float) -> ScalarField:
    """``-q + s v`` translated so that its maximum equals ``min(0, shift)``."""
    psi = -alpha.q if v is None or s == 0 else (-alpha.q) + v * s
    return psi.with_values(psi.values - psi.values.max() + min(0.0, shift))


def candidate_generator(alpha: AlphaForm, seed: int, count: int = 50, dims=None, n_modes: int = 4,
                        max_freq: int = 2, fill: float = 0.9, shift_scale: float = 0.1) -> list:
    """Seeded alpha-psh functions ``<= 0``.

    Each is ``-q + s v`` (so that ``alpha + dd^c psi = beta + s dd^c v``) with
    ``v`` a random low-frequency trigonometric polynomial and ``s`` a random
    fraction (at most ``fill``) of the largest scale keeping ``beta + s dd^c v``
    semipositive on the grid, then shifted below zero.
    """
    from .geometry import trig_field

    if alpha.class_mass <= 0:
        raise ValidationError("candidates need a class of positive mass")
    grid = alpha.grid
    dims = list(range(grid.ndim)) if dims is None else list(dims)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = trig_field(grid, random_trig_modes(rng, grid.ndim, dims, n_modes, max_freq), dims)
        smax = _max_scale(alpha.beta, hessian_fd(v).coeff)
        s = fill * rng.uniform() * min(smax, 1e6)
        shift = -shift_scale * rng.uniform()
        out.append(make_candidate(alpha, v, s, shift))
    return out
