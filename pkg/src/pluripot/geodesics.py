"""Rotation-invariant weak geodesics between alpha-psh potentials on a torus curve.

The product ``M = A x X`` of an annulus and ``X`` carries the complex
coordinate ``w = t + i theta`` on the annulus factor.  Boundary data that do
not depend on ``theta`` give a ``theta``-independent envelope, so the problem
lives on the grid ``[0, 1] x X`` with ``Nt`` nodes in ``t``.  The solver is the
disc-average Perron iteration of :mod:`pluripot.envelope` on ``C^2 = (w, z)``:
circles along complex directions ``zeta = (zeta_w, zeta_z)``, cubic Lagrange
interpolation in ``t`` and linear interpolation in ``x``, with the boundary
rows held at ``f0`` and ``f1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .envelope import TOL_SOLVE, MAX_ITER
from .errors import PreconditionError, ValidationError
from .geometry import AlphaForm, ScalarField, hessian_fd, max_eigenvalue, min_eigenvalue
from .stencil import (PerronProblem, apply_stencil, complex_directions, interpolated_quadratic_mean, perron_solve,
                      real_quadratic_form, shift_stencil, stencil_matrix)


@dataclass
class GeodesicProblem:
    """Dirichlet data for the geodesic; ``T = 1`` after normalizing ``t``."""

    alpha: AlphaForm
    f0: ScalarField
    f1: ScalarField
    Nt: int | None = None
    T: float = 1.0
    psh_tol: float | None = None

    def __post_init__(self):
        grid = self.alpha.grid
        if grid.n != 1:
            raise ValidationError("geodesics are implemented over a curve (n = 1)")
        if self.alpha.class_mass <= 0:
            raise PreconditionError("the class must have positive mass")
        if self.Nt is None:
            self.Nt = grid.N // 4
        if self.Nt < 5:
            raise ValidationError(f"need at least 5 time nodes, got {self.Nt}")
        if self.T != 1.0:
            raise ValidationError("t is normalized to [0, 1]")
        tol = grid.h if self.psh_tol is None else self.psh_tol
        for name, f in (("f0", self.f0), ("f1", self.f1)):
            worst = float(min_eigenvalue(self.alpha.coeff() + hessian_fd(f)).values.min())
            if worst < -tol:
                raise PreconditionError(f"boundary potential {name} is not alpha-psh (min eigenvalue {worst:.3e})")

    @property
    def x_shape(self) -> tuple:
        return tuple(np.broadcast_shapes(self.f0.values.shape, self.f1.values.shape, self.alpha.shape))

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt)

    @property
    def ht(self) -> float:
        return self.T / (self.Nt - 1)


@dataclass
class GeodesicResult:
    problem: GeodesicProblem
    phi: np.ndarray
    iterations: int
    residual: float
    init: str
    report: dict = field(default_factory=dict)

    def slice(self, k: int) -> ScalarField:
        return ScalarField(self.problem.alpha.grid, self.phi[k])


def lagrange_window(tau: float, Nt: int):
    """Start index and weights of cubic Lagrange interpolation at ``tau`` (in cells), window kept in range."""
    start = int(np.clip(np.floor(tau) - 1, 0, Nt - 4))
    nodes = np.arange(start, start + 4, dtype=float)
    w = np.ones(4)
    for j in range(4):
        for m in range(4):
            if m != j:
                w[j] *= (tau - nodes[m]) / (nodes[j] - nodes[m])
    return start, w


def geodesic_operators(problem: GeodesicProblem, radius: float | None = None, n_dirs: int = 16,
                       circle_points: int = 16):
    """Stacked circle-mean matrices and corrections on the ``(t, x)`` grid.

    ``radius`` defaults to ``2 ht``; along a direction with ``zeta_w != 0`` it
    shrinks near ``t = 0, 1`` so that every circle stays in ``[0, 1]``.
    """
    alpha = problem.alpha
    grid = alpha.grid
    h, ht, Nt = grid.h, problem.ht, problem.Nt
    xs = problem.x_shape
    nx = int(np.prod(xs))
    r0 = 2.0 * ht if radius is None else radius
    A = real_quadratic_form(alpha.beta)
    q = np.ascontiguousarray(np.broadcast_to(alpha.q.values, xs), dtype=float)
    theta = 2 * np.pi * np.arange(circle_points) / circle_points
    wts = np.full(circle_points, 1.0 / circle_points)
    mats, corrs = [], []
    for zeta in complex_directions(2, n_dirs):
        rows, cols, vals = [], [], []
        corr = np.zeros((Nt, nx))
        for k in range(1, Nt - 1):
            dist = min(k, Nt - 1 - k) * ht
            r = r0 if abs(zeta[0]) < 1e-12 else min(r0, dist / abs(zeta[0]))
            circ = r * np.exp(1j * theta)
            dt = np.real(circ * zeta[0]) / ht
            wz = circ * zeta[1]
            xy = np.stack([wz.real, wz.imag], axis=1)
            Kt = {}
            qmean = np.zeros(xs)
            for p in range(circle_points):
                Kp = shift_stencil(xs, h, xy[p:p + 1], wts[p:p + 1])
                start, L = lagrange_window(k + dt[p], Nt)
                for j in range(4):
                    if L[j] != 0.0:
                        Kt[start + j] = Kt.get(start + j, 0.0) + L[j] * Kp
                qmean = qmean + apply_stencil(q, Kp)
            for j, K in Kt.items():
                B = stencil_matrix(K).tocoo()
                rows.append(B.row + k * nx)
                cols.append(B.col + j * nx)
                vals.append(B.data)
            corr[k] = (interpolated_quadratic_mean(A, xy, xs, h) + (qmean - q)).ravel()
        n = Nt * nx
        M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        M.sum_duplicates()
        mats.append(M)
        corrs.append(corr.ravel())
    return mats, np.array(corrs)


def lower_barrier(problem: GeodesicProblem) -> np.ndarray:
    """``max(f0 - C t, f1 - C (1 - t))`` with ``C = sup |f1 - f0|``: alpha-psh and below the data."""
    xs = problem.x_shape
    f0 = np.broadcast_to(problem.f0.values, xs)
    f1 = np.broadcast_to(problem.f1.values, xs)
    C = float(np.max(np.abs(f1 - f0)))
    t = problem.t.reshape((-1,) + (1,) * len(xs))
    return np.maximum(f0 - C * t, f1 - C * (1 - t))


def linear_interpolant(problem: GeodesicProblem) -> np.ndarray:
    xs = problem.x_shape
    t = problem.t.reshape((-1,) + (1,) * len(xs))
    return (1 - t) * np.broadcast_to(problem.f0.values, xs) + t * np.broadcast_to(problem.f1.values, xs)


def weak_geodesic(problem: GeodesicProblem, init: str = "linear", tol: float | None = None,
                  max_iter: int = MAX_ITER, omega: float = 1.8, radius: float | None = None,
                  operators=None) -> GeodesicResult:
    """Envelope of alpha-psh functions on ``[0, 1] x X`` below ``f0`` at ``t = 0`` and ``f1`` at ``t = 1``.

    ``init`` is ``"linear"`` (the ``t``-linear interpolant, a supersolution)
    or ``"barrier"`` (:func:`lower_barrier`, a subsolution).  Pass
    ``operators`` from :func:`geodesic_operators` to reuse them across runs.
    Over-relaxation ``omega = 1.8`` shrinks the distance between the stopped
    iterate and the fixed point, which the two-initialization probe measures.
    """
    tol = TOL_SOLVE[1] if tol is None else tol
    xs = problem.x_shape
    Nt = problem.Nt
    if init == "linear":
        u0 = linear_interpolant(problem)
    elif init == "barrier":
        u0 = lower_barrier(problem)
    else:
        raise ValidationError(f"unknown initialization {init!r}")
    u0 = np.array(u0, dtype=float)
    u0[0] = np.broadcast_to(problem.f0.values, xs)
    u0[-1] = np.broadcast_to(problem.f1.values, xs)
    mats, corrs = operators if operators is not None else geodesic_operators(problem, radius)
    fixed = np.zeros((Nt,) + xs, dtype=bool)
    fixed[0] = fixed[-1] = True
    prob = PerronProblem(mats, corrs, None, fixed)
    u, iters, upd = perron_solve(prob, u0, tol, max_iter, omega)
    res = GeodesicResult(problem, u.reshape((Nt,) + xs), iters, upd, init)
    res.report = geodesic_report(res)
    return res


def spacetime_hessian(result: GeodesicResult):
    """Complex Hessian entries ``(H_ww, H_wz, H_zz)`` of ``alpha + dd^c phi`` at interior ``t`` rows."""
    pb = result.problem
    grid = pb.alpha.grid
    phi = result.phi
    h, ht = grid.h, pb.ht
    xs = pb.x_shape
    Hww = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / (ht * ht) / (4 * np.pi)
    dt = (phi[2:] - phi[:-2]) / (2 * ht)

    def dx(u, ax):
        if u.shape[ax] == 1:
            return np.zeros_like(u)
        return (np.roll(u, -1, ax) - np.roll(u, 1, ax)) / (2 * h)

    Hwz = (dx(dt, 1) + 1j * dx(dt, 2)) / (4 * np.pi)
    a = np.broadcast_to(np.real(pb.alpha.coeff().coeff[..., 0, 0]), xs)
    Hzz = np.stack([a + np.real(hessian_fd(ScalarField(grid, phi[k])).coeff[..., 0, 0])
                    for k in range(1, pb.Nt - 1)])
    return Hww, Hwz, Hzz


def geodesic_report(result: GeodesicResult) -> dict:
    pb = result.problem
    grid = pb.alpha.grid
    eps = grid.h
    xs = pb.x_shape
    phi = result.phi
    Hww, Hwz, Hzz = spacetime_hessian(result)
    ma = 2.0 * (Hww * Hzz - np.abs(Hwz) ** 2)
    d2t = phi[2:] - 2 * phi[1:-1] + phi[:-2]
    caps, floors = [], []
    for k in range(pb.Nt):
        F = pb.alpha.coeff() + hessian_fd(ScalarField(grid, phi[k]))
        caps.append(float(max_eigenvalue(F).values.max()))
        floors.append(float(min_eigenvalue(F).values.min()))
    f0 = np.broadcast_to(pb.f0.values, xs)
    f1 = np.broadcast_to(pb.f1.values, xs)
    return {
        "boundary_error": float(max(np.abs(phi[0] - f0).max(), np.abs(phi[-1] - f1).max())),
        "interior_ma_residual": {"median": float(np.median(np.abs(ma))), "max": float(np.abs(ma).max())},
        "eigen_cap": max(caps),
        "eigen_cap_by_t": caps,
        "slice_min_eigenvalue": min(floors),
        "t_convexity_min": float(d2t.min()) / pb.ht ** 2,
        "convexity_violations": int(np.sum(d2t / pb.ht ** 2 < -eps)),
        "iterations": result.iterations,
        "residual": result.residual,
        "eps_grid": eps,
    }


def uniform_bound_check(results) -> dict:
    """``eigen_cap`` for runs at increasing resolution and its relative variation."""
    caps = [r.report["eigen_cap"] for r in results]
    top = max(caps)
    return {"eigen_caps": caps, "resolutions": [(r.problem.alpha.grid.N, r.problem.Nt) for r in results],
            "variation": (top - min(caps)) / top if top > 0 else 0.0}


def boundary_continuity_check(result: GeodesicResult) -> dict:
    """Barrier constants ``C0 = sup |phi_t - f0| / t`` and ``C1 = sup |phi_t - f1| / (1 - t)``."""
    pb = result.problem
    xs = pb.x_shape
    t = pb.t
    phi = result.phi
    d0 = np.abs(phi[1:] - np.broadcast_to(pb.f0.values, xs)).reshape(pb.Nt - 1, -1).max(axis=1)
    d1 = np.abs(phi[:-1] - np.broadcast_to(pb.f1.values, xs)).reshape(pb.Nt - 1, -1).max(axis=1)
    return {"C0": float(np.max(d0 / t[1:])), "C1": float(np.max(d1 / (1 - t[:-1]))),
            "approach0": d0.tolist(), "approach1": d1.tolist()}
