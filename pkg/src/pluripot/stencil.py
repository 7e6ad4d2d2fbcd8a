"""Shift stencils, complex-direction sets and the directional Perron sweep.

A *directional Perron operator* is

    T(u)_i = min(obstacle_i, min_d [ (M_d u)_i + corr_d,i ])

where each ``M_d`` is a nonnegative averaging matrix (a circle mean along a
complex direction) and ``corr_d`` encodes the reference form.  Its largest
fixed point below the obstacle is the discrete envelope.  :func:`perron_solve`
runs projected Gauss-Seidel/SOR sweeps in lexicographic node order; the order
is fixed, so results do not depend on the machine or thread count.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit

from .errors import ConvergenceError


def shift_stencil(shape, h, offsets, weights):
    """Periodic array ``K`` with ``sum_d K[d] u(z + d) = sum_k w_k u(z + offset_k)``.

    ``offsets`` are real displacements (shape ``(m, ndim)``); ``u`` is read by
    multilinear interpolation along the axes of ``shape`` longer than one and
    is assumed invariant along the others.
    """
    K = np.zeros(shape)
    axes = [ax for ax, s in enumerate(shape) if s > 1]
    if not axes:
        K.flat[0] = float(np.sum(weights))
        return K
    offsets = np.asarray(offsets, dtype=float)
    cells = offsets[:, axes] / h
    base = np.floor(cells).astype(np.int64)
    frac = cells - base
    for corner in range(1 << len(axes)):
        w = np.array(weights, dtype=float)
        idx = [np.zeros(len(w), dtype=np.int64) for _ in shape]
        for bit, ax in enumerate(axes):
            up = (corner >> bit) & 1
            w = w * (frac[:, bit] if up else 1.0 - frac[:, bit])
            idx[ax] = (base[:, bit] + up) % shape[ax]
        np.add.at(K, tuple(idx), w)
    return K


def apply_stencil(values, K):
    """``out(z) = sum_d K[d] values(z + d)`` on the periodic grid (via FFT)."""
    if values.size == 1:
        return values * K.sum()
    return np.real(np.fft.ifftn(np.fft.fftn(values) * np.conj(np.fft.fftn(K))))


def stencil_matrix(K) -> sp.csr_matrix:
    """Sparse matrix of the periodic stencil ``K`` acting on flattened arrays."""
    shape = K.shape
    n = K.size
    nz = np.argwhere(np.abs(K) > 0)
    if len(nz) == 0:
        return sp.csr_matrix((n, n))
    rows, cols, vals = [], [], []
    base = np.indices(shape).reshape(len(shape), -1)
    for d in nz:
        tgt = tuple((base[a] + d[a]) % shape[a] for a in range(len(shape)))
        rows.append(np.arange(n))
        cols.append(np.ravel_multi_index(tgt, shape))
        vals.append(np.full(n, K[tuple(d)]))
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    M.sum_duplicates()
    return M


def complex_directions(n: int, count: int = 16) -> np.ndarray:
    """Unit vectors of ``C^n`` representing complex lines through the origin.

    For ``n = 2`` these are ``count`` Fibonacci points on the sphere ``S^2``
    (the complex projective line) with both poles included, lifted by
    ``(cos a/2, e^{i b} sin a/2)``; the poles give the coordinate axes.
    """
    if n == 1:
        return np.ones((1, 1), dtype=complex)
    k = np.arange(count)
    zc = 1.0 - 2.0 * k / (count - 1)
    polar = np.arccos(np.clip(zc, -1.0, 1.0))
    azim = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.stack([np.cos(polar / 2) + 0j, np.exp(1j * azim) * np.sin(polar / 2)], axis=1)


def circle_offsets(zeta, radius: float, points: int = 16) -> np.ndarray:
    """Real displacements ``radius e^{i theta_k} zeta`` in ``(x1, y1, x2, y2)`` order."""
    theta = 2 * np.pi * np.arange(points) / points
    w = radius * np.exp(1j * theta)[:, None] * np.asarray(zeta)[None, :]
    out = np.empty((points, 2 * w.shape[1]))
    out[:, 0::2] = w.real
    out[:, 1::2] = w.imag
    return out


def real_quadratic_form(beta: np.ndarray) -> np.ndarray:
    """Symmetric ``A`` with ``x.A x = pi z* beta z`` for ``z_j = x_2j + i x_2j+1``."""
    n = beta.shape[0]
    A = np.zeros((2 * n, 2 * n))
    basis = np.eye(2 * n)

    def Q(x):
        z = x[0::2] + 1j * x[1::2]
        return np.pi * np.real(np.conj(z) @ beta @ z)

    for a in range(2 * n):
        A[a, a] = Q(basis[a])
        for b in range(a + 1, 2 * n):
            A[a, b] = A[b, a] = 0.5 * (Q(basis[a] + basis[b]) - Q(basis[a]) - Q(basis[b]))
    return A


def interpolated_quadratic_mean(A, offsets, shape, h) -> float:
    """Mean of ``x.A x`` over ``offsets`` as seen through multilinear interpolation.

    Linear interpolation along an axis adds ``s(1-s) h^2 A_aa`` to a
    quadratic, where ``s`` is the fractional cell position.  The term is added
    on every axis, including those of length one: a field invariant along an
    axis is interpolated exactly there, so a reduced layout then reproduces the
    full-grid scheme node for node.  ``shape`` is accepted for symmetry with
    :func:`shift_stencil`.
    """
    val = np.einsum("ka,ab,kb->k", offsets, A, offsets)
    for ax in range(offsets.shape[1]):
        s = offsets[:, ax] / h - np.floor(offsets[:, ax] / h)
        val = val + s * (1 - s) * h * h * A[ax, ax]
    return float(np.mean(val))


# ---------------------------------------------------------------------------
# projected Gauss-Seidel / SOR on stacked CSR operators
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sweep(u, indptr, indices, data, corr, n_dirs, n, obstacle, order, omega):
    worst = 0.0
    for i in order:
        best = obstacle[i]
        for d in range(n_dirs):
            row = d * n + i
            s = corr[d, i]
            wii = 0.0
            for p in range(indptr[row], indptr[row + 1]):
                j = indices[p]
                if j == i:
                    wii += data[p]
                else:
                    s += data[p] * u[j]
            if 1.0 - wii < 1e-12:
                # the mean only sees axes the field is invariant along
                if s >= 0.0:
                    continue
                v = -np.inf
            else:
                v = s / (1.0 - wii)
            if v < best:
                best = v
        new = u[i] + omega * (best - u[i])
        if new > obstacle[i]:
            new = obstacle[i]
        diff = abs(new - u[i])
        if not diff <= worst:  # also catches NaN
            worst = diff
        u[i] = new
    return worst


class PerronProblem:
    """Stacked directional operators with corrections, obstacle and fixed nodes."""

    def __init__(self, matrices, corrections, obstacle=None, fixed=None):
        self.n = matrices[0].shape[0]
        self.n_dirs = len(matrices)
        stacked = sp.vstack(matrices, format="csr")
        stacked.sort_indices()
        self.indptr = stacked.indptr.astype(np.int64)
        self.indices = stacked.indices.astype(np.int64)
        self.data = stacked.data.astype(np.float64)
        self.corr = np.ascontiguousarray(np.asarray(corrections, dtype=float).reshape(self.n_dirs, self.n))
        self.obstacle = (np.full(self.n, np.inf) if obstacle is None
                         else np.ascontiguousarray(np.asarray(obstacle, dtype=float).ravel()))
        free = np.ones(self.n, dtype=bool) if fixed is None else ~np.asarray(fixed, dtype=bool).ravel()
        self.order = np.flatnonzero(free).astype(np.int64)

    def sweep(self, u, omega=1.0):
        return _sweep(u, self.indptr, self.indices, self.data, self.corr, self.n_dirs, self.n,
                      self.obstacle, self.order, omega)

    def apply(self, u):
        """One Jacobi application of ``T`` (used for residual checks)."""
        out = self.obstacle.copy()
        for d in range(self.n_dirs):
            rows = slice(d * self.n, (d + 1) * self.n)
            M = sp.csr_matrix((self.data, self.indices, self.indptr))[rows]
            out = np.minimum(out, M @ u + self.corr[d])
        return out


def perron_solve(problem: PerronProblem, u0, tol, max_iter, omega=1.0, raise_on_fail=True, patience=1000):
    """Sweep until the sup-norm update drops below ``tol``; returns ``(u, iters, last_update)``.

    Over-relaxation of the max-type operator can cycle instead of converging.
    When the update has not halved for ``patience`` sweeps, ``omega`` is moved
    halfway towards 1; the value finally used is left in ``problem.omega``.
    """
    u = np.ascontiguousarray(np.array(u0, dtype=float).ravel())
    upd = np.inf
    best, since = np.inf, 0
    it = 0
    while it < max_iter:
        upd = problem.sweep(u, omega)
        it += 1
        if not np.isfinite(upd):
            raise ConvergenceError(f"Perron iteration diverged at sweep {it} (omega={omega})", it, upd)
        if upd < tol:
            break
        if upd < 0.5 * best:
            best, since = upd, 0
        else:
            since += 1
            if since >= patience and omega > 1.0 + 1e-3:
                omega = 1.0 + 0.5 * (omega - 1.0)
                best, since = upd, 0
    problem.omega = omega
    if upd >= tol and raise_on_fail:
        raise ConvergenceError(f"Perron iteration stalled after {it} sweeps (update {upd:.3e})", it, upd)
    return u, it, upd
    if raise_on_fail:
        raise ConvergenceError(f"Perron iteration stalled after {it} sweeps (update {upd:.3e})", it, upd)
    return u, it, upd
