"""Monge-Ampère measures, volumes, the energy functional and Hessian profiles.

All integrals are over the unit-volume torus; fields on reduced layouts are
integrated as the invariant fields they represent.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .envelope import TOL_SOLVE, EnvelopeResult, envelope_disc_average, envelope_obstacle_1d
from .errors import ValidationError
from .geometry import (AlphaForm, ScalarField, hessian_fd, integrate, ma_density, mixed_density,
                       spectral_norm)


def eps_grid(grid) -> float:
    """Declared discretization tolerance: one mesh width."""
    return grid.h


def default_contact_tol(n: int) -> float:
    return 10.0 * TOL_SOLVE[n]


def dilate(mask: np.ndarray, cells: float = 2.0) -> np.ndarray:
    """Periodic dilation of ``mask`` by a Euclidean ball of ``cells`` grid steps (active axes only)."""
    mask = np.asarray(mask, dtype=bool)
    axes = [ax for ax, s in enumerate(mask.shape) if s > 1]
    r = int(np.floor(cells))
    out = mask.copy()
    for step in itertools.product(range(-r, r + 1), repeat=len(axes)):
        if 0 < sum(s * s for s in step) <= cells * cells:
            out |= np.roll(mask, step, axis=axes)
    return out


@dataclass
class MAReport:
    total_mass: float
    contact_mass: float
    off_contact_mass: float
    density: ScalarField
    contact_fraction: float
    off_contact_mass_dilated: float
    off_contact_sup: float
    off_contact_sup_dilated: float

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "density"}
        d["off_contact_ratio_dilated"] = (self.off_contact_mass_dilated / self.total_mass
                                          if self.total_mass else 0.0)
        return d


def _as_field(phi):
    return phi.phi if isinstance(phi, EnvelopeResult) else phi


def ma_field(alpha: AlphaForm, phi: ScalarField) -> ScalarField:
    """Node density of ``(alpha + dd^c phi)^n``."""
    return ma_density(alpha.coeff() + hessian_fd(phi))


def ma_measure(alpha: AlphaForm, phi, exclude: np.ndarray | None = None, contact: np.ndarray | None = None,
               contact_tol: float | None = None, dilation: float = 2.0) -> MAReport:
    """Split the Monge-Ampère mass of ``alpha + dd^c phi`` between the contact set and its complement.

    ``contact`` defaults to ``{phi >= -contact_tol}``.  Nodes in ``exclude``
    (for example near poles) carry no mass.  The "dilated" quantities use the
    complement of ``contact`` grown by ``dilation`` grid steps.
    """
    phi = _as_field(phi)
    dens = ma_field(alpha, phi)
    shape = np.broadcast_shapes(dens.values.shape, phi.values.shape)
    d = np.broadcast_to(dens.values, shape).copy()
    if exclude is not None:
        d[np.broadcast_to(exclude, shape)] = 0.0
    if contact is None:
        tol = default_contact_tol(alpha.grid.n) if contact_tol is None else contact_tol
        contact = phi.values >= -tol
    D = np.broadcast_to(contact, shape)
    off = ~D
    off_dil = ~dilate(D, dilation)
    grid = alpha.grid
    total = integrate(ScalarField(grid, d))
    on = integrate(ScalarField(grid, np.where(D, d, 0.0)))
    return MAReport(
        total_mass=total,
        contact_mass=on,
        off_contact_mass=total - on,
        density=ScalarField(grid, d),
        contact_fraction=float(np.mean(D)),
        off_contact_mass_dilated=integrate(ScalarField(grid, np.where(off_dil, d, 0.0))),
        off_contact_sup=float(d[off].max()) if off.any() else 0.0,
        off_contact_sup_dilated=float(d[off_dil].max()) if off_dil.any() else 0.0,
    )


def solve_envelope(alpha: AlphaForm, method: str | None = None, dims=None, **kw) -> EnvelopeResult:
    """Envelope by the obstacle solver (n = 1 default) or by disc averaging."""
    method = method or ("obstacle" if alpha.grid.n == 1 else "disc")
    if method == "obstacle":
        shape = None if dims is None else alpha.grid.reduced_shape(dims)
        return envelope_obstacle_1d(alpha, shape=shape, **kw)
    if method in ("disc", "disc-average"):
        return envelope_disc_average(alpha, dims=dims, **kw)
    raise ValidationError(f"unknown envelope method {method!r}")


def contact_weights(phi: ScalarField, contact: np.ndarray) -> np.ndarray:
    """Fraction of each node's cell lying in the contact set.

    Near a free boundary the envelope leaves the obstacle quadratically, so
    ``sqrt(-phi)`` grows linearly with the distance to ``D``; extrapolating it
    from the two nearest outside nodes along each axis places the boundary
    inside the cell.  Fractions along different axes are multiplied.
    """
    D = np.broadcast_to(np.asarray(contact, dtype=bool), phi.values.shape)
    s = np.sqrt(np.maximum(-phi.values, 0.0))
    w_in = np.ones(D.shape)
    w_out = np.zeros(D.shape)
    for ax in (ax for ax, n in enumerate(D.shape) if n > 1):
        covered = np.zeros(D.shape)
        for step in (1, -1):
            Dj, sj = np.roll(D, -step, ax), np.roll(s, -step, ax)
            Dk, sk = np.roll(D, -2 * step, ax), np.roll(s, -2 * step, ax)
            ok = ~Dk & (sk > sj)
            # distance from the outside neighbour back to the boundary, in cells
            delta = np.clip(np.where(ok, sj / np.where(ok, sk - sj, 1.0), 0.5), 0.0, 1.0)
            edge = D & ~Dj
            covered += np.where(edge, np.minimum(1.0 - delta, 0.5), 0.5)
            w_out += np.roll(np.where(edge, np.maximum(0.5 - delta, 0.0), 0.0), step, ax)
        w_in *= covered
    return np.where(D, w_in, np.minimum(w_out, 1.0))


def contact_volume(alpha: AlphaForm, phi, contact: np.ndarray | None = None, subcell: bool = True) -> float:
    """``∫_D alpha^n`` by direct quadrature of the ``alpha^n`` density over the contact set.

    With ``subcell`` the cells cut by the free boundary are weighted by
    :func:`contact_weights`; otherwise each contact node counts fully.
    """
    if isinstance(phi, EnvelopeResult):
        contact = phi.contact if contact is None else contact
        phi = phi.phi
    if contact is None:
        contact = phi.values >= -default_contact_tol(alpha.grid.n)
    dens = alpha.density().values
    shape = np.broadcast_shapes(dens.shape, phi.values.shape)
    mask = np.broadcast_to(contact, shape)
    w = contact_weights(phi.expand(shape), mask) if subcell else mask.astype(float)
    return integrate(ScalarField(alpha.grid, w * np.broadcast_to(dens, shape)))


def volume(alpha: AlphaForm, method: str | None = None, dims=None, result: EnvelopeResult | None = None,
           **kw) -> float:
    """Volume of the class of ``alpha``: the Monge-Ampère mass of its envelope carried by ``D``.

    Since ``dd^c phi`` vanishes on the contact set this equals ``∫_D alpha^n``;
    summing ``(alpha + dd^c phi)^n`` rather than ``alpha^n`` over the contact
    nodes removes the O(h) error of the nodes on the edge of ``D``, where the
    discrete Hessian of ``phi`` does not vanish.  :func:`contact_volume` is
    the direct quadrature of ``alpha^n``.
    """
    if alpha.class_mass == 0.0:
        return 0.0
    if result is None:
        result = solve_envelope(alpha, method, dims, **kw)
    return ma_measure(alpha, result.phi, contact=result.contact).contact_mass


def energy(alpha: AlphaForm, psi: ScalarField) -> float:
    """``E[psi] = (1/(n+1)) Σ_j ∫ psi (alpha + dd^c psi)^j ^ alpha^(n-j)``.

    Expanded: ``∫ psi (alpha + dd^c psi / 2)`` for n = 1 and
    ``∫ psi (alpha^2 + alpha ^ dd^c psi + (dd^c psi)^2 / 3)`` for n = 2.
    """
    A = alpha.coeff()
    H = hessian_fd(psi)
    if alpha.grid.n == 1:
        dens = np.real(A.coeff[..., 0, 0]) + 0.5 * np.real(H.coeff[..., 0, 0])
    else:
        dens = (ma_density(A).values + mixed_density(A, H).values + ma_density(H).values / 3.0)
    return integrate(psi, ScalarField(alpha.grid, dens))


def functional_F(alpha: AlphaForm, psi: ScalarField) -> float:
    """``F[psi] = E[psi] - ∫ psi MA(psi)``, minimized by the envelope."""
    return energy(alpha, psi) - integrate(psi, ma_field(alpha, psi))


def variational_gap(alpha: AlphaForm, psi: ScalarField, phi_env) -> float:
    """``F[psi] - F[phi_env]``; nonnegative for admissible ``psi`` up to discretization error."""
    return functional_F(alpha, psi) - functional_F(alpha, _as_field(phi_env))


def energy_derivative_check(alpha: AlphaForm, psi: ScalarField, v: ScalarField,
                            steps=(1e-2, 5e-3)) -> dict:
    """Central differences of ``E`` along ``v`` against ``∫ v MA(psi)``.

    Returns the errors per step and the ratio of consecutive errors (4 for a
    second-order remainder).
    """
    exact = integrate(v, ma_field(alpha, psi))
    errs = []
    for s in steps:
        fd = (energy(alpha, psi + v * s) - energy(alpha, psi - v * s)) / (2 * s)
        errs.append(abs(fd - exact))
    ratios = [errs[i] / errs[i + 1] if errs[i + 1] > 0 else float("inf") for i in range(len(errs) - 1)]
    return {"exact": exact, "steps": list(steps), "errors": errs, "ratios": ratios}


@dataclass
class RegularityProfile:
    N: list
    sup_hessian: list
    variation: float
    growth: float

    def as_dict(self):
        return dict(self.__dict__)


def regularity_profile(phis, exclude=None) -> RegularityProfile:
    """Sup-norm of ``dd^c phi`` for the same object at several resolutions.

    ``variation`` is ``(max - min) / max`` of the sups, ``growth`` the ratio
    of the finest to the coarsest.  ``exclude`` maps ``N`` to a mask of
    nodes to skip (e.g. near poles of ``psi0``).
    """
    phis = sorted((_as_field(p) for p in phis), key=lambda f: f.grid.N)
    Ns, sups = [], []
    for phi in phis:
        norm = spectral_norm(hessian_fd(phi)).values
        if exclude is not None and phi.grid.N in exclude:
            norm = np.where(np.broadcast_to(exclude[phi.grid.N], norm.shape), 0.0, norm)
        Ns.append(phi.grid.N)
        sups.append(float(norm.max()))
    top = max(sups)
    variation = (top - min(sups)) / top if top > 0 else 0.0
    growth = sups[-1] / sups[0] if sups[0] > 0 else (0.0 if sups[-1] == 0 else float("inf"))
    return RegularityProfile(Ns, sups, variation, growth)
