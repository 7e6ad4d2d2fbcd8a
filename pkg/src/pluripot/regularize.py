"""Convolution regularization, slopes and the Kiselman-Legendre transform.

On a flat torus the holomorphic exponential map is a translation, so

    rho_t psi(z) = ∫_{|ζ|<=1} psi(z + t ζ) χ(|ζ|^2) dλ(ζ)

with the compactly supported kernel ``χ(s) = C (1-s)^-2 exp(1/(s-1))``.  The
integral is evaluated with a fixed product rule (Gauss-Legendre in the radius,
uniform in the angles) and multilinear interpolation of ``psi``; since every
sample is a rigid shift, the rule collapses to one periodic stencil per
radius, applied by FFT.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import AlphaForm, ScalarField, hessian_fd, min_eigenvalue, torus_distance
from .stencil import apply_stencil, shift_stencil

DELTA0 = 0.25


def chi_profile(s):
    """Unnormalized kernel profile ``(1-s)^-2 exp(1/(s-1))`` for ``s < 1``, else 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    u = 1.0 - s[inside]
    out[inside] = np.exp(-1.0 / u) / (u * u)
    return out


@dataclass
class SmoothingKernel:
    """Quadrature of ``∫_{|x|<=1} f(x) χ(|x|^2) dx`` on ``R^(2n)``.

    ``points`` are unit-ball sample points (shape ``(m, 2n)``) and ``weights``
    sum to one; ``normalizer`` is the constant ``C_n``.
    """

    n: int
    radial_nodes: int = 24
    angular_nodes: int = 32
    normalizer: float = field(init=False)
    points: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)
    second_moment: float = field(init=False)

    def __post_init__(self):
        x, w = np.polynomial.legendre.leggauss(self.radial_nodes)
        r = 0.5 * (x + 1.0)
        wr = 0.5 * w
        if self.n == 1:
            theta = 2 * np.pi * np.arange(self.angular_nodes) / self.angular_nodes
            dirs = np.stack([np.cos(theta), np.sin(theta)], axis=1)
            dw = np.full(len(theta), 2 * np.pi / len(theta))
        else:
            # Hopf coordinates on S^3: (cos a e^{i b}, sin a e^{i c}), measure sin a cos a da db dc
            m = self.angular_nodes
            ga, gw = np.polynomial.legendre.leggauss(m // 4)
            a = 0.25 * np.pi * (ga + 1.0)
            aw = 0.25 * np.pi * gw * np.sin(a) * np.cos(a)
            phi = 2 * np.pi * np.arange(m // 2) / (m // 2)
            A, B, C = np.meshgrid(a, phi, phi, indexing="ij")
            W = np.broadcast_to(aw[:, None, None], A.shape) * (2 * np.pi / len(phi)) ** 2
            dirs = np.stack([np.cos(A) * np.cos(B), np.cos(A) * np.sin(B),
                             np.sin(A) * np.cos(C), np.sin(A) * np.sin(C)], axis=-1).reshape(-1, 4)
            dw = W.ravel()
        radial = wr * chi_profile(r * r) * r ** (2 * self.n - 1)
        raw = radial[:, None] * dw[None, :]
        total = raw.sum()
        self.normalizer = 1.0 / total
        self.weights = (raw / total).ravel()
        self.points = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 2 * self.n)
        self.second_moment = float(np.sum(self.weights * np.sum(self.points ** 2, axis=1)))

    def chi(self, s):
        return self.normalizer * chi_profile(s)


@dataclass
class RegularizationParams:
    """Constants of the regularization and of the Kiselman-Legendre transform.

    ``B`` is the exponent constant ``2 A / eps0`` of the Hessian bound.
    """

    K: float = 1.0
    A: float = 0.0
    delta0: float = DELTA0
    c: float = 1.0
    delta: float = DELTA0
    t_grid: np.ndarray | None = None
    n_radii: int = 32

    def __post_init__(self):
        if self.t_grid is None:
            self.t_grid = np.geomspace(self.delta0 / 256, self.delta0, self.n_radii)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if np.any(self.t_grid <= 0) or np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("t_grid must be positive and strictly increasing")
        if not 0 < self.delta <= self.delta0 * (1 + 1e-12):
            raise ValueError(f"delta must lie in (0, delta0], got {self.delta}")

    def B(self, eps0: float) -> float:
        return 2.0 * self.A / eps0


def estimate_K(alpha: AlphaForm, kernel: SmoothingKernel, margin: float = 1.0) -> float:
    """Constant making ``t -> rho_t psi + K t^2`` increasing for alpha-psh ``psi``.

    Locally ``psi = u - p`` with ``u`` psh and ``dd^c p = alpha``; only the
    growth of ``rho_t p`` has to be compensated, and its ``t``-derivative is at
    most ``2 t (pi m2 / n) sup tr(alpha)`` where ``m2`` is the kernel's second
    moment.
    """
    tr = alpha.coeff().trace()
    return math.pi * kernel.second_moment / alpha.grid.n * max(float(np.max(tr)), 0.0) + margin


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def rho(psi: ScalarField, t: float, kernel: SmoothingKernel) -> ScalarField:
    """Regularization ``rho_t psi`` at radius ``t``."""
    if t <= 0:
        raise ValueError(f"radius must be positive, got {t}")
    shape = psi.values.shape
    K = shift_stencil(shape, psi.grid.h, t * kernel.points, kernel.weights)
    return ScalarField(psi.grid, apply_stencil(psi.values, K), psi.poles)


def regularization_table(psi: ScalarField, radii, kernel: SmoothingKernel) -> np.ndarray:
    """Array of ``rho_t psi`` for every ``t`` in ``radii``, shape ``(len(radii),) + shape``."""
    shape = psi.values.shape
    if psi.values.size == 1:
        return np.broadcast_to(psi.values, (len(radii),) + shape).copy()
    fpsi = np.fft.fftn(psi.values)
    out = np.empty((len(radii),) + shape)
    for i, t in enumerate(radii):
        K = shift_stencil(shape, psi.grid.h, t * kernel.points, kernel.weights)
        out[i] = np.real(np.fft.ifftn(fpsi * np.conj(np.fft.fftn(K))))
    return out


# ---------------------------------------------------------------------------
# monotone transform, slopes, Kiselman-Legendre transform
# ---------------------------------------------------------------------------

@dataclass
class MonotoneTable:
    t: np.ndarray
    values: np.ndarray
    worst_decrease: float

    def is_monotone(self, tol: float = 1e-6) -> bool:
        return self.worst_decrease <= tol


def _node_index(psi, z):
    return tuple(i if s > 1 else 0 for i, s in zip(z, psi.values.shape))


def monotone_transform(psi: ScalarField, z, params: RegularizationParams,
                       kernel: SmoothingKernel | None = None) -> MonotoneTable:
    """Table ``t -> rho_t psi(z) + K t^2`` over ``params.t_grid``.

    ``worst_decrease`` is the largest drop between consecutive radii (0 when
    the table is nondecreasing).
    """
    kernel = kernel or SmoothingKernel(psi.grid.n)
    tab = regularization_table(psi, params.t_grid, kernel)[(slice(None),) + _node_index(psi, z)]
    tab = tab + params.K * params.t_grid ** 2
    drops = -np.diff(tab)
    return MonotoneTable(params.t_grid, tab, float(max(0.0, drops.max())) if len(drops) else 0.0)


def monotone_defect(psi: ScalarField, params: RegularizationParams, kernel: SmoothingKernel) -> float:
    """Largest decrease of ``rho_t psi + K t^2`` between consecutive radii, over all nodes."""
    tab = regularization_table(psi, params.t_grid, kernel)
    tab = tab + params.K * (params.t_grid ** 2).reshape((-1,) + (1,) * psi.values.ndim)
    return float(max(0.0, np.max(tab[:-1] - tab[1:])))


@dataclass
class Slope:
    value: float
    t: float
    one_sided: bool


def lambda_slope(psi: ScalarField, z, t: float, params: RegularizationParams,
                 kernel: SmoothingKernel | None = None) -> Slope:
    """``d/d log t (rho_t psi(z) + K t^2)`` at the grid radius nearest ``t``.

    Centered in ``log t``; at either end of the grid a one-sided difference is
    used and flagged.  In the ``dd^c`` normalization a pole ``c log|z-a|^2``
    has slope ``2c`` at ``a``; see :func:`lelong_estimate`.
    """
    tab = monotone_transform(psi, z, params, kernel)
    lt = np.log(tab.t)
    i = int(np.argmin(np.abs(lt - math.log(t))))
    one_sided = i == 0 or i == len(lt) - 1
    lo, hi = (max(i - 1, 0), min(i + 1, len(lt) - 1))
    return Slope(float((tab.values[hi] - tab.values[lo]) / (lt[hi] - lt[lo])), float(tab.t[i]), one_sided)


def lelong_estimate(psi: ScalarField, z, t: float, params: RegularizationParams,
                    kernel: SmoothingKernel | None = None) -> float:
    """Lelong number of ``psi`` at ``z`` in units where ``dd^c log|z|^2`` has mass 1.

    This is half the slope in ``log t`` (equivalently the slope in ``log t^2``),
    so ``c G(., a)`` reads ``c`` at ``a``.
    """
    return 0.5 * lambda_slope(psi, z, t, params, kernel).value


def slope_field(psi: ScalarField, t: float, params: RegularizationParams, kernel: SmoothingKernel,
                rel: float = 0.05) -> np.ndarray:
    """Node-wise ``lambda(z, t)`` from radii ``t e^{±rel}``."""
    lo, hi = regularization_table(psi, [t * math.exp(-rel), t * math.exp(rel)], kernel)
    lo = lo + params.K * (t * math.exp(-rel)) ** 2
    hi = hi + params.K * (t * math.exp(rel)) ** 2
    return (hi - lo) / (2 * rel)


@dataclass
class KiselmanResult:
    field: ScalarField
    t_min: np.ndarray
    at_grid_floor: np.ndarray

    def argmin_histogram(self, radii) -> dict:
        counts = {float(t): int(np.sum(np.isclose(self.t_min, t))) for t in radii}
        return {k: v for k, v in counts.items() if v}


def kiselman_transform(psi: ScalarField, params: RegularizationParams,
                       kernel: SmoothingKernel | None = None) -> KiselmanResult:
    """``inf_{t in (0, delta]} rho_t psi + K t^2 - K delta^2 - c log(t/delta)``.

    The infimum runs over the radii of ``t_grid`` below ``delta`` together with
    ``delta`` itself.  ``at_grid_floor`` marks nodes whose minimizer is the
    smallest radius, where the true infimum may be lower (log poles with
    Lelong number above ``c``).
    """
    kernel = kernel or SmoothingKernel(psi.grid.n)
    c, delta, K = params.c, params.delta, params.K
    radii = [t for t in params.t_grid if t < delta * (1 - 1e-12)] + [delta]
    radii = np.asarray(radii)
    tab = regularization_table(psi, radii, kernel)
    shift = K * radii ** 2 - K * delta ** 2 - c * np.log(radii / delta)
    tab = tab + shift.reshape((-1,) + (1,) * psi.values.ndim)
    k = np.argmin(tab, axis=0)
    val = np.take_along_axis(tab, k[None], axis=0)[0]
    return KiselmanResult(ScalarField(psi.grid, val), radii[k], k == 0)


@dataclass
class FloorReport:
    worst_violation: float
    worst_node: tuple
    min_eigenvalue: float
    floor_min: float
    argmin_histogram: dict

    def as_dict(self):
        return {"worst_violation": self.worst_violation, "worst_node": list(self.worst_node),
                "min_eigenvalue": self.min_eigenvalue, "floor_min": self.floor_min,
                "argmin_histogram": {str(k): v for k, v in self.argmin_histogram.items()}}


def hessian_floor_check(psi: ScalarField, params: RegularizationParams, alpha: AlphaForm,
                        kernel: SmoothingKernel | None = None) -> FloorReport:
    """Compare ``alpha + dd^c psi_{c,delta}`` with ``-(A min(c, lambda(z, delta)) + K delta^2)``."""
    kernel = kernel or SmoothingKernel(psi.grid.n)
    kres = kiselman_transform(psi, params, kernel)
    F = alpha.coeff() + hessian_fd(kres.field)
    lam_min = np.broadcast_to(min_eigenvalue(F).values, np.broadcast_shapes(F.coeff.shape[:-2], psi.values.shape))
    if params.A:
        slope = slope_field(psi, params.delta, params, kernel)
        floor = -(params.A * np.minimum(params.c, slope) + params.K * params.delta ** 2)
    else:
        floor = np.full(lam_min.shape, -params.K * params.delta ** 2)
    floor = np.broadcast_to(floor, lam_min.shape)
    gap = floor - lam_min
    if psi.poles:
        ok = ~_near_poles(psi, params.delta)
        gap = np.where(np.broadcast_to(ok, gap.shape), gap, -np.inf)
    worst = np.unravel_index(int(np.argmax(gap)), gap.shape)
    return FloorReport(float(max(0.0, gap[worst])), tuple(int(i) for i in worst), float(lam_min.min()),
                       float(floor.min()), kres.argmin_histogram(params.t_grid))


def _near_poles(psi, radius):
    grid = psi.grid
    mask = np.zeros(grid.shape, dtype=bool)
    for node, _ in psi.poles:
        mask |= torus_distance(grid, node) <= radius + 2 * grid.h
    return mask
