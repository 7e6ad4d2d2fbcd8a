"""Flat complex tori, grid fields, discrete complex Hessians and integration.

Conventions
-----------
The torus is ``[0, 1)^(2n)`` with real coordinates ordered
``(x1, y1, x2, y2)`` and ``z_j = x_j + i y_j``.  A real (1,1)-form is stored
through its coefficient matrix ``H`` in the frame ``(i/2) dz_j ^ dz̄_k``, so
that

* ``dd^c u = (i/2pi) d d̄ u`` has coefficients ``H_jk = (1/pi) d^2u/dz_j dz̄_k``;
* in dimension one ``H = Δu / (4 pi)``, and ``dd^c log|z|^2`` is the unit
  Dirac mass;
* the density of the top power ``H^n`` against Lebesgue measure is
  ``n! det H``.

Fields may be *reduced*: any axis of ``values`` can have length 1, meaning
the field is invariant along that real direction.  All finite-difference
operators act correctly on such arrays because rolling a length-1 axis is the
identity.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.special import beta as beta_fn

from .errors import KltViolationError, ValidationError

POLE_CLAMP = -40.0
AXIS_NAMES = ("x1", "y1", "x2", "y2")


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid with ``N`` nodes per real axis."""

    n: int
    N: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValidationError(f"complex dimension must be 1 or 2, got {self.n}")
        if self.N < 2 or self.N & (self.N - 1):
            raise ValidationError(f"N must be a power of two, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.ndim

    def reduced_shape(self, dims: Iterable[int] | None = None) -> tuple:
        """Array shape of a field that varies only along the real axes ``dims``."""
        if dims is None:
            return self.shape
        dims = set(dims)
        return tuple(self.N if k in dims else 1 for k in range(self.ndim))

    def coord(self, axis: int, shape: tuple | None = None) -> np.ndarray:
        """Node coordinates along ``axis``, shaped for broadcasting."""
        out = [1] * self.ndim
        length = self.N if shape is None else shape[axis]
        out[axis] = length
        return (np.arange(length) * self.h).reshape(out)

    def nodes(self, shape: tuple | None = None) -> int:
        return int(np.prod(self.shape if shape is None else shape))


@dataclass
class ScalarField:
    """Real function sampled on the nodes of ``grid``.

    ``poles`` lists ``(node, c)`` pairs: near ``node`` the function behaves
    like ``c log|z - a|^2`` and ``values`` holds a finite clamp there.
    """

    grid: TorusGrid
    values: np.ndarray
    poles: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 0:
            v = v.reshape((1,) * self.grid.ndim)
        if v.ndim != self.grid.ndim:
            raise ValidationError(f"values must have {self.grid.ndim} axes, got {v.ndim}")
        for length in v.shape:
            if length not in (1, self.grid.N):
                raise ValidationError(f"axis length {length} incompatible with N={self.grid.N}")
        self.values = v
        self.poles = tuple((tuple(int(i) for i in node), float(c)) for node, c in self.poles)

    @classmethod
    def constant(cls, grid: TorusGrid, c: float = 0.0) -> "ScalarField":
        return cls(grid, np.full((1,) * grid.ndim, float(c)))

    @property
    def pole_mask(self) -> np.ndarray:
        mask = np.zeros(self.values.shape, dtype=bool)
        for node, _ in self.poles:
            mask[tuple(i if s > 1 else 0 for i, s in zip(node, mask.shape))] = True
        return mask

    def full(self) -> np.ndarray:
        return np.broadcast_to(self.values, self.grid.shape)

    def with_values(self, values) -> "ScalarField":
        return replace(self, values=np.asarray(values, dtype=float))

    def expand(self, shape: tuple) -> "ScalarField":
        return replace(self, values=np.broadcast_to(self.values, np.broadcast_shapes(self.values.shape, shape)).copy())

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.grid, self.values + other.values, _merge_poles(self.poles, other.poles))
        return replace(self, values=self.values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            return self + (-other)
        return replace(self, values=self.values - other)

    def __neg__(self):
        return ScalarField(self.grid, -self.values, tuple((a, -c) for a, c in self.poles))

    def __mul__(self, s: float):
        return ScalarField(self.grid, self.values * s, tuple((a, c * s) for a, c in self.poles))

    __rmul__ = __mul__


def _merge_poles(p, q):
    merged = dict(p)
    for node, c in q:
        merged[node] = merged.get(node, 0.0) + c
    return tuple((node, c) for node, c in merged.items() if c != 0.0)


@dataclass
class HermitianField:
    """Per-node Hermitian ``n x n`` coefficient matrices of a real (1,1)-form.

    ``valid`` is False at nodes whose stencil touched a pole; those entries
    are computed from clamped values and should not be trusted.
    """

    grid: TorusGrid
    coeff: np.ndarray
    valid: np.ndarray | None = None

    def __add__(self, other):
        if isinstance(other, HermitianField):
            valid = _and_masks(self.valid, other.valid)
            return HermitianField(self.grid, self.coeff + other.coeff, valid)
        return HermitianField(self.grid, self.coeff + np.asarray(other), self.valid)

    __radd__ = __add__

    def __mul__(self, s: float):
        return HermitianField(self.grid, self.coeff * s, self.valid)

    __rmul__ = __mul__

    @classmethod
    def constant(cls, grid: TorusGrid, matrix) -> "HermitianField":
        m = np.asarray(matrix, dtype=complex).reshape(grid.n, grid.n)
        return cls(grid, m.reshape((1,) * grid.ndim + (grid.n, grid.n)))

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.coeff - np.conj(np.swapaxes(self.coeff, -1, -2))) <= tol))

    def trace(self) -> np.ndarray:
        return np.real(np.trace(self.coeff, axis1=-2, axis2=-1))


def _and_masks(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a & b


# ---------------------------------------------------------------------------
# smooth test data
# ---------------------------------------------------------------------------

def trig_field(grid: TorusGrid, modes: Sequence, dims: Iterable[int] | None = None) -> ScalarField:
    """Trigonometric polynomial ``sum a cos(2 pi k.x) + b sin(2 pi k.x)``.

    ``modes`` is a list of ``(k, a, b)`` with ``k`` an integer vector of
    length ``2n``.  The array is reduced to the axes that actually carry
    frequencies unless ``dims`` is given.
    """
    modes = [(np.asarray(k, dtype=int), float(a), float(b)) for k, a, b in modes]
    if dims is None:
        dims = sorted({ax for k, _, _ in modes for ax in np.flatnonzero(k)})
    shape = grid.reduced_shape(dims)
    out = np.zeros(shape)
    for k, a, b in modes:
        if len(k) != grid.ndim:
            raise ValidationError(f"frequency vector {k} must have length {grid.ndim}")
        phase = sum(2 * np.pi * k[ax] * grid.coord(ax, shape) for ax in range(grid.ndim) if k[ax])
        phase = np.broadcast_to(phase, shape) if np.ndim(phase) else np.zeros(shape)
        out = out + a * np.cos(phase) + b * np.sin(phase)
    return ScalarField(grid, out)


def trig_hessian(grid: TorusGrid, modes: Sequence) -> HermitianField:
    """Exact ``dd^c`` coefficients of :func:`trig_field` (used as an oracle)."""
    n = grid.n
    f = trig_field(grid, modes)
    shape = f.values.shape
    coeff = np.zeros(shape + (n, n), dtype=complex)
    for k, a, b in modes:
        k = np.asarray(k, dtype=float)
        phase = sum(2 * np.pi * k[ax] * grid.coord(ax, shape) for ax in range(grid.ndim) if k[ax])
        phase = np.broadcast_to(phase, shape) if np.ndim(phase) else np.zeros(shape)
        val = a * np.cos(phase) + b * np.sin(phase)
        # d/dz_j of exp(2 pi i k.x) is pi i (kx_j - i ky_j)
        zeta = np.pi * (k[0::2] - 1j * k[1::2])
        # second derivative d^2/dz_j dz̄_k of a plane wave = -zeta_j conj(zeta_k)
        m = -np.outer(zeta, np.conj(zeta)) / np.pi
        coeff += val[..., None, None] * m
    return HermitianField(grid, coeff)


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------

def _second_diff(u, axis, h):
    return (np.roll(u, 1, axis) - 2.0 * u + np.roll(u, -1, axis)) / (h * h)


def _cross_diff(u, p, q, h):
    up = np.roll(u, -1, p)
    um = np.roll(u, 1, p)
    return (np.roll(up, -1, q) - np.roll(up, 1, q) - np.roll(um, -1, q) + np.roll(um, 1, q)) / (4.0 * h * h)


def hessian_fd(u: ScalarField) -> HermitianField:
    """Central-difference ``dd^c u`` (5-point in n=1, 13-point pattern in n=2)."""
    grid = u.grid
    if grid.N < 8:
        raise ValidationError("hessian_fd needs N >= 8")
    n, h = grid.n, grid.h
    v = u.values
    coeff = np.zeros(v.shape + (n, n), dtype=complex)
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        coeff[..., j, j] = (_second_diff(v, xj, h) + _second_diff(v, yj, h)) / (4 * np.pi)
        for k in range(j + 1, n):
            xk, yk = 2 * k, 2 * k + 1
            re = _cross_diff(v, xj, xk, h) + _cross_diff(v, yj, yk, h)
            im = _cross_diff(v, xj, yk, h) - _cross_diff(v, yj, xk, h)
            coeff[..., j, k] = (re + 1j * im) / (4 * np.pi)
            coeff[..., k, j] = (re - 1j * im) / (4 * np.pi)
    valid = None
    if u.poles:
        mask = u.pole_mask
        near = mask.copy()
        for ax in range(grid.ndim):
            for s in (-1, 1):
                near |= np.roll(mask, s, ax)
        for p in range(grid.ndim):
            for q in range(p + 1, grid.ndim):
                for s in (-1, 1):
                    for t in (-1, 1):
                        near |= np.roll(np.roll(mask, s, p), t, q)
        valid = ~near
    return HermitianField(grid, coeff, valid)


def laplacian_ddc(values: np.ndarray, h: float) -> np.ndarray:
    """``dd^c`` density of a one-dimensional (n=1) field: 5-point Δ / 4π."""
    return (_second_diff(values, 0, h) + _second_diff(values, 1, h)) / (4 * np.pi)


def det_hermitian(coeff: np.ndarray) -> np.ndarray:
    n = coeff.shape[-1]
    if n == 1:
        return np.real(coeff[..., 0, 0])
    a = np.real(coeff[..., 0, 0])
    d = np.real(coeff[..., 1, 1])
    return a * d - np.abs(coeff[..., 0, 1]) ** 2


def ma_density(F: HermitianField) -> ScalarField:
    """Density ``n! det`` of the top power of ``F`` against Lebesgue measure."""
    n = F.grid.n
    return ScalarField(F.grid, math.factorial(n) * det_hermitian(F.coeff))


def mixed_density(A: HermitianField, B: HermitianField) -> ScalarField:
    """Density of ``A ^ B`` for n = 2 (the polarization of ``2 det``)."""
    if A.grid.n != 2:
        raise ValidationError("mixed_density is defined for n = 2")
    a, b = A.coeff, B.coeff
    val = (np.real(a[..., 0, 0]) * np.real(b[..., 1, 1]) + np.real(a[..., 1, 1]) * np.real(b[..., 0, 0])
           - 2.0 * np.real(a[..., 0, 1] * b[..., 1, 0]))
    return ScalarField(A.grid, val)


def _eig_bounds(coeff):
    n = coeff.shape[-1]
    if n == 1:
        v = np.real(coeff[..., 0, 0])
        return v, v
    a = np.real(coeff[..., 0, 0])
    d = np.real(coeff[..., 1, 1])
    mid = 0.5 * (a + d)
    rad = np.sqrt(0.25 * (a - d) ** 2 + np.abs(coeff[..., 0, 1]) ** 2)
    return mid - rad, mid + rad


def min_eigenvalue(F: HermitianField) -> ScalarField:
    return ScalarField(F.grid, _eig_bounds(F.coeff)[0])


def max_eigenvalue(F: HermitianField) -> ScalarField:
    return ScalarField(F.grid, _eig_bounds(F.coeff)[1])


def spectral_norm(F: HermitianField) -> ScalarField:
    lo, hi = _eig_bounds(F.coeff)
    return ScalarField(F.grid, np.maximum(np.abs(lo), np.abs(hi)))


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def _tree_mean(values: np.ndarray) -> float:
    # np.add.reduce on a contiguous 1-D array is pairwise and order-fixed
    flat = np.ascontiguousarray(values, dtype=float).ravel()
    return float(np.add.reduce(flat) / flat.size)


def torus_distance(grid: TorusGrid, node: Sequence[int]) -> np.ndarray:
    """Periodic Euclidean distance from every node of a full n=1 grid to ``node``."""
    d2 = 0.0
    for ax in range(grid.ndim):
        x = grid.coord(ax) - node[ax] * grid.h
        x = x - np.round(x)
        d2 = d2 + x * x
    return np.sqrt(np.broadcast_to(d2, grid.shape))


def klt_quadrature_weights(log_weight: ScalarField, cutoff_cells: int = 8) -> np.ndarray:
    """Node weights ``q`` with ``sum(q * u) ≈ ∫ u exp(log_weight)`` for smooth ``u``.

    Poles of ``log_weight`` with a negative coefficient ``m`` make the weight
    behave like ``|z - a|^(2m)``.  Each is handled by singularity subtraction:
    the model ``exp(R(a)) r^(2m) κ(r)``, ``κ(r) = (1 - r²/ρ²)²`` on a disc of
    radius ``ρ = cutoff_cells * h``, is integrated in closed form and removed
    from the node sum.  ``R(a)`` is read off the four axis nodes at distance
    ``2h``.
    """
    grid = log_weight.grid
    L = np.array(np.broadcast_to(log_weight.values, grid.shape), dtype=float)
    singular = [(node, m) for node, m in log_weight.poles if m < 0.0]
    for node, m in log_weight.poles:
        if m <= -1.0:
            raise KltViolationError(
                f"weight |z-a|^(2*{m:g}) at node {node} is not integrable (klt needs coefficient < 1)")
    h2 = grid.h ** grid.ndim
    q = h2 * np.exp(L)
    if not singular:
        return q
    if grid.n != 1:
        raise ValidationError("pole quadrature is implemented for n = 1")
    rho = cutoff_cells * grid.h
    for i, (node, _) in enumerate(singular):
        for other, _ in singular[i + 1:]:
            if torus_distance(grid, node)[other] < 2 * rho:
                raise ValidationError("poles closer than twice the subtraction radius")
    for node, m in singular:
        N = grid.N
        ring = [L[((node[0] + dx) % N, (node[1] + dy) % N)] for dx, dy in ((2, 0), (-2, 0), (0, 2), (0, -2))]
        r_reg = float(np.mean(ring)) - m * math.log(4.0 * grid.h ** 2)
        r = torus_distance(grid, node)
        inside = (r < rho) & (r > 0)
        S = np.zeros(grid.shape)
        S[inside] = math.exp(r_reg) * r[inside] ** (2 * m) * (1.0 - (r[inside] / rho) ** 2) ** 2
        model_integral = math.exp(r_reg) * math.pi * rho ** (2 * m + 2) * beta_fn(m + 1.0, 3.0)
        q[node] = model_integral - h2 * S.sum()
    return q


def integrate(u: ScalarField | float, weight: ScalarField | None = None,
              log_weight: ScalarField | None = None) -> float:
    """``∫_X u · weight · exp(log_weight)`` over the unit-volume torus.

    Without ``log_weight`` this is the periodic trapezoidal rule (node mean).
    With it, declared poles of ``log_weight`` go through
    :func:`klt_quadrature_weights`.
    """
    if not isinstance(u, ScalarField):
        ref = weight if weight is not None else log_weight
        u = ScalarField.constant(ref.grid, float(u))
    vals = u.values
    if weight is not None:
        vals = vals * weight.values
    if log_weight is None:
        return _tree_mean(np.broadcast_to(vals, np.broadcast_shapes(vals.shape, u.values.shape)))
    q = klt_quadrature_weights(log_weight)
    prod = np.ascontiguousarray(q * np.broadcast_to(vals, q.shape)).ravel()
    return float(np.add.reduce(prod))


# ---------------------------------------------------------------------------
# (1,1)-forms alpha = beta + dd^c q
# ---------------------------------------------------------------------------

@dataclass
class AlphaForm:
    """Smooth closed (1,1)-form ``beta + dd^c q`` with constant Hermitian ``beta``."""

    grid: TorusGrid
    beta: np.ndarray
    q: ScalarField | None = None
    psi0: ScalarField | None = None
    eps0: float | None = None
    _coeff: HermitianField | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.grid.n
        self.beta = np.asarray(self.beta, dtype=complex).reshape(n, n)
        if np.max(np.abs(self.beta - self.beta.conj().T)) > 1e-12:
            raise ValidationError("beta must be Hermitian")
        if self.q is None:
            self.q = ScalarField.constant(self.grid, 0.0)

    @classmethod
    def constant(cls, grid: TorusGrid, lam: float = 1.0) -> "AlphaForm":
        return cls(grid, lam * np.eye(grid.n))

    @property
    def class_mass(self) -> float:
        """``∫ alpha^n = n! det beta`` (the ``dd^c q`` part is exact)."""
        return float(math.factorial(self.grid.n) * np.real(np.linalg.det(self.beta)))

    def coeff(self) -> HermitianField:
        if self._coeff is None:
            H = hessian_fd(self.q)
            self._coeff = H + self.beta.reshape((1,) * self.grid.ndim + self.beta.shape)
        return self._coeff

    @property
    def shape(self) -> tuple:
        return self.q.values.shape

    def density(self) -> ScalarField:
        return ma_density(self.coeff())

    def shifted(self, eps: float) -> "AlphaForm":
        """``alpha + eps * omega`` with ``omega`` the flat form (coefficient identity)."""
        return AlphaForm(self.grid, self.beta + eps * np.eye(self.grid.n), self.q)

    def check_strict(self, tol: float | None = None) -> float:
        """Worst violation of ``alpha + dd^c psi0 >= eps0 omega`` over non-pole nodes."""
        if self.psi0 is None or self.eps0 is None:
            raise ValidationError("no strict pair (psi0, eps0) declared")
        F = self.coeff() + hessian_fd(self.psi0)
        lam = min_eigenvalue(F).values - self.eps0
        if F.valid is not None:
            lam = np.where(F.valid, lam, np.inf)
        return float(max(0.0, -np.min(lam)))


def alpha_from_spec(grid: TorusGrid, beta, modes=(), dims=None) -> AlphaForm:
    """Build ``beta + dd^c q`` with ``q`` a trigonometric polynomial."""
    q = trig_field(grid, modes, dims) if modes else ScalarField.constant(grid, 0.0)
    return AlphaForm(grid, beta, q)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def field_to_csv(u: ScalarField, path) -> None:
    """Write one row per stored node: coordinates, value, pole flag.

    Axes along which a reduced field is invariant are written as coordinate 0.
    """
    grid = u.grid
    shape = u.values.shape
    mask = u.pole_mask
    idx = np.indices(shape).reshape(len(shape), -1).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(AXIS_NAMES[: grid.ndim]) + ["value", "pole_flag"])
        vals = u.values.ravel()
        flags = mask.ravel()
        for row, v, f in zip(idx, vals, flags):
            w.writerow([f"{i * grid.h:.17g}" for i in row] + [f"{v:.17g}", int(f)])


def field_from_csv(path, grid: TorusGrid) -> ScalarField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    nd = grid.ndim
    coords = np.array([[float(x) for x in r[:nd]] for r in body])
    idx = np.rint(coords / grid.h).astype(int) % grid.N
    shape = tuple(grid.N if len(np.unique(idx[:, a])) > 1 else 1 for a in range(nd))
    values = np.zeros(shape)
    values[tuple(idx[:, a] if shape[a] > 1 else np.zeros(len(idx), int) for a in range(nd))] = [
        float(r[nd]) for r in body]
    return ScalarField(grid, values)


def field_summary(u: ScalarField) -> dict:
    vals = u.values[~u.pole_mask] if u.poles else u.values
    return {
        "min": float(np.min(vals)),
        "max": float(np.max(vals)),
        "integral": integrate(u),
        "grid": {"n": u.grid.n, "N": u.grid.N, "shape": list(u.values.shape)},
    }


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o)}")
