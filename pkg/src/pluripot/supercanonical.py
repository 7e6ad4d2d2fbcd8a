"""Green functions, klt weights and supercanonical envelopes on a torus curve.

Every ``lambda omega``-psh function on a curve is ``lambda G rho + C`` for a
probability measure ``rho`` (its normalized Riesz measure), with
``G rho = ∫ G(., a) d rho(a)``.  Eliminating ``C`` through the constraint
``∫ exp(p phi - gamma) omega <= 1`` leaves, at each evaluation point ``z0``,
the concave program

    J(rho) = lambda G rho(z0) - (1/p) log ∫ exp(p lambda G rho - gamma) omega

over probability weights on a lattice of source nodes, solved here by
Frank-Wolfe with exact line search.  On the flat torus
``G(z, a) = G0(z - a)``, so every potential is a periodic convolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import blas

from .errors import ConvergenceError, KltViolationError, ValidationError
from .geometry import ScalarField, TorusGrid, klt_quadrature_weights

FW_MAX_ITER = 500
FW_GAP_TOL = 1e-7
WEIGHT_FLOOR = 1e-12  # weights below this are treated as inactive


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------

def _laplacian_symbol(grid: TorusGrid) -> np.ndarray:
    k = np.fft.fftfreq(grid.N, d=1.0 / grid.N)
    s = (2.0 * np.cos(2 * np.pi * k / grid.N) - 2.0) / grid.h ** 2
    return s[:, None] + s[None, :]


def green_kernel(grid: TorusGrid) -> np.ndarray:
    """``G0 = G(., 0)``: the zero-mean solution of ``Δ_h G0 = 4π (δ_0 - 1)``, by FFT."""
    if grid.n != 1:
        raise ValidationError("Green functions are implemented for n = 1")
    rhs = np.full(grid.shape, -4 * np.pi)
    rhs[0, 0] += 4 * np.pi / grid.h ** 2
    sym = _laplacian_symbol(grid)
    sym[0, 0] = 1.0
    fh = np.fft.fft2(rhs) / sym
    fh[0, 0] = 0.0
    G = np.real(np.fft.ifft2(fh))
    return G - G.mean()


def green_function(grid: TorusGrid, a) -> ScalarField:
    """``G(., a)`` with ``dd^c G = δ_a - ω`` and zero mean; a unit log pole is recorded at ``a``."""
    a = tuple(int(i) % grid.N for i in a)
    return ScalarField(grid, np.roll(green_kernel(grid), a, axis=(0, 1)), ((a, 1.0),))


def poisson_residual(grid: TorusGrid, G: np.ndarray, a) -> float:
    """``sup |Δ_h G - 4π (δ_a - 1)|``, with ``δ_a`` of unit mass."""
    lap = sum(np.roll(G, s, ax) for ax in (0, 1) for s in (1, -1)) - 4 * G
    lap = lap / grid.h ** 2
    rhs = np.full(grid.shape, -4 * np.pi)
    rhs[tuple(a)] += 4 * np.pi / grid.h ** 2
    return float(np.max(np.abs(lap - rhs)))


@dataclass
class GreenTable:
    """Green kernel of ``grid`` with a lattice of source nodes (every ``stride``-th node)."""

    grid: TorusGrid
    stride: int = 2
    G0: np.ndarray = field(init=False, repr=False)
    _fG0: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.G0 = green_kernel(self.grid)
        self._fG0 = np.fft.rfft2(self.G0)

    @property
    def sources(self) -> np.ndarray:
        """Source nodes, shape ``(m, 2)``, in lexicographic order."""
        idx = np.arange(0, self.grid.N, self.stride)
        return np.stack(np.meshgrid(idx, idx, indexing="ij"), axis=-1).reshape(-1, 2)

    @property
    def n_sources(self) -> int:
        return (self.grid.N // self.stride) ** 2

    def field(self, a) -> ScalarField:
        a = tuple(int(i) for i in a)
        return ScalarField(self.grid, np.roll(self.G0, a, axis=(0, 1)), ((a, 1.0),))

    def embed(self, rho: np.ndarray) -> np.ndarray:
        """Place source weights on the full grid."""
        out = np.zeros(self.grid.shape)
        s = self.stride
        out[::s, ::s] = rho.reshape(self.grid.N // s, self.grid.N // s)
        return out

    def potential(self, rho: np.ndarray) -> np.ndarray:
        """``Σ_a rho_a G(., a)`` on the full grid."""
        return np.fft.irfft2(np.fft.rfft2(self.embed(rho)) * self._fG0, s=self.grid.shape)

    def at_sources(self, mu: np.ndarray) -> np.ndarray:
        """``∫ G(a, z) dmu(z)`` for every source ``a`` (``mu`` given as node masses)."""
        full = np.fft.irfft2(np.fft.rfft2(mu) * self._fG0, s=self.grid.shape)
        s = self.stride
        return full[::s, ::s].ravel()

    def column(self, z0) -> np.ndarray:
        """``G(z0, a)`` for every source ``a``."""
        src = self.sources
        return self.G0[(z0[0] - src[:, 0]) % self.grid.N, (z0[1] - src[:, 1]) % self.grid.N]


# ---------------------------------------------------------------------------
# klt weights
# ---------------------------------------------------------------------------

@dataclass
class KltWeight:
    """``gamma = Σ_j c_j G(., a_j) + const``; ``normalize`` fixes the constant so that ``∫ e^{-gamma} ω = 1``."""

    grid: TorusGrid
    points: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)
    normalize: bool = False
    constant: float = 0.0

    def __post_init__(self):
        if len(self.points) != len(self.coeffs):
            raise ValidationError("klt weight needs one coefficient per point")
        self.points = [tuple(int(i) % self.grid.N for i in a) for a in self.points]
        self.coeffs = [float(c) for c in self.coeffs]
        for a, c in zip(self.points, self.coeffs):
            if c >= 1.0:
                raise KltViolationError(f"pole coefficient {c:g} at {a} violates the klt condition c < 1")
        if self.normalize:
            raw = klt_quadrature_weights(-self._field(0.0))
            self.constant = float(np.log(np.add.reduce(raw.ravel())))

    def _field(self, const: float) -> ScalarField:
        g = ScalarField(self.grid, np.full(self.grid.shape, const))
        for a, c in zip(self.points, self.coeffs):
            g = g + green_function(self.grid, a) * c
        return g

    @property
    def gamma(self) -> ScalarField:
        return self._field(self.constant)

    def quadrature(self) -> np.ndarray:
        """Node weights ``q`` with ``Σ q f ≈ ∫ f e^{-gamma} ω`` for smooth ``f``."""
        return klt_quadrature_weights(-self.gamma)

    @property
    def is_trivial(self) -> bool:
        return not self.points and self.constant == 0.0


def check_integrability(lam: float, gamma: KltWeight, atoms=()) -> None:
    """Reject exponents ``lambda G rho - gamma`` with a pole coefficient ``<= -1``."""
    for a, c in zip(gamma.points, gamma.coeffs):
        total = lam * sum(w for b, w in atoms if tuple(b) == a) - c
        if total <= -1.0:
            raise KltViolationError(f"exp(lambda G - gamma) is not integrable at {a} (coefficient {total:g})")


def green_candidate(lam: float, gamma: KltWeight, a, p: float = 1.0, table: GreenTable | None = None) -> ScalarField:
    """``lambda G(., a) - (1/p) log ∫ exp(p lambda G(., a) - gamma) ω``."""
    if lam < 0:
        raise ValidationError("lambda must be nonnegative")
    grid = gamma.grid
    if lam == 0:
        return ScalarField.constant(grid, 0.0)
    check_integrability(lam, gamma, [(a, 1.0)])
    G = (table.field(a) if table is not None else green_function(grid, a)).values
    q = gamma.quadrature()
    return ScalarField(grid, lam * G - _log_integral(p * lam * G, q) / p, ((tuple(a), lam),))


def _log_integral(u: np.ndarray, q: np.ndarray) -> float:
    m = float(u.max())
    return m + float(np.log(np.add.reduce((q * np.exp(u - m)).ravel())))


# ---------------------------------------------------------------------------
# the concave program
# ---------------------------------------------------------------------------

@dataclass
class PointSolution:
    z0: tuple
    value: float
    rho: np.ndarray
    iterations: int
    duality_gap: float
    best_atom_value: float


class SupercanonicalObjective:
    """``J(rho)`` at ``z0`` and its gradient over the source lattice."""

    def __init__(self, table: GreenTable, q: np.ndarray, lam: float, p: float, z0):
        self.table, self.q, self.lam, self.p = table, q, lam, p
        self.z0 = tuple(z0)
        self.g0 = table.column(self.z0)

    def value_from_potential(self, V: np.ndarray, rho: np.ndarray) -> float:
        return self.lam * float(self.g0 @ rho) - _log_integral(self.p * self.lam * V, self.q) / self.p

    def __call__(self, rho: np.ndarray) -> float:
        return self.value_from_potential(self.table.potential(rho), rho)

    def gradient(self, V: np.ndarray) -> np.ndarray:
        u = self.p * self.lam * V
        w = self.q * np.exp(u - u.max())
        mu = w / np.add.reduce(w.ravel())
        return self.lam * (self.g0 - self.table.at_sources(mu))


def _line_search(obj: SupercanonicalObjective, V: np.ndarray, Vd: np.ndarray, gd: float, smax: float,
                 iters: int = 50, tol: float = 1e-14) -> float:
    """Maximizer over ``[0, smax]`` of the concave ``J`` along ``V + s Vd``.

    Newton steps on the derivative, safeguarded by the bracket it maintains.
    """
    lam, p, q = obj.lam, obj.p, obj.q

    def derivs(s):
        u = p * lam * (V + s * Vd)
        w = q * np.exp(u - u.max())
        z = np.add.reduce(w.ravel())
        m1 = np.add.reduce((w * Vd).ravel()) / z
        m2 = np.add.reduce((w * Vd * Vd).ravel()) / z
        return lam * (gd - m1), -p * lam * lam * max(m2 - m1 * m1, 0.0)

    d0, _ = derivs(0.0)
    if d0 <= 0:
        return 0.0
    d1, _ = derivs(smax)
    if d1 >= 0:
        return smax
    lo, hi, s = 0.0, smax, 0.5 * smax
    for _ in range(iters):
        d, dd = derivs(s)
        if d > 0:
            lo = s
        else:
            hi = s
        nxt = s - d / dd if dd < 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - s) <= tol * max(1.0, smax) or hi - lo <= tol:
            return nxt
        s = nxt
    return s


def atom_values(obj: SupercanonicalObjective) -> np.ndarray:
    """``J(e_a)`` for every source: by translation invariance the log-integral is a correlation with ``q``."""
    table = obj.table
    u = obj.p * obj.lam * table.G0
    shift = float(u.max())
    conv = np.real(np.fft.ifft2(np.conj(np.fft.fft2(np.exp(u - shift))) * np.fft.fft2(obj.q)))
    s = table.stride
    logint = shift + np.log(np.maximum(conv[::s, ::s].ravel(), 1e-300))
    return obj.lam * obj.g0 - logint / obj.p


def _rows(table: GreenTable, S: np.ndarray) -> np.ndarray:
    """Flattened Green rows ``G(., a)`` for the sources ``S``."""
    src = table.sources[S]
    return np.stack([np.roll(table.G0, tuple(a), axis=(0, 1)).ravel() for a in src])


def _support_newton(obj: SupercanonicalObjective, rho: np.ndarray, S: np.ndarray, steps: int = 16,
                    tol: float = 1e-13) -> np.ndarray:
    """Projected Newton ascent of ``J`` on the face of the simplex spanned by ``S``.

    Atoms whose weight reaches zero along a step leave the support.  The
    Hessian is the costly part, so it is reused (a chord step) for as long as
    the gradient spread keeps shrinking by at least a factor of four.
    """
    lam, p = obj.lam, obj.p
    rho = rho.copy()
    S = np.asarray(S)
    qf = obj.q.ravel()
    Gs = _rows(obj.table, S)

    def value(r, V):
        return lam * float(obj.g0[S] @ r) - _log_integral(p * lam * V, qf) / p

    H, spread_prev = None, np.inf
    for _ in range(steps):
        r = rho[S]
        V = r @ Gs
        u = p * lam * V
        w = qf * np.exp(u - u.max())
        mu = w / w.sum()
        m = Gs @ mu
        g = lam * (obj.g0[S] - m)
        spread = g.max() - g.min()
        if spread < tol:
            break
        if H is not None and spread <= 0.25 * spread_prev:
            spread_prev = spread
        else:
            H, spread_prev = None, spread
        if H is None:
            # covariance of the rows under mu; syrk fills the upper triangle only
            C = blas.dsyrk(1.0, Gs * np.sqrt(mu), trans=0)
            C = np.triu(C) + np.triu(C, 1).T
            H = -p * lam * lam * (C - np.outer(m, m))
        free = np.ones(len(S), dtype=bool)
        while True:
            # KKT system of max g.d + d.H.d/2 subject to sum(d) = 0 on the free atoms
            idx = np.flatnonzero(free)
            k = len(idx)
            K = np.zeros((k + 1, k + 1))
            Hf = H[np.ix_(idx, idx)]
            K[:k, :k] = Hf - 1e-10 * np.trace(-Hf) / k * np.eye(k)
            K[:k, k] = K[k, :k] = 1.0
            d = np.zeros(len(S))
            try:
                d[idx] = np.linalg.solve(K, np.concatenate([-g[idx], [0.0]]))[:k]
            except np.linalg.LinAlgError:
                d[:] = np.nan
                break
            blocked = free & (r <= WEIGHT_FLOOR) & (d < 0)
            if not blocked.any():
                break
            free &= ~blocked
        slope = float(g @ d)
        if not np.isfinite(slope) or slope <= tol:
            break
        # the ratio test caps the step unless a negligible weight would stall it; then
        # the arc is projected, so such weights leave the support instead
        neg = d < 0
        tmax = min(1.0, float(np.min(-r[neg] / d[neg]))) if neg.any() else 1.0
        f0 = value(r, V)
        t = tmax if tmax >= 1e-3 else 1.0
        while t > 1e-10:
            rt = np.maximum(r + t * d, 0.0)
            rt[rt < WEIGHT_FLOOR] = 0.0
            rt /= rt.sum()
            if value(rt, rt @ Gs) >= f0 + 1e-4 * float(g @ (rt - r)):
                break
            t *= 0.5
        else:
            break
        rho[S] = rt
        keep = rho[S] > 0
        S, Gs, H = S[keep], Gs[keep], H[np.ix_(keep, keep)]
    return rho


def _pairwise_step(obj: SupercanonicalObjective, rho: np.ndarray, grad: np.ndarray, k: int) -> np.ndarray:
    """Move weight from the weakest support atom to atom ``k`` with exact line search."""
    support = np.flatnonzero(rho > WEIGHT_FLOOR)
    j = int(support[np.argmin(grad[support])])
    if j == k:
        return rho
    e = np.zeros_like(rho)
    e[k], e[j] = 1.0, -1.0
    table = obj.table
    step = _line_search(obj, table.potential(rho), table.potential(e), obj.g0[k] - obj.g0[j], rho[j])
    out = rho.copy()
    out[k] += step
    out[j] = 0.0 if step >= rho[j] else rho[j] - step
    return out


def frank_wolfe(obj: SupercanonicalObjective, rho0: np.ndarray | None = None, max_iter: int = FW_MAX_ITER,
                gap_tol: float = FW_GAP_TOL, batch: int = 4) -> PointSolution:
    """Maximize ``obj`` over the simplex, starting from ``rho0`` or the best single atom.

    Each iteration adds the atoms with the largest partial derivatives (``batch``
    of them, or a quarter of the support size if larger) and re-optimizes the
    weights on the current support by projected Newton steps, a fully
    corrective Frank-Wolfe method.  When that makes no progress a pairwise
    step with exact line search is taken.  The
    reported ``duality_gap`` is the usual Frank-Wolfe gap
    ``max grad - <grad, rho>``, an upper bound on the distance to the optimum.
    """
    table = obj.table
    m = table.n_sources
    vals = atom_values(obj)
    best = int(np.argmax(vals))
    rho = np.zeros(m)
    rho[best] = 1.0
    if rho0 is not None and len(rho0) == m and obj(rho0) > vals[best]:
        rho = np.array(rho0, dtype=float)
    gap = np.inf
    it = 0
    f = obj(rho)
    for it in range(1, max_iter + 1):
        grad = obj.gradient(table.potential(rho))
        k = int(np.argmax(grad))
        mean = float(grad @ rho)
        gap = float(grad[k] - mean)
        if gap < gap_tol:
            break
        support = np.flatnonzero(rho > 0)
        top = np.argsort(grad)[::-1][:max(batch, len(support) // 4)]
        top = top[grad[top] > mean + 0.5 * gap]
        new = _support_newton(obj, rho, np.union1d(support, top))
        fn = obj(new)
        if fn <= f:
            new = _pairwise_step(obj, rho, grad, k)
            fn = obj(new)
            if fn <= f:
                break
        new[new < WEIGHT_FLOOR] = 0.0
        rho, f = new / new.sum(), fn
    return PointSolution(obj.z0, f, rho, it, gap, float(vals[best]))


@dataclass
class SupercanonicalProblem:
    """Data and (after solving) results of the supercanonical envelope.

    ``eval_stride`` selects the evaluation lattice for ``phi_can``; the
    source lattice is every ``source_stride``-th node.
    """

    grid: TorusGrid
    lam: float
    gamma: KltWeight | None = None
    p: float = 1.0
    source_stride: int = 2
    eval_stride: int = 16
    max_iter: int = FW_MAX_ITER
    gap_tol: float = FW_GAP_TOL
    phi_can: np.ndarray | None = None
    solutions: list = field(default_factory=list)
    table: GreenTable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.lam < 0:
            raise ValidationError("lambda must be nonnegative")
        if self.p < 1:
            raise ValidationError("p must be at least 1")
        if self.gamma is None:
            self.gamma = KltWeight(self.grid)

    @property
    def eval_nodes(self) -> list:
        idx = range(0, self.grid.N, self.eval_stride)
        return [(i, j) for i in idx for j in idx]

    @property
    def rho(self) -> np.ndarray:
        """Dual weights per evaluation point, shape ``(points, sources)``."""
        return np.array([s.rho for s in self.solutions])

    def diagnostics(self) -> dict:
        q = self.gamma.quadrature()
        resid, gaps, floor = [], [], []
        h2 = self.grid.h ** 2
        for s in self.solutions:
            phi = competitor(self, s)
            resid.append(abs(float(np.add.reduce((q * np.exp(self.p * phi)).ravel())) - 1.0))
            gaps.append(s.duality_gap)
            lap = sum(np.roll(phi, k, ax) for ax in (0, 1) for k in (1, -1)) - 4 * phi
            floor.append(float(np.min(self.lam + lap / (4 * np.pi * h2))))
        return {"constraint_residual": max(resid, default=0.0), "duality_gap": max(gaps, default=0.0),
                "psh_min": min(floor, default=0.0), "iterations": [s.iterations for s in self.solutions]}


def competitor(problem: SupercanonicalProblem, sol: PointSolution) -> np.ndarray:
    """The extremal function at ``sol.z0``: ``lambda G rho + C`` with the constraint active."""
    if problem.lam == 0:
        return np.zeros(problem.grid.shape)
    V = problem.table.potential(sol.rho)
    q = problem.gamma.quadrature()
    return problem.lam * V - _log_integral(problem.p * problem.lam * V, q) / problem.p


# the eight signed axis permutations preserving the square lattice
_SQUARE_SYMMETRIES = [np.array(m) for m in ([[1, 0], [0, 1]], [[0, 1], [1, 0]], [[-1, 0], [0, 1]],
                                            [[1, 0], [0, -1]], [[-1, 0], [0, -1]], [[0, -1], [1, 0]],
                                            [[0, 1], [-1, 0]], [[0, -1], [-1, 0]])]


def _lattice_images(table: GreenTable, rho: np.ndarray, z_from, z_to) -> list:
    """Source weights carried by each lattice isometry ``z -> A z + b`` sending ``z_from`` to ``z_to``.

    The Green kernel is invariant under these maps, so when the weight is too
    the image of an optimum is an optimum; otherwise it is only a starting point.
    """
    s, side = table.stride, table.grid.N // table.stride
    ij = np.indices((side, side)).reshape(2, -1)
    R = rho.reshape(side, side)
    images = []
    for A in _SQUARE_SYMMETRIES:
        b = np.subtract(z_to, A @ np.asarray(z_from))
        if np.any(b % s):
            continue
        ni, nj = (A @ ij + (b // s)[:, None]) % side
        out = np.empty_like(R)
        out[ni, nj] = R[ij[0], ij[1]]
        images.append(out.ravel())
    return images


def supercanonical_envelope(problem: SupercanonicalProblem, warm_start: list | None = None,
                            raise_on_stall: bool = False) -> SupercanonicalProblem:
    """Solve the concave program at every evaluation node; fills ``phi_can`` and ``solutions``."""
    grid = problem.grid
    pts = problem.eval_nodes
    side = grid.N // problem.eval_stride
    if problem.lam == 0:
        problem.phi_can = np.zeros((side, side))
        problem.solutions = [PointSolution(z, 0.0, np.zeros(0), 0, 0.0, 0.0) for z in pts]
        return problem
    check_integrability(problem.lam, problem.gamma)
    if problem.table is None or problem.table.stride != problem.source_stride:
        problem.table = GreenTable(grid, problem.source_stride)
    q = problem.gamma.quadrature()
    sols = []
    for i, z0 in enumerate(pts):
        obj = SupercanonicalObjective(problem.table, q, problem.lam, problem.p, z0)
        starts = [warm_start[i].rho] if warm_start else []
        for prev in sols:
            starts.extend(_lattice_images(problem.table, prev.rho, prev.z0, z0))
        rho0 = max(starts, key=obj) if starts else None
        sol = frank_wolfe(obj, rho0, problem.max_iter, problem.gap_tol)
        if raise_on_stall and sol.duality_gap >= problem.gap_tol:
            raise ConvergenceError(f"Frank-Wolfe stalled at {z0} (duality gap {sol.duality_gap:.3e})",
                                   sol.iterations, sol.duality_gap)
        sols.append(sol)
    problem.solutions = sols
    problem.phi_can = np.array([s.value for s in sols]).reshape(side, side)
    return problem


def p_sweep(grid: TorusGrid, lam: float, gamma: KltWeight, ps=(1, 2, 4, 8, 16), **kw) -> dict:
    """``phi_can`` for several exponents, solved from the largest ``p`` down with warm starts.

    With ``∫ e^{-gamma} = 1`` the constraint weakens as ``p`` decreases, so a
    warm start from the previous optimum keeps the sequence monotone.
    """
    out = {}
    prev = None
    table = None
    for p in sorted(ps, reverse=True):
        pb = SupercanonicalProblem(grid, lam, gamma, p, table=table, **kw)
        supercanonical_envelope(pb, warm_start=prev)
        out[p] = pb
        prev, table = pb.solutions, pb.table
    return out


def candidate_envelope(problem: SupercanonicalProblem) -> np.ndarray:
    """``sup_a`` of the Green candidates over the source lattice, on the evaluation lattice."""
    best = np.array([s.best_atom_value for s in problem.solutions])
    side = problem.grid.N // problem.eval_stride
    return best.reshape(side, side)


def equality_probe(problem: SupercanonicalProblem, support_tol: float = 1e-6) -> dict:
    """Gap between ``phi_can`` and the Green-candidate envelope, and the support of the optimal weights."""
    if problem.lam == 0:
        return {"gap": 0.0, "rho_support": [0] * len(problem.solutions), "max_support": 0}
    gap = float(np.max(problem.phi_can - candidate_envelope(problem)))
    support = [int(np.sum(s.rho > support_tol)) for s in problem.solutions]
    return {"gap": gap, "rho_support": support, "max_support": max(support)}
