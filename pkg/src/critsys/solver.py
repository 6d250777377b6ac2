"""Least-energy solutions on the ball: scalar critical ground states and the
coupled least-energy pair, by Nehari-projected preconditioned descent.

The discrete energy of a nonnegative pair (u, v) on a radial grid is

    E = 1/2 (Q1 + Q2) - 1/(2p) (M1 + 2 X + M2),

    Q1 = u.K u + lambda1 <u, u>_w,     M1 = mu1 <u^(2p)>_w,
    Q2 = v.K v + lambda2 <v, v>_w,     M2 = mu2 <v^(2p)>_w,
    X  = beta <u^p v^p>_w,

with K the face-flux stiffness form of the grid and w its cell volumes, so
the Euclidean gradient of E is exactly w times the strong-form residual of
the coupled system.  Descent directions are preconditioned with
(K + c W)^-1, c = max(|lambda1|, |lambda2|) + 1, which makes the flow an
H1 gradient flow with mesh-independent step counts.  Positivity is enforced
by taking absolute values after each trial step, and every accepted iterate
is re-projected onto the constraint set:

  * two-constraint set (Q1 = M1 + X and Q2 = M2 + X), used for beta < 0,
    solved as a 2x2 system in (t^p, s^p);
  * single-constraint set (Q1 + Q2 = M1 + 2X + M2), used for beta > 0,
    where the minimizer realizes the mountain-pass level.

On either set the energy reduces to (1/N)(Q1 + Q2), which is the quantity
reported as B.  A subcritical mode replaces the exponent p by p - eps to
restore compactness; chaining decreasing eps values warm-starts the
critical solve.
"""

from __future__ import annotations

import math
import warnings
import weakref
from dataclasses import dataclass, field, replace

import numpy as np

from .coupling import SystemParams, solve_k0_l0
from .errors import (
    AdmissibilityError,
    DomainError,
    NoClosedFormError,
    NonConvergenceError,
    NoProjectionError,
    ThresholdViolationWarning,
)
from .instanton import Instanton, radial_profile, sobolev_data
from .radial import (
    RadialField,
    RadialGrid,
    ShiftedOperatorFactor,
    dirichlet_energy,
    first_eigenvalue,
    stiffness_apply,
)

__all__ = [
    "FieldPair",
    "EnergyReport",
    "energy",
    "gradient",
    "residual",
    "nehari_residuals",
    "project_single_constraint",
    "project_two_constraint",
    "scalar_ground_state",
    "solve_coupled",
    "solve_subcritical",
    "fit_decay_slope",
    "bubble_energy",
    "domain_eigenvalue",
]

ARMIJO = 1e-4
COUPLED_RES_TOL = 1e-7
SCALAR_RES_TOL = 1e-8
FLAT_TOL = 1e-12
FLAT_STREAK = 10
MAX_ITER = 100_000

_EIG_CACHE: "weakref.WeakKeyDictionary[RadialGrid, float]" = weakref.WeakKeyDictionary()
_FACTOR_CACHE: "weakref.WeakKeyDictionary[RadialGrid, dict]" = weakref.WeakKeyDictionary()


def domain_eigenvalue(grid: RadialGrid) -> float:
    """First Dirichlet eigenvalue of the grid's ball, cached per grid."""
    lam = _EIG_CACHE.get(grid)
    if lam is None:
        lam = first_eigenvalue(grid)
        _EIG_CACHE[grid] = lam
    return lam


def _precond(grid: RadialGrid, c: float) -> ShiftedOperatorFactor:
    cache = _FACTOR_CACHE.setdefault(grid, {})
    factor = cache.get(c)
    if factor is None:
        factor = ShiftedOperatorFactor(grid, c)
        cache[c] = factor
    return factor


class _BandedFactor:
    """Cholesky factor of K + diag(d) in upper banded form."""

    def __init__(self, main, upper, diag):
        from scipy.linalg import cholesky_banded
        ab = np.zeros((2, main.size))
        ab[0, 1:] = upper
        ab[1, :] = main + diag
        self._cb = cholesky_banded(ab, lower=False)

    def solve(self, rhs):
        from scipy.linalg import cho_solve_banded
        return cho_solve_banded((self._cb, False), rhs)


def _banded_factor(main, upper, diag) -> _BandedFactor:
    return _BandedFactor(main, upper, diag)


@dataclass
class FieldPair:
    """State (u, v) of the coupled solver with cached constraint integrals."""

    u: RadialField
    v: RadialField
    Q1: float = math.nan
    Q2: float = math.nan
    M1: float = math.nan
    M2: float = math.nan
    X: float = math.nan

    def __post_init__(self):
        if self.u.grid is not self.v.grid:
            raise DomainError("u and v must share one grid")

    @property
    def grid(self) -> RadialGrid:
        return self.u.grid

    def refresh(self, params: SystemParams) -> "FieldPair":
        """Recompute the cached integrals at the critical exponent."""
        ws = _Workspace(self.grid, params)
        self.Q1, self.Q2, self.M1, self.M2, self.X = ws.integrals(
            self.u.values, self.v.values)
        return self


@dataclass
class EnergyReport:
    """Scalar energy summary of one coupled solve."""

    B: float
    B_mu1: float
    B_mu2: float
    A: float
    thresholds: dict
    residual_norm: float
    iterations: int
    converged: bool
    beta: float
    mode: str
    basin_energies: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "B": self.B, "B_mu1": self.B_mu1, "B_mu2": self.B_mu2,
            "A": self.A, "thresholds": dict(self.thresholds),
            "residual_norm": self.residual_norm,
            "iterations": self.iterations, "converged": self.converged,
            "beta": self.beta, "mode": self.mode,
            "basin_energies": list(self.basin_energies),
            "extras": dict(self.extras),
        }


_GAUSS_POINTS = 6
_QUAD_CACHE: "weakref.WeakKeyDictionary[RadialGrid, tuple]" = weakref.WeakKeyDictionary()


def _cell_quadrature(grid: RadialGrid):
    """Per-cell Gauss rule for integrals of piecewise-linear fields.

    Returns (phiL, phiR, Wq) with hat-function values at the Gauss points of
    every cell and the weights sigma r^(N-1) * gauss weight * h, shaped
    (M, G).  Together with the exact stiffness this makes every discrete
    energy the true continuum energy of the interpolated field, so discrete
    minimizers cannot undercut continuum concentration costs.
    """
    cached = _QUAD_CACHE.get(grid)
    if cached is None:
        x, om = np.polynomial.legendre.leggauss(_GAUSS_POINTS)
        xi = 0.5 * (x + 1.0)
        om = 0.5 * om
        nodes = grid.nodes
        h = np.diff(nodes)
        rq = nodes[:-1, None] + np.outer(h, xi)
        sigma = 2.0 * math.pi ** (grid.N / 2.0) / math.gamma(grid.N / 2.0)
        Wq = sigma * rq ** (grid.N - 1) * om[None, :] * h[:, None]
        cached = (1.0 - xi, xi, Wq)
        _QUAD_CACHE[grid] = cached
    return cached


class _Workspace:
    """Grid-bound discrete quantities for one (params, exponent) context."""

    def __init__(self, grid: RadialGrid, params: SystemParams, pe: float | None = None):
        self.grid = grid
        self.params = params
        self.pe = params.p if pe is None else pe
        if not (1.0 < self.pe <= params.p):
            raise DomainError(f"working exponent {self.pe!r} outside (1, p]")
        self.w = grid.cell_volumes
        self.phiL, self.phiR, self.Wq = _cell_quadrature(grid)
        self.shift = max(abs(params.lambda1), abs(params.lambda2)) + 1.0
        self.precond = _precond(grid, self.shift)

    def precond_pair(self, u: np.ndarray, v: np.ndarray):
        """Preconditioner factors for the two components.

        For beta < 0 the repulsion beta u^(p-1) v^p is stiff where one
        component decays under the other's support (its linearization
        |beta| (p-1) u^(p-2) v^p blows up as u -> 0), which throttles an
        explicit flow; adding that diagonal to the metric treats it
        implicitly.  For beta >= 0 the fixed-shift factor is kept.
        """
        if self.params.beta >= 0:
            return self.precond, self.precond
        pe = self.pe
        ab = abs(self.params.beta)
        floor_u = 1e-12 * max(float(np.max(u)), 1e-300)
        floor_v = 1e-12 * max(float(np.max(v)), 1e-300)
        su = ab * (pe - 1.0) * (np.abs(u) + floor_u) ** (pe - 2.0) * np.abs(v) ** pe
        sv = ab * (pe - 1.0) * (np.abs(v) + floor_v) ** (pe - 2.0) * np.abs(u) ** pe
        main, upper = self.grid.stiffness_diagonals()
        pu = _banded_factor(main, upper, self.w * (self.shift + su))
        pv = _banded_factor(main, upper, self.w * (self.shift + sv))
        return pu, pv

    # -- quadrature of piecewise-linear fields --------------------------------
    def at_quad(self, x: np.ndarray) -> np.ndarray:
        """Values of the interpolated field at the cell Gauss points (M, G)."""
        xb = np.concatenate((x, [0.0]))
        return xb[:-1, None] * self.phiL + xb[1:, None] * self.phiR

    def quad_integral(self, Fq: np.ndarray) -> float:
        return float(np.sum(self.Wq * Fq))

    def scatter(self, fq: np.ndarray) -> np.ndarray:
        """Nodal gradient of the functional sum(Wq * F(u_q)) given F'(u_q)."""
        wf = self.Wq * fq
        g = wf @ self.phiL                      # cell i -> its left node (dof i)
        right = wf @ self.phiR                  # cell i -> node i+1
        g[1:] += right[:-1]                     # cell M-1's right node is boundary
        return g

    # -- constraint integrals ------------------------------------------------
    def quadratic(self, x: np.ndarray, lam: float) -> float:
        xq = self.at_quad(x)
        return dirichlet_energy(self.grid, x) + lam * self.quad_integral(xq * xq)

    def integrals(self, u: np.ndarray, v: np.ndarray,
                  uq: np.ndarray | None = None, vq: np.ndarray | None = None):
        pe = self.pe
        pr = self.params
        uq = self.at_quad(u) if uq is None else uq
        vq = self.at_quad(v) if vq is None else vq
        up = np.abs(uq) ** pe
        vp = np.abs(vq) ** pe
        Q1 = dirichlet_energy(self.grid, u) + pr.lambda1 * self.quad_integral(uq * uq)
        Q2 = dirichlet_energy(self.grid, v) + pr.lambda2 * self.quad_integral(vq * vq)
        M1 = pr.mu1 * self.quad_integral(up * up)
        M2 = pr.mu2 * self.quad_integral(vp * vp)
        X = pr.beta * self.quad_integral(up * vp)
        return Q1, Q2, M1, M2, X

    def energy(self, u: np.ndarray, v: np.ndarray) -> float:
        Q1, Q2, M1, M2, X = self.integrals(u, v)
        return 0.5 * (Q1 + Q2) - (M1 + 2.0 * X + M2) / (2.0 * self.pe)

    # -- gradient and residual ----------------------------------------------
    @staticmethod
    def _force(pr: SystemParams, pe: float, uq: np.ndarray, vq: np.ndarray):
        """Nonlinear right-hand sides f1, f2 at the quadrature points."""
        au, av = np.abs(uq), np.abs(vq)
        su, sv = np.sign(uq), np.sign(vq)
        # all exponents positive, so 0^.. = 0 and no singular intermediates
        f1 = pr.mu1 * su * au ** (2 * pe - 1.0) \
            + pr.beta * su * au ** (pe - 1.0) * av ** pe
        f2 = pr.mu2 * sv * av ** (2 * pe - 1.0) \
            + pr.beta * sv * av ** (pe - 1.0) * au ** pe
        return f1, f2

    def gradient(self, u: np.ndarray, v: np.ndarray):
        uq = self.at_quad(u)
        vq = self.at_quad(v)
        f1, f2 = self._force(self.params, self.pe, uq, vq)
        gu = stiffness_apply(self.grid, u) \
            + self.scatter(self.params.lambda1 * uq - f1)
        gv = stiffness_apply(self.grid, v) \
            + self.scatter(self.params.lambda2 * vq - f2)
        return gu, gv

    def projected_gradient(self, u: np.ndarray, v: np.ndarray):
        """Gradient with the positivity constraint's active set removed.

        Nonnegative solutions may vanish on sets where the other component
        dominates (the continuum values there are exponentially small,
        far below machine precision).  At such nodes the state sits on the
        boundary of the positive cone and the first-order condition is the
        complementarity g_i >= 0 rather than g_i = 0, so components of the
        gradient pointing out of the cone are not counted as residual.
        """
        gu, gv = self.gradient(u, v)
        floor_u = 1e-12 * max(float(np.max(np.abs(u))), 1e-300)
        floor_v = 1e-12 * max(float(np.max(np.abs(v))), 1e-300)
        gu = np.where((u <= floor_u) & (gu > 0), 0.0, gu)
        gv = np.where((v <= floor_v) & (gv > 0), 0.0, gv)
        return gu, gv

    def residual_norms(self, u: np.ndarray, v: np.ndarray):
        gu, gv = self.projected_gradient(u, v)
        ru = math.sqrt(float(np.sum(gu * gu / self.w)))
        rv = math.sqrt(float(np.sum(gv * gv / self.w)))
        return ru, rv

    # -- projections ---------------------------------------------------------
    def project_single(self, u: np.ndarray, v: np.ndarray):
        Q1, Q2, M1, M2, X = self.integrals(u, v)
        denom = M1 + 2.0 * X + M2
        if denom <= 0:
            raise DomainError(
                "degenerate denominator in the single-constraint scaling "
                f"(M1 + 2X + M2 = {denom!r} <= 0)")
        t = ((Q1 + Q2) / denom) ** (1.0 / (2.0 * self.pe - 2.0))
        return t * u, t * v

    def two_constraint_scales(self, Q1, Q2, M1, M2, X):
        """Solve t^(2-p)Q1 = t^p M1 + s^p X, s^(2-p)Q2 = s^p M2 + t^p X
        for t, s > 0, in the variables (a, b) = (t^p, s^p).

        The first equation gives b as an explicit function of a, reducing
        the system to a scalar equation phi(a) = 0 with a guaranteed sign
        change (phi -> -infinity as a grows when M1*M2 > X^2), located by
        a logarithmic scan plus bisection; a final 2x2 Newton polish brings
        the residual to roundoff.
        """
        pe = self.pe
        if M1 <= 0 or M2 <= 0 or Q1 <= 0 or Q2 <= 0:
            raise NoProjectionError("two-constraint projection needs both "
                                    "components nonzero with positive "
                                    "quadratic parts")
        if X < 0 and M1 * M2 <= X * X:
            raise NoProjectionError(
                "no two-constraint projection: overlap too strong "
                f"(M1*M2 = {M1 * M2!r} <= X^2 = {X * X!r})")
        q = (2.0 - pe) / pe
        scale = max(Q1, Q2)
        if X == 0.0:
            a = (Q1 / M1) ** (1.0 / (1.0 - q))
            b = (Q2 / M2) ** (1.0 / (1.0 - q))
            return a ** (1.0 / pe), b ** (1.0 / pe)

        # fast path: Newton from the decoupled scales (exact for X = 0);
        # covers weak coupling, where the scan grid cannot resolve the root
        a = (Q1 / M1) ** (1.0 / (1.0 - q))
        b = (Q2 / M2) ** (1.0 / (1.0 - q))
        for _ in range(50):
            f1 = a ** q * Q1 - a * M1 - b * X
            f2 = b ** q * Q2 - b * M2 - a * X
            if max(abs(f1), abs(f2)) < 30 * np.finfo(float).eps * scale:
                return a ** (1.0 / pe), b ** (1.0 / pe)
            j11 = q * a ** (q - 1.0) * Q1 - M1
            j22 = q * b ** (q - 1.0) * Q2 - M2
            det = j11 * j22 - X * X
            if det == 0 or not math.isfinite(det):
                break
            da = -(j22 * f1 - X * f2) / det
            db = -(-X * f1 + j11 * f2) / det
            damp = 1.0
            while damp >= 1e-6 and (a + damp * da <= 0 or b + damp * db <= 0):
                damp *= 0.5
            if damp < 1e-6:
                break
            a += damp * da
            b += damp * db

        # a0 is where b(a) = (a^q Q1 - a M1)/X crosses zero
        a0 = (Q1 / M1) ** (1.0 / (1.0 - q))

        def b_of_a(a):
            return (a ** q * Q1 - a * M1) / X

        def phi(a):
            b = b_of_a(a)
            return b ** q * Q2 - b * M2 - a * X

        if X < 0:
            # b > 0 needs a > a0; phi(a0+) > 0 and phi -> -inf
            grid = a0 * (1.0 + np.logspace(-10, 12, 300, base=10.0))
        else:
            # b > 0 needs a < a0; phi(0+) > 0 and phi(a0-) < 0
            grid = a0 * (1.0 - np.logspace(-10, 0, 300, base=10.0))[::-1]
            grid = grid[grid > 0]
        with np.errstate(over="ignore", invalid="ignore"):
            bg = (grid ** q * Q1 - grid * M1) / X
            vals = np.where(bg > 0, bg ** q * Q2 - bg * M2 - grid * X, np.nan)
        ok_mask = np.isfinite(vals)
        idx = np.nonzero(ok_mask[:-1] & ok_mask[1:]
                         & (vals[:-1] > 0) & (vals[1:] <= 0))[0]
        if idx.size == 0:
            raise NoProjectionError(
                "no sign change found for the two-constraint reduction")
        lo, hi = float(grid[idx[0]]), float(grid[idx[0] + 1])
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if phi(mid) > 0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * hi:
                break
        a = 0.5 * (lo + hi)
        b = b_of_a(a)
        # 2x2 Newton polish
        for _ in range(60):
            f1 = a ** q * Q1 - a * M1 - b * X
            f2 = b ** q * Q2 - b * M2 - a * X
            if max(abs(f1), abs(f2)) < 30 * np.finfo(float).eps * scale:
                break
            j11 = q * a ** (q - 1.0) * Q1 - M1
            j22 = q * b ** (q - 1.0) * Q2 - M2
            det = j11 * j22 - X * X
            if det == 0 or not math.isfinite(det):
                break
            da = -(j22 * f1 - X * f2) / det
            db = -(-X * f1 + j11 * f2) / det
            damp = 1.0
            while damp >= 1e-14 and (a + damp * da <= 0 or b + damp * db <= 0):
                damp *= 0.5
            if damp < 1e-14:
                break
            a += damp * da
            b += damp * db
        f1 = a ** q * Q1 - a * M1 - b * X
        f2 = b ** q * Q2 - b * M2 - a * X
        if max(abs(f1), abs(f2)) >= 1e-10 * scale:
            raise NoProjectionError(
                f"two-constraint projection residual {max(abs(f1), abs(f2))!r} "
                f"did not reach tolerance")
        return a ** (1.0 / pe), b ** (1.0 / pe)

    def project_two(self, u: np.ndarray, v: np.ndarray):
        Q1, Q2, M1, M2, X = self.integrals(u, v)
        t, s = self.two_constraint_scales(Q1, Q2, M1, M2, X)
        return t * u, s * v


# --------------------------------------------------------------------------
# public operations on FieldPair
# --------------------------------------------------------------------------

def energy(params: SystemParams, pair: FieldPair) -> float:
    """E(u, v) at the critical exponent."""
    ws = _Workspace(pair.grid, params)
    return ws.energy(pair.u.values, pair.v.values)


def gradient(params: SystemParams, pair: FieldPair):
    """Euclidean gradient of the discrete energy wrt the node values."""
    ws = _Workspace(pair.grid, params)
    return ws.gradient(pair.u.values, pair.v.values)


def residual(params: SystemParams, pair: FieldPair) -> tuple[float, float]:
    """Discrete L2 norms of the two strong-form equation residuals."""
    ws = _Workspace(pair.grid, params)
    return ws.residual_norms(pair.u.values, pair.v.values)


def nehari_residuals(params: SystemParams, pair: FieldPair) -> tuple[float, float]:
    """(Q1 - M1 - X, Q2 - M2 - X): zero on the two-constraint set."""
    ws = _Workspace(pair.grid, params)
    Q1, Q2, M1, M2, X = ws.integrals(pair.u.values, pair.v.values)
    return Q1 - M1 - X, Q2 - M2 - X


def project_single_constraint(params: SystemParams, pair: FieldPair) -> float:
    """Scaling t with (t u, t v) on the combined constraint set:
    t^(2p-2) = (Q1 + Q2) / (M1 + 2X + M2)."""
    if not (pair.u.values.any() or pair.v.values.any()):
        raise DomainError("projection needs a nonzero pair")
    ws = _Workspace(pair.grid, params)
    Q1, Q2, M1, M2, X = ws.integrals(pair.u.values, pair.v.values)
    denom = M1 + 2.0 * X + M2
    if denom <= 0:
        raise DomainError(
            f"degenerate denominator (M1 + 2X + M2 = {denom!r} <= 0)")
    return ((Q1 + Q2) / denom) ** (1.0 / (2.0 * params.p - 2.0))


def project_two_constraint(params: SystemParams, pair: FieldPair) -> tuple[float, float]:
    """Scalings (t, s) with (t u, s v) on the two-constraint set.

    For beta < 0 the projection exists only when M1*M2 > X^2; otherwise the
    pair is too overlapped and NoProjectionError is raised.
    """
    if not pair.u.values.any() or not pair.v.values.any():
        raise DomainError("two-constraint projection needs both components nonzero")
    ws = _Workspace(pair.grid, params)
    Q1, Q2, M1, M2, X = ws.integrals(pair.u.values, pair.v.values)
    return ws.two_constraint_scales(Q1, Q2, M1, M2, X)


# --------------------------------------------------------------------------
# descent driver
# --------------------------------------------------------------------------

def _dilation_candidates(grid: RadialGrid, x: np.ndarray, N: int):
    """Energy-scaling-invariant dilations x -> s^((N-2)/2) x(s r) of one
    component, interpolated back onto the grid; relaxes the soft
    concentration-scale mode that plain descent crawls along."""
    r = grid.dof_radii
    nodes = grid.nodes
    xb = np.concatenate((x, [0.0]))       # np.interp clamps to 0 beyond R
    out = []
    for s in (0.8, 0.9, 0.97, 1.03, 1.1, 1.25):
        vals = s ** ((N - 2) / 2.0) * np.interp(s * r, nodes, xb)
        out.append((s, np.maximum(vals, 0.0)))
    return out


def _try_dilations(ws: _Workspace, u: np.ndarray, v: np.ndarray, project,
                   E: float):
    """Best energy-decreasing dilation of either component, or None."""
    best = None
    N = ws.params.N
    for which in (0, 1):
        x = u if which == 0 else v
        for s, xs in _dilation_candidates(ws.grid, x, N):
            if s == 1.0 or not xs.any():
                continue
            try:
                un, vn = project(xs if which == 0 else u,
                                 v if which == 0 else xs)
            except (NoProjectionError, DomainError):
                continue
            En = ws.energy(un, vn)
            if En < E - 1e-14 * max(1.0, abs(E)) and (best is None or En < best[0]):
                best = (En, un, vn)
    return best


def _descend(ws: _Workspace, u: np.ndarray, v: np.ndarray, project,
             tol_res: float, max_iter: int, trace: list | None = None):
    """Projected preconditioned descent; returns (u, v, res, iters, converged).

    Runs Armijo backtracking on the energy while energy decrements are
    resolvable in floating point; once the predicted decrease falls below
    the roundoff floor of E it switches to accepting steps that shrink the
    residual norm, which stays meaningful down to the solver tolerance.
    Periodic dilation trials relax the soft concentration-scale mode.
    """
    u, v = project(np.abs(u), np.abs(v))
    E = ws.energy(u, v)
    flat = 0
    step0 = 1.0
    res_phase = False
    it = 0
    res_history: list[float] = []
    for it in range(1, max_iter + 1):
        if it % 40 == 0 and not res_phase:
            moved = _try_dilations(ws, u, v, project, E)
            if moved is not None:
                E, u, v = moved
                flat = 0
        gu, gv = ws.projected_gradient(u, v)
        res = math.sqrt(float(np.sum(gu * gu / ws.w) + np.sum(gv * gv / ws.w)))
        if trace is not None:
            trace.append(E)
        if res < tol_res and flat >= FLAT_STREAK:
            return u, v, res, it, True
        # bail out of basins that stopped making progress (e.g. states sliding
        # toward an unattained concentration limit)
        res_history.append(res)
        if len(res_history) > 1500 and res > 0.999 * res_history[-1500] \
                and res > 100.0 * tol_res:
            return u, v, res, it, False
        pu, pv = ws.precond_pair(u, v)
        zu = pu.solve(gu)
        zv = pv.solve(gv)
        slope = float(np.dot(gu, zu) + np.dot(gv, zv))
        if slope <= 0:
            return u, v, res, it, res < tol_res
        noise = 1e3 * np.finfo(float).eps * max(1.0, abs(E))
        if ARMIJO * step0 * slope < noise:
            res_phase = True
        accepted = False
        tau = step0
        if not res_phase:
            while ARMIJO * tau * slope >= noise:
                try:
                    un, vn = project(np.abs(u - tau * zu), np.abs(v - tau * zv))
                except (NoProjectionError, DomainError):
                    tau *= 0.5
                    continue
                En = ws.energy(un, vn)
                if En <= E - ARMIJO * tau * slope:
                    accepted = True
                    break
                tau *= 0.5
            if not accepted:
                res_phase = True
                tau = step0
        if res_phase and not accepted:
            while tau > 1e-14:
                try:
                    un, vn = project(np.abs(u - tau * zu), np.abs(v - tau * zv))
                except (NoProjectionError, DomainError):
                    tau *= 0.5
                    continue
                rn = math.sqrt(sum(r * r for r in ws.residual_norms(un, vn)))
                if rn < res:
                    En = ws.energy(un, vn)
                    accepted = True
                    break
                tau *= 0.5
            if not accepted:
                # residual cannot be reduced along this direction either
                return u, v, res, it, res < tol_res
        dE = E - En
        u, v, E = un, vn, En
        flat = flat + 1 if abs(dE) < FLAT_TOL * max(1.0, abs(E)) else 0
        step0 = min(1.0, 2.0 * tau)
    res = math.sqrt(sum(r * r for r in ws.residual_norms(u, v)))
    return u, v, res, it, False


def _validate_lambda(grid: RadialGrid, lam: float, allow_zero: bool = False) -> None:
    lam1 = domain_eigenvalue(grid)
    hi_ok = (lam <= 0) if allow_zero else (lam < 0)
    if not (-lam1 < lam and hi_ok):
        rng = "(-lambda1(domain), 0]" if allow_zero else "(-lambda1(domain), 0)"
        raise AdmissibilityError(
            f"lambda = {lam!r} outside admissible range {rng} with "
            f"lambda1(domain) = {lam1!r}")


# --------------------------------------------------------------------------
# scalar ground state
# --------------------------------------------------------------------------

def _default_bump(grid: RadialGrid, a_frac: float = 1.0) -> np.ndarray:
    r = grid.dof_radii / (a_frac * grid.R)
    return np.maximum(1.0 - r * r, 0.0)


def scalar_ground_state(params: SystemParams, which: int, grid: RadialGrid,
                        tol_res: float = SCALAR_RES_TOL,
                        max_iter: int = MAX_ITER,
                        init: np.ndarray | None = None
                        ) -> tuple[RadialField, float]:
    """Positive least-energy solution of -Lap u + lambda u = mu u^(2p-1).

    which selects (mu1, lambda1) or (mu2, lambda2).  Uses single-constraint
    Nehari scaling with preconditioned descent; the returned energy is
    B_mu = (1/N) * (Dirichlet + lambda mass) at the solution.
    """
    if which not in (1, 2):
        raise DomainError("which must be 1 or 2")
    mu = params.mu1 if which == 1 else params.mu2
    lam = params.lambda1 if which == 1 else params.lambda2
    _validate_lambda(grid, lam)
    # scalar problem == coupled problem with the other component absent
    scalar_params = replace(params, mu1=mu, mu2=mu, lambda1=lam, lambda2=lam,
                            beta=0.0)
    ws = _Workspace(grid, scalar_params)
    u = _default_bump(grid) if init is None else np.asarray(init, dtype=float)
    if not u.any():
        raise DomainError("initial guess must be nonzero")
    zero = np.zeros(grid.M)

    def project(uu, vv):
        Q1, _, M1, _, _ = ws.integrals(uu, zero)
        if M1 <= 0:
            raise DomainError("scalar Nehari scaling: zero nonlinear term")
        t = (Q1 / M1) ** (1.0 / (2.0 * ws.pe - 2.0))
        return t * uu, vv

    u, _, res, iters, ok = _descend(ws, u, zero, project, tol_res, max_iter)
    if not ok:
        raise NonConvergenceError(
            f"scalar ground state: residual {res!r} after {iters} iterations",
            iterations=iters, residual=res)
    B_mu = ws.quadratic(u, lam) / params.N
    return RadialField(grid, u), B_mu


# --------------------------------------------------------------------------
# coupled solves
# --------------------------------------------------------------------------

def _initial_pairs(params: SystemParams, grid: RadialGrid, mode: str):
    """Preset initializations; segregated pairs for beta < 0, proportional
    profiles for beta > 0."""
    r = grid.dof_radii
    R = grid.R
    presets = []
    if params.beta > 0 or mode == "mountain_pass":
        prof = radial_profile(
            Instanton(epsilon=R / 6.0, center=np.zeros(params.N), N=params.N), r)
        prof = prof * np.maximum(1.0 - (r / R) ** 2, 0.0)
        try:
            sol = solve_k0_l0(params) if params.beta > 0 else None
        except Exception:
            sol = None
        if sol is not None:
            presets.append(("proportional_instanton",
                            math.sqrt(sol.k) * prof, math.sqrt(sol.l) * prof))
        bump = _default_bump(grid)
        presets.append(("equal_bumps", bump.copy(), bump.copy()))
        presets.append(("skew_bumps", _default_bump(grid, 0.9),
                        0.5 * _default_bump(grid, 0.7)))
    else:
        for a_frac in (0.25, 0.4, 0.55, 0.7):
            a = a_frac * R
            inner = np.maximum(1.0 - (r / a) ** 2, 0.0) ** 2
            outer = np.where((r > a) & (r < R),
                             np.sin(math.pi * np.clip((r - a) / (R - a), 0, 1)) ** 2,
                             0.0)
            presets.append((f"segregated_{a_frac}", inner.copy(), outer.copy()))
            presets.append((f"segregated_swap_{a_frac}", outer.copy(), inner.copy()))
        # concentrated core bubble + broad component vanishing inside it;
        # the energetically viable segregation on the ball pairs a peaked
        # core with a low-amplitude bulk mode
        for b_frac in (0.25, 0.4):
            b = b_frac * R
            core = radial_profile(
                Instanton(epsilon=b / 3.0, center=np.zeros(params.N),
                          N=params.N), r)
            core = core * np.maximum(1.0 - (r / b) ** 2, 0.0)
            bulk = np.clip((r - 0.7 * b) / (0.6 * b), 0.0, 1.0) \
                * np.maximum(1.0 - (r / R) ** 2, 0.0)
            presets.append((f"core_bubble_{b_frac}", bulk.copy(), core.copy()))
            presets.append((f"core_bubble_swap_{b_frac}", core.copy(), bulk.copy()))
        # mild overlap for weak repulsion
        presets.append(("overlap", _default_bump(grid, 0.8),
                        np.where(r > 0.3 * R,
                                 np.sin(math.pi * np.clip((r - 0.3 * R) / (0.7 * R), 0, 1)) ** 2,
                                 0.0)))
    return presets


def _make_projector(ws: _Workspace, mode: str):
    if mode == "two_constraint":
        return ws.project_two
    return ws.project_single


def solve_coupled(params: SystemParams, grid: RadialGrid,
                  mode: str = "auto",
                  init: FieldPair | str = "auto",
                  tol_res: float = COUPLED_RES_TOL,
                  max_iter: int = MAX_ITER,
                  scalar_cache: dict | None = None,
                  with_scalar: bool = True,
                  record_trace: bool = False
                  ) -> tuple[FieldPair, EnergyReport]:
    """Least-energy positive pair of the coupled critical system.

    mode "auto" selects the two-constraint projection for beta < 0 and the
    single-constraint (mountain-pass) projection for beta > 0.  With
    init="auto" the flow is run from every preset initialization and the
    lowest-energy converged basin is returned; an explicit FieldPair runs a
    single flow from it.
    """
    if params.beta == 0:
        raise DomainError("solve_coupled requires beta != 0")
    _validate_lambda(grid, params.lambda1)
    _validate_lambda(grid, params.lambda2)
    if mode == "auto":
        mode = "two_constraint" if params.beta < 0 else "mountain_pass"
    if mode not in ("two_constraint", "mountain_pass"):
        raise DomainError(f"unknown mode {mode!r}")
    ws = _Workspace(grid, params)
    project = _make_projector(ws, mode)

    if isinstance(init, FieldPair):
        starts = [("user", init.u.values.copy(), init.v.values.copy())]
    else:
        starts = _initial_pairs(params, grid, mode)

    best = None
    basins = []
    traces = {}
    for name, u0, v0 in starts:
        trace = [] if record_trace else None
        try:
            u, v, res, iters, ok = _descend(ws, u0, v0, project,
                                            tol_res, max_iter, trace)
        except (NoProjectionError, DomainError):
            continue
        E = ws.energy(u, v)
        basins.append((name, E, res, ok))
        if record_trace:
            traces[name] = trace
        if ok and (best is None or E < best[1]):
            best = (name, E, u, v, res, iters)
    if best is None:
        detail = ", ".join(f"{n}: E={e:.6g} res={r:.3g} ok={o}"
                           for n, e, r, o in basins) or "no basin admissible"
        raise NonConvergenceError(
            f"coupled solve did not converge in any basin ({detail})")
    name, E, u, v, res, iters = best

    pair = FieldPair(RadialField(grid, u), RadialField(grid, v)).refresh(params)
    report = _build_report(params, grid, pair, res, iters, True, mode,
                           scalar_cache, with_scalar)
    report.basin_energies = [e for _, e, _, ok in basins if ok]
    report.extras["basins"] = [
        {"init": n, "E": e, "residual": r, "converged": ok}
        for n, e, r, ok in basins]
    report.extras["selected_init"] = name
    if record_trace:
        report.extras["energy_trace"] = traces.get(name, [])
    return pair, report


def solve_subcritical(params: SystemParams, grid: RadialGrid,
                      eps_schedule, mode: str = "auto",
                      tol_res: float = COUPLED_RES_TOL,
                      max_iter: int = MAX_ITER,
                      scalar_cache: dict | None = None,
                      with_scalar: bool = False
                      ) -> tuple[FieldPair, EnergyReport]:
    """Warm-started chain of eps-subcritical solves (exponent p - eps).

    eps_schedule must be strictly decreasing with 0 < eps < p - 1.  The
    returned pair solves the smallest-eps system; the per-eps energies are
    recorded for the compactness-restoration diagnostic.  lambda = 0 is
    admitted here (the regularized problem is compact on the ball).
    """
    eps_list = [float(e) for e in eps_schedule]
    p = params.p
    if not eps_list:
        raise DomainError("eps schedule must be nonempty")
    if any(not (0.0 < e < p - 1.0) for e in eps_list):
        raise DomainError(f"each eps must lie in (0, p-1) = (0, {p - 1.0!r})")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps schedule must be strictly decreasing")
    if params.beta == 0:
        raise DomainError("solve_subcritical requires beta != 0")
    _validate_lambda(grid, params.lambda1, allow_zero=True)
    _validate_lambda(grid, params.lambda2, allow_zero=True)
    if mode == "auto":
        mode = "two_constraint" if params.beta < 0 else "mountain_pass"

    u = v = None
    energies = []
    res = math.inf
    iters_total = 0
    for eps in eps_list:
        ws = _Workspace(grid, params, pe=p - eps)
        project = _make_projector(ws, mode)
        if u is None:
            starts = _initial_pairs(params, grid, mode)
        else:
            starts = [("warm", u, v)]
        best = None
        for name, u0, v0 in starts:
            try:
                uu, vv, rr, it, ok = _descend(ws, u0, v0, project,
                                              tol_res, max_iter)
            except (NoProjectionError, DomainError):
                continue
            if ok:
                Ee = ws.energy(uu, vv)
                if best is None or Ee < best[0]:
                    best = (Ee, uu, vv, rr, it)
        if best is None:
            raise NonConvergenceError(
                f"subcritical stage eps={eps!r} did not converge")
        E, u, v, res, it = best
        iters_total += it
        energies.append((eps, E))

    pair = FieldPair(RadialField(grid, u), RadialField(grid, v)).refresh(params)
    report = _build_report(params, grid, pair, res, iters_total, True,
                           "subcritical", scalar_cache, with_scalar)
    report.B = energies[-1][1]
    report.extras["eps_energies"] = energies
    return pair, report


def bubble_energy(N: int, mu: float) -> float:
    """Single-profile concentration energy (1/N) mu^(-(N-2)/2) S^(N/2)."""
    sd = sobolev_data(N)
    return mu ** (-(N - 2) / 2.0) * sd.S ** (N / 2.0) / N


def _build_report(params: SystemParams, grid: RadialGrid, pair: FieldPair,
                  res: float, iters: int, converged: bool, mode: str,
                  scalar_cache: dict | None, with_scalar: bool) -> EnergyReport:
    ws = _Workspace(grid, params)
    E = ws.energy(pair.u.values, pair.v.values)
    B_mu1 = B_mu2 = math.nan
    if with_scalar:
        B_mu1 = _cached_scalar(params, 1, grid, scalar_cache)
        B_mu2 = _cached_scalar(params, 2, grid, scalar_cache)
    try:
        from .instanton import limit_energy_A
        A = limit_energy_A(params, sobolev_data(params.N))
    except NoClosedFormError:
        A = math.nan
    b1 = bubble_energy(params.N, params.mu1)
    b2 = bubble_energy(params.N, params.mu2)
    thresholds = {
        "bubble_mu1": b1,
        "bubble_mu2": b2,
        "B_mu1_plus_bubble_mu2": B_mu1 + b2,
        "B_mu2_plus_bubble_mu1": B_mu2 + b1,
        "A": A,
    }
    report = EnergyReport(B=E, B_mu1=B_mu1, B_mu2=B_mu2, A=A,
                          thresholds=thresholds, residual_norm=res,
                          iterations=iters, converged=converged,
                          beta=params.beta, mode=mode)
    if with_scalar and converged:
        bounds = ([thresholds["B_mu1_plus_bubble_mu2"],
                   thresholds["B_mu2_plus_bubble_mu1"]]
                  if params.beta < 0 else [B_mu1, B_mu2])
        if not math.isnan(A):
            bounds.append(A)
        for bound in bounds:
            if not math.isnan(bound) and E > bound + 1e-8 * max(1.0, abs(bound)):
                warnings.warn(
                    f"computed B = {E!r} exceeds theoretical bound {bound!r}; "
                    f"the grid is likely under-resolved",
                    ThresholdViolationWarning, stacklevel=3)
    return report


def _cached_scalar(params: SystemParams, which: int, grid: RadialGrid,
                   cache: dict | None) -> float:
    mu = params.mu1 if which == 1 else params.mu2
    lam = params.lambda1 if which == 1 else params.lambda2
    key = (which, mu, lam)
    if cache is not None and key in cache:
        return cache[key]
    _, B = scalar_ground_state(params, which, grid)
    if cache is not None:
        cache[key] = B
    return B


def fit_decay_slope(pair: FieldPair, window: tuple[float, float] = (0.03, 0.3)
                    ) -> float:
    """Log-log slope of u + v over the radial window (fractions of R).

    On large-ball whole-space surrogates the far field decays like
    r^(2 - N), so the fitted slope should sit near 2 - N.
    """
    grid = pair.grid
    r = grid.dof_radii
    total = pair.u.values + pair.v.values
    lo, hi = window[0] * grid.R, window[1] * grid.R
    mask = (r >= lo) & (r <= hi) & (total > 0)
    if mask.sum() < 4:
        raise DomainError("decay window contains fewer than 4 usable nodes")
    x = np.log(r[mask])
    y = np.log(total[mask])
    slope = float(np.polyfit(x, y, 1)[0])
    return slope
