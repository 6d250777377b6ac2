"""Exact solution and analysis of the algebraic coupling system.

For dimension N >= 5 put p = N/(N-2), so that 2p = 2N/(N-2) is the critical
Sobolev exponent and 1 < p < 2.  A pair of positive amplitudes (k, l) turns
a common ground-state profile w into an exact solution (sqrt(k) w, sqrt(l) w)
of the coupled critical system exactly when

    alpha1(k, l) = mu1 * k^(p-1) + beta * k^(p/2-1) * l^(p/2) - 1 = 0,
    alpha2(k, l) = mu2 * l^(p-1) + beta * l^(p/2-1) * k^(p/2) - 1 = 0.

Solving alpha1 = 0 for l gives the curve l = h1(k) on (0, mu1^(-1/(p-1))];
substituting into alpha2 = 0 reduces the system to a single scalar equation
f(k) = 0.  Since f -> +inf as k -> 0+ and f < 0 at the right endpoint, a
first (minimal-k) root k0 exists whenever beta > 0; this module locates it
by a logarithmic scan, bisection, and a final Newton polish on the full
2x2 system.

The module also computes the classification threshold beta0 defined by
g(beta0) = p (p-1)^(2/p-1) max(mu1, mu2)^(2/p) with
g(beta) = (p-1) mu1 mu2 beta^(2/p-2) + beta^(2/p), the analytic Jacobian of
(alpha1, alpha2), and the secondary solution branch (k(beta), l(beta))
continued from the decoupled amplitudes at beta = 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BracketError,
    ContinuationError,
    DomainClampWarning,
    DomainError,
    NonConvergenceError,
)

__all__ = [
    "SystemParams",
    "CouplingSolution",
    "BranchPoint",
    "RegionReport",
    "alpha",
    "alpha1",
    "alpha2",
    "h_curves",
    "reduced_f",
    "solve_k0_l0",
    "check_region_uniqueness",
    "g_of_beta",
    "solve_beta0",
    "jacobian_at",
    "det_closed_form_at_solution",
    "continue_branch",
]

# Residual gate every produced CouplingSolution must satisfy.
RESIDUAL_TOL = 1e-10
# Root tolerance in k for the scalar bisection stage.
ROOT_TOL_K = 1e-12
# Relative distance from a domain endpoint below which inputs are clamped.
CLAMP_EPS = 1e-14


@dataclass(frozen=True)
class SystemParams:
    """Parameters of the coupled system.

    N is the space dimension (N >= 5), mu1/mu2 the self-interaction
    strengths, beta the coupling, lambda1/lambda2 the linear potentials
    (only the PDE modules read the lambdas).
    """

    N: int
    mu1: float
    mu2: float
    beta: float
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 5:
            raise DomainError(f"dimension N must be an integer >= 5, got {self.N}")
        if not (self.mu1 > 0 and self.mu2 > 0):
            raise DomainError("mu1 and mu2 must be positive")

    @property
    def p(self) -> float:
        """Half the critical exponent: p = N/(N-2), in (1, 2) for N >= 5."""
        return self.N / (self.N - 2)

    @property
    def two_p(self) -> float:
        """Critical Sobolev exponent 2N/(N-2)."""
        return 2.0 * self.N / (self.N - 2)

    def k_endpoint(self, which: int) -> float:
        """Right endpoint mu_i^(-1/(p-1)) = mu_i^(-(N-2)/2) of the h-curve domain."""
        mu = self.mu1 if which == 1 else self.mu2
        return mu ** (-(self.N - 2) / 2.0)

    def swapped(self) -> "SystemParams":
        """Parameters with the roles of the two components exchanged."""
        return replace(self, mu1=self.mu2, mu2=self.mu1,
                       lambda1=self.lambda2, lambda2=self.lambda1)


@dataclass(frozen=True)
class CouplingSolution:
    """A positive root (k, l) of the coupling system.

    residual is max(|alpha1|, |alpha2|) at (k, l); is_minimal_k records
    whether k was located as the first sign change of the reduced scalar
    equation (the minimal-k root).
    """

    k: float
    l: float
    is_minimal_k: bool
    residual: float

    def __post_init__(self):
        if not (self.k > 0 and self.l > 0):
            raise DomainError("coupling solution requires k > 0 and l > 0")


@dataclass(frozen=True)
class BranchPoint:
    """One accepted point of the continued branch (k(beta), l(beta)).

    exceeds_min_scalar_sum records whether
    k + l > min(mu1^(-(N-2)/2), mu2^(-(N-2)/2)), the criterion under which
    the proportional pair built from this branch is not of least energy.
    """

    beta: float
    solution: CouplingSolution
    exceeds_min_scalar_sum: bool


@dataclass
class RegionReport:
    """Outcome of sampling the uniqueness region."""

    passed: bool
    samples_checked: int
    violations: list = field(default_factory=list)
    scale_check_passed: bool = True
    scale_values: tuple = (float("nan"), float("nan"))


def _clamp(x: float, lo: float, hi: float, label: str) -> float:
    """Clamp x to [lo, hi] when within CLAMP_EPS (relative) of an endpoint."""
    scale = max(abs(lo), abs(hi), 1.0)
    if lo - CLAMP_EPS * scale <= x < lo:
        warnings.warn(f"{label}={x!r} clamped to domain endpoint {lo!r}",
                      DomainClampWarning, stacklevel=3)
        return lo
    if hi < x <= hi + CLAMP_EPS * scale:
        warnings.warn(f"{label}={x!r} clamped to domain endpoint {hi!r}",
                      DomainClampWarning, stacklevel=3)
        return hi
    return x


def alpha1(params: SystemParams, k, l):
    """alpha1(k, l) = mu1 k^(p-1) + beta k^(p/2-1) l^(p/2) - 1, k > 0, l >= 0."""
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)
    if np.any(k <= 0) or np.any(l < 0):
        raise DomainError("alpha1 requires k > 0 and l >= 0")
    p = params.p
    out = params.mu1 * k ** (p - 1) + params.beta * k ** (p / 2 - 1) * l ** (p / 2) - 1.0
    return float(out) if out.ndim == 0 else out


def alpha2(params: SystemParams, k, l):
    """alpha2(k, l) = mu2 l^(p-1) + beta l^(p/2-1) k^(p/2) - 1, l > 0, k >= 0."""
    k = np.asarray(k, dtype=float)
    l = np.asarray(l, dtype=float)
    if np.any(l <= 0) or np.any(k < 0):
        raise DomainError("alpha2 requires l > 0 and k >= 0")
    p = params.p
    out = params.mu2 * l ** (p - 1) + params.beta * l ** (p / 2 - 1) * k ** (p / 2) - 1.0
    return float(out) if out.ndim == 0 else out


def alpha(params: SystemParams, k: float, l: float) -> tuple[float, float]:
    """Both constraint residuals (alpha1, alpha2) at (k, l); needs k, l > 0."""
    return alpha1(params, k, l), alpha2(params, k, l)


def h_curves(params: SystemParams, x: float, which: int) -> float:
    """The curve h1(k) (which=1) or h2(l) (which=2) solving alpha_i = 0.

    h1(k) = beta^(-2/p) (k^(1-p/2) - mu1 k^(p/2))^(2/p) on (0, mu1^(-1/(p-1))],
    and symmetrically for h2.  Requires beta > 0.
    """
    if params.beta <= 0:
        raise DomainError("h curves require beta > 0")
    if which not in (1, 2):
        raise DomainError(f"which must be 1 or 2, got {which}")
    mu = params.mu1 if which == 1 else params.mu2
    endpoint = params.k_endpoint(which)
    x = _clamp(x, 0.0, endpoint, "k" if which == 1 else "l")
    if not (0 < x <= endpoint):
        raise DomainError(
            f"h{which} argument must lie in (0, {endpoint!r}], got {x!r}")
    p = params.p
    bracket = x ** (1 - p / 2) - mu * x ** (p / 2)
    if bracket < 0:
        # only reachable through rounding at the endpoint
        bracket = 0.0
    return params.beta ** (-2.0 / p) * bracket ** (2.0 / p)


def reduced_f(params: SystemParams, k) -> float:
    """Scalar reduction f(k) of the system along l = h1(k).

    f(k) = (1/(beta k^(p-1)) - mu1/beta)^((2-p)/p)
           - mu2/beta - ((beta^2 - mu1 mu2)/beta) k^(p-1)

    on (0, mu1^(-1/(p-1))].  Zeros of f are exactly the k-components of the
    coupling-system roots.  f -> +inf as k -> 0+, f = -beta/mu1 at the right
    endpoint.
    """
    if params.beta <= 0:
        raise DomainError("reduced_f requires beta > 0")
    scalar = np.isscalar(k) or np.asarray(k).ndim == 0
    k = np.atleast_1d(np.asarray(k, dtype=float))
    endpoint = params.k_endpoint(1)
    if scalar:
        k = np.array([_clamp(float(k[0]), 0.0, endpoint, "k")])
    if np.any(k <= 0) or np.any(k > endpoint):
        raise DomainError(f"reduced_f arguments must lie in (0, {endpoint!r}]")
    p, beta = params.p, params.beta
    kp = k ** (p - 1)
    arg = np.maximum(1.0 / (beta * kp) - params.mu1 / beta, 0.0)
    out = (arg ** ((2 - p) / p)
           - params.mu2 / beta
           - ((beta ** 2 - params.mu1 * params.mu2) / beta) * kp)
    return float(out[0]) if scalar else out


def _jacobian_entries(params: SystemParams, k: float, l: float):
    p, beta = params.p, params.beta
    j11 = (p - 1) * params.mu1 * k ** (p - 2) + (p / 2 - 1) * beta * k ** (p / 2 - 2) * l ** (p / 2)
    j22 = (p - 1) * params.mu2 * l ** (p - 2) + (p / 2 - 1) * beta * l ** (p / 2 - 2) * k ** (p / 2)
    j12 = (p / 2) * beta * k ** (p / 2 - 1) * l ** (p / 2 - 1)
    return j11, j12, j12, j22


def _newton_polish(params: SystemParams, k: float, l: float,
                   tol: float = 1e-14, max_iter: int = 30) -> tuple[float, float, float]:
    """Newton iteration on (alpha1, alpha2) = 0 from (k, l).

    Returns (k, l, residual) with residual = max(|alpha1|, |alpha2|).
    """
    for _ in range(max_iter):
        a1 = alpha1(params, k, l)
        a2 = alpha2(params, k, l)
        res = max(abs(a1), abs(a2))
        if res < tol:
            break
        j11, j12, j21, j22 = _jacobian_entries(params, k, l)
        det = j11 * j22 - j12 * j21
        if det == 0 or not math.isfinite(det):
            break
        dk = -(j22 * a1 - j12 * a2) / det
        dl = -(-j21 * a1 + j11 * a2) / det
        step = 1.0
        while k + step * dk <= 0 or l + step * dl <= 0:
            step *= 0.5
            if step < 1e-12:
                break
        k += step * dk
        l += step * dl
    a1 = alpha1(params, k, l)
    a2 = alpha2(params, k, l)
    return k, l, max(abs(a1), abs(a2))


def solve_k0_l0(params: SystemParams, scan_points: int = 10_000,
                scan_floor: float = 1e-12) -> CouplingSolution:
    """Minimal-k root (k0, l0) of the coupling system for beta > 0.

    Scans (0, mu1^(-1/(p-1))) on a logarithmic grid for the first sign
    change of reduced_f, bisects the bracket to 1e-12 in k, sets
    l0 = h1(k0) and polishes with Newton on the full 2x2 system.

    scan_points is a robustness knob: f may develop several roots for beta
    near (p-1)*max(mu1, mu2), and a denser scan separates them.
    """
    if params.beta <= 0:
        raise DomainError("solve_k0_l0 requires beta > 0")
    endpoint = params.k_endpoint(1)
    # log-spaced scan from endpoint*scan_floor up to the endpoint
    ks = endpoint * np.power(scan_floor, 1.0 - np.arange(scan_points + 1) / scan_points)
    fs = reduced_f(params, ks)
    sign_change = np.nonzero((fs[:-1] > 0) & (fs[1:] <= 0))[0]
    if sign_change.size == 0:
        raise BracketError(
            f"no sign change of the reduced scalar equation on "
            f"({ks[0]!r}, {endpoint!r}) with {scan_points} scan points; "
            f"refine with a larger scan_points",
            scan_points=scan_points)
    i = int(sign_change[0])
    a, b = float(ks[i]), float(ks[i + 1])
    # bisection on the first bracket
    fa = reduced_f(params, a)
    while b - a > ROOT_TOL_K * max(1.0, endpoint):
        m = 0.5 * (a + b)
        fm = reduced_f(params, m)
        if (fa > 0) == (fm > 0):
            a, fa = m, fm
        else:
            b = m
    k0 = 0.5 * (a + b)
    l0 = h_curves(params, k0, 1)
    if l0 <= 0:
        # root at the very endpoint would give l = 0; not a valid pair
        raise BracketError("reduced_f root coincides with the domain endpoint",
                           scan_points=scan_points)
    k0, l0, residual = _newton_polish(params, k0, l0)
    if residual >= RESIDUAL_TOL:
        raise NonConvergenceError(
            f"coupling residual {residual!r} above gate {RESIDUAL_TOL}",
            residual=residual)
    return CouplingSolution(k=k0, l=l0, is_minimal_k=True, residual=residual)


def check_region_uniqueness(params: SystemParams, sol: CouplingSolution,
                            samples: int = 10_000,
                            tol_band: float = 1e-8) -> RegionReport:
    """Sample the region {k + l <= k0 + l0, k, l >= 0, (k,l) != 0} and verify
    no point besides (k0, l0) satisfies alpha1 >= 0 and alpha2 >= 0.

    Requires beta >= (p-1) max(mu1, mu2), the range in which uniqueness
    holds.  Also checks mu_i (k0+l0)^(p-1) < 1 for both i.
    """
    p = params.p
    if params.beta < (p - 1) * max(params.mu1, params.mu2) - 1e-14:
        raise DomainError("uniqueness region check requires "
                          "beta >= (p-1) max(mu1, mu2)")
    s = sol.k + sol.l
    scale1 = params.mu1 * s ** (p - 1)
    scale2 = params.mu2 * s ** (p - 1)
    scale_ok = scale1 < 1.0 and scale2 < 1.0

    m = max(2, int(math.sqrt(2.0 * samples)))
    grid = np.linspace(0.0, s, m + 1)
    kk, ll = np.meshgrid(grid, grid, indexing="ij")
    mask = (kk + ll <= s + 1e-15 * s) & ((kk > 0) | (ll > 0))
    k_flat, l_flat = kk[mask], ll[mask]

    p2 = p / 2
    with np.errstate(divide="ignore", invalid="ignore"):
        # interior points: both alphas as written; on the axes use the
        # one-sided limits (k -> 0+ sends alpha1 -> +inf when l > 0, beta > 0)
        a1 = np.where(k_flat > 0,
                      params.mu1 * k_flat ** (p - 1)
                      + params.beta * k_flat ** (p2 - 1) * l_flat ** p2 - 1.0,
                      np.inf)
        a2 = np.where(l_flat > 0,
                      params.mu2 * l_flat ** (p - 1)
                      + params.beta * l_flat ** (p2 - 1) * k_flat ** p2 - 1.0,
                      np.inf)
    # a point violates uniqueness if both constraints hold strictly within
    # the band and it is not the known solution
    near_sol = np.hypot(k_flat - sol.k, l_flat - sol.l) <= 1e-6 * max(s, 1.0)
    bad = (a1 >= tol_band) & (a2 >= tol_band) & ~near_sol
    violations = [(float(k_flat[i]), float(l_flat[i]), float(a1[i]), float(a2[i]))
                  for i in np.nonzero(bad)[0][:100]]
    return RegionReport(
        passed=(not violations) and scale_ok,
        samples_checked=int(mask.sum()),
        violations=violations,
        scale_check_passed=scale_ok,
        scale_values=(float(scale1), float(scale2)),
    )


def g_of_beta(params: SystemParams, beta: float) -> float:
    """g(beta) = (p-1) mu1 mu2 beta^(2/p-2) + beta^(2/p).

    Strictly increasing on ((p-1) max(mu1, mu2), inf); domain error below
    (p-1) max(mu1, mu2).
    """
    p = params.p
    lo = (p - 1) * max(params.mu1, params.mu2)
    beta = _clamp(beta, lo, float("inf"), "beta")
    if beta < lo:
        raise DomainError(f"g is defined for beta >= {lo!r}, got {beta!r}")
    return (p - 1) * params.mu1 * params.mu2 * beta ** (2.0 / p - 2.0) + beta ** (2.0 / p)


def _g_prime(params: SystemParams, beta: float) -> float:
    p = params.p
    return (2.0 / p) * beta ** (2.0 / p - 3.0) * (beta ** 2 - (p - 1) ** 2 * params.mu1 * params.mu2)


def solve_beta0(params: SystemParams) -> float:
    """Classification threshold beta0 >= (p-1) max(mu1, mu2).

    Solves g(beta0) = p (p-1)^(2/p-1) max(mu1^(2/p), mu2^(2/p)) by monotone
    bisection with geometric bracket expansion; returns (p-1) mu exactly
    (no iteration) when mu1 == mu2.
    """
    p = params.p
    if params.mu1 == params.mu2:
        return (p - 1) * params.mu1
    mx = max(params.mu1, params.mu2)
    rhs = p * (p - 1) ** (2.0 / p - 1.0) * mx ** (2.0 / p)
    lo = (p - 1) * mx
    hi = lo + 10.0 * mx
    while g_of_beta(params, hi) < rhs:
        hi = lo + 2.0 * (hi - lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g_of_beta(params, mid) < rhs:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    beta0 = 0.5 * (lo + hi)
    # Newton polish on the monotone g
    for _ in range(5):
        err = g_of_beta(params, beta0) - rhs
        gp = _g_prime(params, beta0)
        if gp <= 0:
            break
        beta0 -= err / gp
    return beta0


def jacobian_at(params: SystemParams, sol: CouplingSolution):
    """Analytic Jacobian of (alpha1, alpha2) at the solution, and its determinant.

    For beta > beta0 the determinant is negative at (k0, l0).
    """
    j11, j12, j21, j22 = _jacobian_entries(params, sol.k, sol.l)
    mat = np.array([[j11, j12], [j21, j22]], dtype=float)
    det = j11 * j22 - j12 * j21
    return mat, float(det)


def det_closed_form_at_solution(params: SystemParams, sol: CouplingSolution) -> float:
    """Reduced determinant formula valid only at roots of the system:

    (p/2)(p-1) k^-1 l^-1 (mu1 k^(p-1) + mu2 l^(p-1) - 2/p).
    """
    p = params.p
    k, l = sol.k, sol.l
    return (p / 2.0) * (p - 1.0) / (k * l) * (
        params.mu1 * k ** (p - 1) + params.mu2 * l ** (p - 1) - 2.0 / p)


def continue_branch(params: SystemParams, beta_max: float, steps: int,
                    min_step: float = 1e-8) -> list[BranchPoint]:
    """Continue the solution branch (k(beta), l(beta)) from beta = 0.

    Starts from the decoupled amplitudes k(0) = mu1^(-(N-2)/2),
    l(0) = mu2^(-(N-2)/2), where the Jacobian is diagonal and positive, and
    marches beta in steps of beta_max/steps, correcting with Newton at each
    step.  The step is halved on Newton failure, down to min_step.

    Each accepted point carries the flag
    k(beta) + l(beta) > min(mu1^(-(N-2)/2), mu2^(-(N-2)/2)), the criterion
    under which the proportional pair built from this branch is *not* of
    least energy.
    """
    if beta_max <= 0:
        raise DomainError("continue_branch requires beta_max > 0")
    if steps < 1:
        raise DomainError("continue_branch requires steps >= 1")
    k = params.k_endpoint(1)
    l = params.k_endpoint(2)
    min_scalar = min(k, l)
    beta = 0.0
    dbeta = beta_max / steps
    start = CouplingSolution(k=k, l=l, is_minimal_k=False, residual=0.0)
    out: list[BranchPoint] = [BranchPoint(
        beta=0.0, solution=start,
        exceeds_min_scalar_sum=(k + l > min_scalar))]
    while beta < beta_max - 1e-15 * beta_max:
        trial_dbeta = min(dbeta, beta_max - beta)
        while True:
            trial_beta = beta + trial_dbeta
            trial_params = replace(params, beta=trial_beta)
            kn, ln, res = _newton_polish(trial_params, k, l)
            if res < RESIDUAL_TOL and kn > 0 and ln > 0:
                break
            trial_dbeta *= 0.5
            if trial_dbeta < min_step:
                raise ContinuationError(
                    f"Newton continuation stalled at beta={beta!r} "
                    f"(step fell below {min_step})", last_beta=beta)
        beta, k, l = trial_beta, kn, ln
        sol = CouplingSolution(k=k, l=l, is_minimal_k=False, residual=res)
        out.append(BranchPoint(
            beta=beta, solution=sol,
            exceeds_min_scalar_sum=(k + l > min_scalar)))
    return out
