"""Closed-form extremal profiles of the Sobolev inequality and the limit
energies built from them.

The profile with concentration scale eps centered at y,

    U_{eps,y}(x) = [N(N-2)]^((N-2)/4) * (eps / (eps^2 + |x-y|^2))^((N-2)/2),

solves -Lap u = u^((N+2)/(N-2)) on all of R^N, and both the Dirichlet
integral of U and the integral of U^(2N/(N-2)) equal S^(N/2), where S is
the best Sobolev constant.  S is computed here by radial quadrature with
Richardson extrapolation rather than hard-coded; the equality of the two
integrals doubles as a quadrature self-test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import radial
from .coupling import SystemParams, CouplingSolution, solve_k0_l0
from .errors import DomainError, NoClosedFormError, TailTruncationWarning
from .radial import RadialGrid, make_grid

__all__ = [
    "Instanton",
    "SobolevData",
    "evaluate",
    "radial_profile",
    "default_instanton_grid",
    "compute_S",
    "sobolev_data",
    "limit_energy_A",
]


@dataclass(frozen=True)
class Instanton:
    """Extremal Sobolev profile with scale epsilon and center in R^N."""

    epsilon: float
    center: np.ndarray
    N: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        if self.N < 5:
            raise DomainError("dimension must be >= 5")
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=float))

    @property
    def amplitude(self) -> float:
        """Normalization [N(N-2)]^((N-2)/4)."""
        return (self.N * (self.N - 2)) ** ((self.N - 2) / 4.0)


def radial_profile(inst: Instanton, r) -> np.ndarray:
    """Profile value at distance r from the center."""
    r = np.asarray(r, dtype=float)
    e = inst.epsilon
    return inst.amplitude * (e / (e * e + r * r)) ** ((inst.N - 2) / 2.0)


def evaluate(inst: Instanton, x) -> float:
    """Pointwise value U_{eps,y}(x)."""
    x = np.asarray(x, dtype=float)
    r = float(np.linalg.norm(x - inst.center))
    return float(radial_profile(inst, r))


@dataclass(frozen=True)
class SobolevData:
    """Best Sobolev constant S and its two defining integrals.

    integral_grad and integral_crit both approximate S^(N/2) and must agree
    to quadrature tolerance.
    """

    S: float
    integral_grad: float
    integral_crit: float
    N: int


def default_instanton_grid(N: int, epsilon: float = 1.0, M: int = 4096,
                           tail_factor: float = 1e3) -> RadialGrid:
    """Graded grid reaching tail_factor * epsilon, dense near the peak."""
    return make_grid(N, tail_factor * epsilon, M, grading="algebraic", power=4.0)


def _instanton_integrals(N: int, epsilon: float, grid: RadialGrid):
    """(Dirichlet integral, critical integral) on one grid, tail-corrected."""
    c = (N * (N - 2)) ** ((N - 2) / 4.0)
    r = grid.nodes
    e2 = epsilon * epsilon
    grad_density = (c * (N - 2)) ** 2 * epsilon ** (N - 2) * r * r / (e2 + r * r) ** N
    crit_density = c ** (2.0 * N / (N - 2)) * epsilon ** N / (e2 + r * r) ** N
    i_grad = radial.integrate(grad_density, grid)
    i_crit = radial.integrate(crit_density, grid)
    # leading-order analytic tails beyond R: the densities decay like
    # r^(2-2N) and r^(-2N)
    sigma = radial.sphere_area(N)
    R = grid.R
    tail_grad = sigma * (c * (N - 2)) ** 2 * epsilon ** (N - 2) * R ** (2 - N) / (N - 2)
    tail_crit = sigma * c ** (2.0 * N / (N - 2)) * epsilon ** N * R ** (-N) / N
    return i_grad + tail_grad, i_crit + tail_crit, max(tail_grad, tail_crit)


def _refined(grid: RadialGrid) -> RadialGrid:
    """Grid with every interval halved (node set preserved)."""
    nodes = grid.nodes
    mids = 0.5 * (nodes[:-1] + nodes[1:])
    fine = np.empty(nodes.size + mids.size)
    fine[0::2] = nodes
    fine[1::2] = mids
    return RadialGrid(N=grid.N, R=grid.R, nodes=fine, grading=grid.grading)


def compute_S(N: int, grid: RadialGrid | None = None,
              epsilon: float = 1.0, tail_rtol: float = 1e-8) -> SobolevData:
    """Best Sobolev constant from the two instanton integrals.

    Composite trapezoid on the grid and on its 2x refinement, combined by
    Richardson extrapolation; an analytic tail correction covers r > R.
    Warns if the estimated tail exceeds tail_rtol relative to the value.
    """
    if grid is None:
        grid = default_instanton_grid(N, epsilon)
    if grid.N != N:
        raise DomainError("grid dimension does not match N")
    g1, c1, tail = _instanton_integrals(N, epsilon, grid)
    g2, c2, _ = _instanton_integrals(N, epsilon, _refined(grid))
    i_grad = (4.0 * g2 - g1) / 3.0
    i_crit = (4.0 * c2 - c1) / 3.0
    if tail > tail_rtol * i_crit:
        warnings.warn(
            f"instanton tail beyond R={grid.R!r} contributes "
            f"{tail / i_crit:.2e} relative; enlarge the grid",
            TailTruncationWarning, stacklevel=2)
    s_pow = 0.5 * (i_grad + i_crit)
    return SobolevData(S=s_pow ** (2.0 / N), integral_grad=i_grad,
                       integral_crit=i_crit, N=N)


_S_CACHE: dict[int, SobolevData] = {}


def sobolev_data(N: int) -> SobolevData:
    """compute_S on the default grid, cached per dimension."""
    if N not in _S_CACHE:
        _S_CACHE[N] = compute_S(N)
    return _S_CACHE[N]


def limit_energy_A(params: SystemParams, sobolev: SobolevData,
                   coupling: CouplingSolution | None = None) -> float:
    """Least energy A of the whole-space limit system, by closed form.

    For beta < 0 (where A is not attained),
        A = (1/N) (mu1^(-(N-2)/2) + mu2^(-(N-2)/2)) S^(N/2);
    for beta >= (p-1) max(mu1, mu2),
        A = (1/N) (k0 + l0) S^(N/2),
    with (k0, l0) the minimal coupling root (solved here if not supplied).
    In between no closed form exists and NoClosedFormError is raised; use a
    flagged large-ball PDE solve instead.
    """
    if sobolev.N != params.N:
        raise DomainError("Sobolev data dimension does not match params")
    N = params.N
    s_pow = sobolev.S ** (N / 2.0)
    if params.beta < 0:
        return (params.mu1 ** (-(N - 2) / 2.0)
                + params.mu2 ** (-(N - 2) / 2.0)) * s_pow / N
    threshold = (params.p - 1) * max(params.mu1, params.mu2)
    if params.beta >= threshold:
        if coupling is None:
            coupling = solve_k0_l0(params)
        return (coupling.k + coupling.l) * s_pow / N
    raise NoClosedFormError(
        f"no closed form for A with 0 <= beta < (p-1)*max(mu) = {threshold!r}; "
        f"solve the limit problem on a large ball instead")
