"""Discrete Lax-Oleinik semigroup on a periodic one-dimensional grid.

One step over ``dt`` replaces ``u`` by

    u'(x) = min_y  exp(-lam dt) I[u](y) + w(dt) L((x + y)/2, (x - y)/dt),

with ``I`` periodic linear interpolation, ``|x - y| <= v_max dt`` and
``w(dt) = (1 - exp(-lam dt)) / lam``. The minimum is found by enumerating
``candidates`` equally spaced velocities plus every grid node in reach, then
refining around the best one by golden-section search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import ConvergenceError, DomainError, VelocityBoundError
from .flow import DampedSystem
from .model import MechanicalHamiltonian, TWO_PI

logger = logging.getLogger(__name__)

#: Sentinel used to seed the fixed-endpoint kernel.
M_BIG = 1e9
DEFAULT_V_MAX = 6.0


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform grid ``x_i = i * period / N`` on the circle."""

    N: int
    period: float = TWO_PI
    n: int = 1

    def __post_init__(self):
        if self.n != 1:
            raise DomainError("only one-dimensional grids are supported")
        if self.N < 16:
            raise DomainError("grids need at least 16 points")
        if not self.period > 0:
            raise DomainError("period must be positive")

    @property
    def dx(self) -> float:
        return self.period / self.N

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * self.dx


@dataclass
class GridFunction:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.N,):
            raise DomainError(f"expected {self.grid.N} values, got shape {self.values.shape}")

    @classmethod
    def sample(cls, grid: PeriodicGrid, f) -> "GridFunction":
        return cls(grid, np.asarray(f(grid.x), dtype=float) * np.ones(grid.N))

    def __call__(self, x):
        """Periodic linear interpolation."""
        L = self.grid.period
        xs = np.append(self.grid.x, L)
        return np.interp(np.mod(x, L), xs, np.append(self.values, self.values[0]))

    def __add__(self, c):
        other = c.values if isinstance(c, GridFunction) else c
        return GridFunction(self.grid, self.values + other)

    def __sub__(self, c):
        other = c.values if isinstance(c, GridFunction) else c
        return GridFunction(self.grid, self.values - other)

    def sup_distance(self, other: "GridFunction") -> float:
        if other.grid != self.grid:
            raise DomainError("grid mismatch")
        return float(np.max(np.abs(self.values - other.values)))


@dataclass(frozen=True)
class SolverParams:
    """Discretization parameters.

    ``v_max=None`` picks ``max(6, 2 dx / dt)`` so the search interval always
    reaches past the nearest neighbours; an explicit value must satisfy
    ``v_max * dt >= 2 dx``.
    """

    dt: float = 1e-3
    v_max: Optional[float] = None
    candidates: int = 17
    refine_tol: float = 1e-8
    interp: str = "linear"

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.candidates < 3 or self.candidates % 2 == 0:
            raise DomainError("candidates must be an odd integer >= 3")
        if self.interp != "linear":
            raise DomainError("only linear interpolation is supported")
        if not self.refine_tol > 0:
            raise DomainError("refine_tol must be positive")

    def speed(self, grid: PeriodicGrid) -> float:
        if self.v_max is None:
            return max(DEFAULT_V_MAX, 2.0 * grid.dx / self.dt * (1.0 + 1e-12))
        if self.v_max * self.dt < 2.0 * grid.dx * (1.0 - 1e-12):
            raise DomainError(
                f"v_max * dt = {self.v_max * self.dt:.4g} must be >= 2 dx = {2 * grid.dx:.4g}")
        return float(self.v_max)

    def reach(self, grid: PeriodicGrid) -> float:
        return self.speed(grid) * self.dt


def discount_weights(lam: float, dt: float):
    """``(exp(-lam dt), integral of exp(lam s) over [-dt, 0])``."""
    disc = math.exp(-lam * dt)
    w = -math.expm1(-lam * dt) / lam if lam > 0 else dt
    return disc, w


def _golden_iterations(width: float, tol: float) -> int:
    return max(1, int(math.ceil(math.log(max(width, tol) / tol) / -math.log(_kernels._INV_PHI))))


def minimize_step(u: GridFunction, sys: DampedSystem, params: SolverParams, xq) -> tuple:
    """Evaluate the one-step functional minimum at arbitrary query points.

    Returns ``(values, endpoints, boundary_active)``.
    """
    grid = u.grid
    if sys.n != 1:
        raise DomainError("the grid solver is one-dimensional")
    if not math.isclose(grid.period, sys.period):
        raise DomainError("grid period differs from the Hamiltonian period")
    xq = np.ascontiguousarray(np.atleast_1d(np.asarray(xq, dtype=float)))
    reach = params.reach(grid)
    disc, w = discount_weights(sys.lam, params.dt)
    spacing = reach / ((params.candidates - 1) // 2)
    n_golden = _golden_iterations(2 * spacing, params.refine_tol)
    h = sys.hamiltonian
    if isinstance(h, MechanicalHamiltonian):
        a, b = h.potentials[0].coefficient_arrays()
        return _kernels.lo_step_mechanical(
            np.ascontiguousarray(u.values), xq, grid.dx, params.dt, disc, w, reach,
            params.candidates, n_golden, h.drift[0], h.offset, TWO_PI / h.period, a, b)
    return _minimize_generic(u, sys, params, xq, reach, disc, w, spacing, n_golden)


def _minimize_generic(u, sys, params, xq, reach, disc, w, spacing, n_golden):
    """Vectorized fallback for non-mechanical Hamiltonians (numeric Legendre transform)."""
    grid = u.grid
    dt = params.dt
    h = sys.hamiltonian

    def objective(y):
        v = (xq[:, None] - y) / dt if y.ndim == 2 else (xq - y) / dt
        mid = 0.5 * (xq[:, None] + y) if y.ndim == 2 else 0.5 * (xq + y)
        lag = h.lagrangian(mid[..., None], v[..., None])
        return disc * u(y) + w * lag

    J = (params.candidates - 1) // 2
    offs = [0.0]
    for j in range(1, J + 1):
        offs += [j * spacing, -j * spacing]
    ys = [xq[:, None] - np.asarray(offs)[None, :]]
    k_lo = np.ceil((xq - reach) / grid.dx)
    width = int(math.floor(2 * reach / grid.dx)) + 1
    nodes = (k_lo[:, None] + np.arange(width)[None, :]) * grid.dx
    nodes = np.where(np.abs(nodes - xq[:, None]) <= reach, nodes, xq[:, None])
    Y = np.concatenate(ys + [nodes], axis=1)
    F = objective(Y)
    # tie-break: value, then |v|, then y
    order = np.lexsort((Y, np.abs(xq[:, None] - Y), F), axis=1)
    pick = order[:, 0]
    rows = np.arange(xq.size)
    best = F[rows, pick]
    best_y = Y[rows, pick]

    lo = np.maximum(best_y - spacing, xq - reach)
    hi = np.minimum(best_y + spacing, xq + reach)
    g = _kernels._INV_PHI
    c = hi - g * (hi - lo)
    d = lo + g * (hi - lo)
    fc, fd = objective(c), objective(d)
    for _ in range(n_golden):
        left = fc <= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        newc = hi - g * (hi - lo)
        newd = lo + g * (hi - lo)
        c_next = np.where(left, newc, d)
        d_next = np.where(left, c, newd)
        f_eval = objective(np.where(left, newc, newd))
        fc, fd = np.where(left, f_eval, fd), np.where(left, fc, f_eval)
        c, d = c_next, d_next
    y = np.where(fc <= fd, c, d)
    val = np.where(fc <= fd, fc, fd)
    take = (val < best) | ((val == best) & (np.abs(xq - y) < np.abs(xq - best_y)))
    best = np.where(take, val, best)
    best_y = np.where(take, y, best_y)
    flag = np.abs(np.abs(xq - best_y) - reach) <= 1e-9 * reach + 2 * (hi - lo)
    return best, best_y, flag


def lo_step(u: GridFunction, sys: DampedSystem, params: SolverParams, check_bound: bool = True) -> GridFunction:
    """One step of the discrete semigroup over ``params.dt``."""
    vals, _, flag = minimize_step(u, sys, params, u.grid.x)
    if check_bound and np.any(flag):
        i = int(np.flatnonzero(flag)[0])
        raise VelocityBoundError(
            f"velocity bound active at grid point {i} (x = {u.grid.x[i]:.6g}); increase v_max", index=i)
    return GridFunction(u.grid, vals)


def _steps_for(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if t < 0 or abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise DomainError(f"t = {t} is not a non-negative multiple of dt = {dt}")
    return k


def evolve(psi: GridFunction, sys: DampedSystem, t: float, params: SolverParams,
           snapshot_times: Sequence[float] = (), check_bound: bool = True):
    """Apply ``t / dt`` semigroup steps; also return ``[(time, GridFunction)]`` at ``snapshot_times``."""
    k = _steps_for(t, params.dt)
    wanted = {}
    for s in snapshot_times:
        wanted.setdefault(_steps_for(s, params.dt), []).append(s)
    snaps = []
    u = psi
    for j in range(k + 1):
        if j in wanted:
            snaps.extend((s, u) for s in wanted[j])
        if j < k:
            u = lo_step(u, sys, params, check_bound)
    snaps.sort(key=lambda item: item[0])
    return u, snaps


@dataclass
class StationaryResult:
    solution: GridFunction
    steps: int
    residual: float


def stationary(sys: DampedSystem, grid: PeriodicGrid, params: SolverParams = SolverParams(), tol: float = 1e-4,
               max_steps: int = 10**6, u0: Optional[GridFunction] = None) -> StationaryResult:
    """Fixed point of the discrete semigroup by iteration from ``u0`` (default 0).

    Stops once the sup-change falls below ``tol * (1 - exp(-lam dt))``; the
    operator contracts by ``exp(-lam dt)``, so the distance to the discrete
    fixed point is then at most ``tol``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    if sys.lam <= 0:
        raise DomainError("the stationary problem needs lambda > 0")
    disc, _ = discount_weights(sys.lam, params.dt)
    threshold = tol * (1.0 - disc)
    u = u0 if u0 is not None else GridFunction(grid, np.zeros(grid.N))
    change = math.inf
    for k in range(1, max_steps + 1):
        nxt = lo_step(u, sys, params)
        change = float(np.max(np.abs(nxt.values - u.values)))
        u = nxt
        if change <= threshold:
            logger.debug("stationary converged after %d steps (change %.3e)", k, change)
            return StationaryResult(u, k, change)
    raise ConvergenceError(f"stationary iteration did not converge in {max_steps} steps", residual=change)


@dataclass
class KernelResult:
    values: GridFunction
    unreachable: np.ndarray


def finite_horizon_kernel(sys: DampedSystem, grid: PeriodicGrid, y_index: int, t: float,
                          params: SolverParams = SolverParams()) -> KernelResult:
    """Discrete fixed-endpoint action ``h^t(y, x)`` for all grid points ``x``.

    The seed is 0 at ``y`` and ``M_BIG * exp(lam t)`` elsewhere, so points the
    semigroup cannot reach from ``y`` within ``t`` keep values above
    ``M_BIG / 2`` and are flagged.
    """
    k = _steps_for(t, params.dt)
    seed = np.full(grid.N, M_BIG * math.exp(sys.lam * k * params.dt))
    seed[y_index % grid.N] = 0.0
    u, _ = evolve(GridFunction(grid, seed), sys, t, params, check_bound=False)
    unreachable = u.values >= 0.5 * M_BIG
    return KernelResult(u, unreachable)


@dataclass
class CharacteristicCurve:
    """Backward curve ``tau -> gamma(tau)`` for ``tau`` in ``[-T, 0]``.

    ``positions`` are lifted (continuous); ``velocities[k]`` is the constant
    velocity on ``[times[k+1], times[k]]`` and ``actions[k]`` is
    ``exp(lam times[k]) L`` on that step; ``weight`` is the discount integral
    of one step.
    """

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    actions: np.ndarray
    weight: float

    def discounted_action(self) -> float:
        return float(self.weight * np.sum(self.actions))


def backward_characteristic(u: GridFunction, sys: DampedSystem, x: float, T: float,
                            params: SolverParams = SolverParams()) -> CharacteristicCurve:
    """Follow the step minimizers backward from ``x`` for time ``T``."""
    k = _steps_for(T, params.dt)
    disc, w = discount_weights(sys.lam, params.dt)
    h = sys.hamiltonian
    pos = np.empty(k + 1)
    vel = np.empty(k)
    act = np.empty(k)
    pos[0] = x
    for j in range(k):
        _, y, flag = minimize_step(u, sys, params, [pos[j]])
        if flag[0]:
            raise VelocityBoundError(f"velocity bound active on the characteristic at tau = {-j * params.dt:.4g}")
        y = float(y[0])
        v = (pos[j] - y) / params.dt
        mid = 0.5 * (pos[j] + y)
        vel[j] = v
        act[j] = math.exp(-sys.lam * j * params.dt) * float(h.lagrangian(np.array([mid]), np.array([v])))
        pos[j + 1] = y
    times = -np.arange(k + 1) * params.dt
    return CharacteristicCurve(times, pos, vel, act, w)
