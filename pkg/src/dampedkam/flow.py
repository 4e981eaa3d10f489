"""Damped Hamiltonian flow ``x' = H_p, p' = -H_x - lambda p``, its tangent flow and rotation numbers.

Mechanical Hamiltonians are integrated by operator splitting with the linear
damping solved exactly (``p -> exp(-lambda h) p``), generic ones by classical
RK4. Every integrator works on ensembles: states have shape ``(m, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConvergenceError, DivergenceError, DomainError
from .model import EXAMPLE_LAMBDA, Hamiltonian, MechanicalHamiltonian, TrigPoly, get_example

_CBRT2 = 2.0 ** (1.0 / 3.0)
_YOSHIDA = (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2))


@dataclass(frozen=True)
class DampedSystem:
    """A Hamiltonian together with its damping index ``lam``.

    ``lam = 0`` (conservative) or non-Tonelli Hamiltonians require ``test_mode``.
    """

    hamiltonian: Hamiltonian
    lam: float
    test_mode: bool = False

    def __post_init__(self):
        if not math.isfinite(self.lam) or self.lam < 0:
            raise DomainError("damping index must be a finite non-negative number")
        if self.lam == 0 and not self.test_mode:
            raise DomainError("lambda = 0 is only allowed in test mode")
        if not self.hamiltonian.tonelli and not self.test_mode:
            raise DomainError("non-Tonelli Hamiltonian is only allowed in test mode")

    @property
    def n(self) -> int:
        return self.hamiltonian.n

    @property
    def period(self) -> float:
        return self.hamiltonian.period

    def vector_field(self, x, p):
        h = self.hamiltonian
        return h.H_p(x, p), -h.H_x(x, p) - self.lam * p

    def jacobian(self, x, p):
        """Jacobian of the vector field, shape ``(..., 2n, 2n)``."""
        h = self.hamiltonian
        n = self.n
        hxp = np.asarray(h.H_xp(x, p))
        top = np.concatenate([np.swapaxes(hxp, -1, -2), np.asarray(h.H_pp(x, p))], axis=-1)
        bot = np.concatenate([-np.asarray(h.H_xx(x, p)), -hxp - self.lam * np.eye(n)], axis=-1)
        return np.concatenate([top, bot], axis=-2)


def example_system(name: str, alpha: Optional[float] = None, lam: float = EXAMPLE_LAMBDA) -> DampedSystem:
    return DampedSystem(get_example(name, alpha), lam)


@dataclass(frozen=True)
class StepSpec:
    """Fixed-step integration settings.

    ``method`` is ``"auto"`` (``"yoshida4"`` for mechanical Hamiltonians,
    RK4 otherwise), ``"strang"``, ``"yoshida4"`` (fourth-order composition of
    Strang steps) or ``"rk4"``.
    """

    dt: float = 1e-3
    method: str = "auto"
    escape_radius: float = 1e3
    sample_every: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.method not in ("auto", "strang", "yoshida4", "rk4"):
            raise DomainError(f"unknown integration method {self.method!r}")
        if self.sample_every < 1:
            raise DomainError("sample_every must be >= 1")

    def resolve(self, sys: DampedSystem) -> str:
        if self.method == "auto":
            return "yoshida4" if isinstance(sys.hamiltonian, MechanicalHamiltonian) else "rk4"
        if self.method in ("strang", "yoshida4") and not isinstance(sys.hamiltonian, MechanicalHamiltonian):
            raise DomainError("splitting methods need a mechanical Hamiltonian")
        return self.method


@dataclass
class PhaseTrajectory:
    """Samples of a flow line; ``x`` is the lifted (unreduced) position.

    Times are monotone in the direction of integration. ``tangent[k]`` is the
    ``2n x 2n`` matrix of the tangent map at ``times[k]``, ordered ``(x, p)``.
    """

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    tangent: Optional[np.ndarray] = None

    @property
    def det(self) -> Optional[np.ndarray]:
        return None if self.tangent is None else np.linalg.det(self.tangent)

    @property
    def final(self):
        return self.x[-1], self.p[-1]


# ---------------------------------------------------------------------------
# single steps on ensembles; tangent has shape (m, 2n, k)


def damp_substep(p, lam, h, tangent=None):
    """Exact solution of ``p' = -lam p`` over time ``h``."""
    f = math.exp(-lam * h)
    p = p * f
    if tangent is not None:
        n = p.shape[-1]
        tangent = tangent.copy()
        tangent[..., n:, :] *= f
    return p, tangent


def _strang(ham: MechanicalHamiltonian, lam, x, p, h, tangent):
    n = ham.n
    p, tangent = damp_substep(p, lam, 0.5 * h, tangent)
    p = p - 0.5 * h * ham.V(x, 1)
    if tangent is not None:
        tangent[..., n:, :] -= 0.5 * h * ham.V(x, 2)[..., :, None] * tangent[..., :n, :]
    x = x + h * (p + ham.d)
    if tangent is not None:
        tangent[..., :n, :] += h * tangent[..., n:, :]
    p = p - 0.5 * h * ham.V(x, 1)
    if tangent is not None:
        tangent[..., n:, :] -= 0.5 * h * ham.V(x, 2)[..., :, None] * tangent[..., :n, :]
    p, tangent = damp_substep(p, lam, 0.5 * h, tangent)
    return x, p, tangent


def _rk4(sys: DampedSystem, x, p, h, tangent):
    n = sys.n

    def f(x, p, T):
        dx, dp = sys.vector_field(x, p)
        dT = None if T is None else sys.jacobian(x, p) @ T
        return dx, dp, dT

    k1 = f(x, p, tangent)
    k2 = f(x + 0.5 * h * k1[0], p + 0.5 * h * k1[1], None if tangent is None else tangent + 0.5 * h * k1[2])
    k3 = f(x + 0.5 * h * k2[0], p + 0.5 * h * k2[1], None if tangent is None else tangent + 0.5 * h * k2[2])
    k4 = f(x + h * k3[0], p + h * k3[1], None if tangent is None else tangent + h * k3[2])
    x = x + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    p = p + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    if tangent is not None:
        tangent = tangent + h / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return x, p, tangent


def step(sys: DampedSystem, x, p, h, method, tangent=None):
    """Advance an ensemble by one step of signed size ``h``."""
    if method == "strang":
        return _strang(sys.hamiltonian, sys.lam, x, p, h, tangent)
    if method == "yoshida4":
        for w in _YOSHIDA:
            x, p, tangent = _strang(sys.hamiltonian, sys.lam, x, p, w * h, tangent)
        return x, p, tangent
    return _rk4(sys, x, p, h, tangent)


def integrate(sys: DampedSystem, x0, p0, t: float, spec: StepSpec = StepSpec(), tangent: bool = False,
              record: bool = True, raise_on_escape: bool = True):
    """Integrate an ensemble of initial conditions for signed time ``t``.

    Returns ``(times, xs, ps, tangents, escaped)`` where the sample arrays
    have a leading time axis (only the final state when ``record`` is False)
    and ``escaped`` flags members whose momentum left the escape radius.
    Escaped members are frozen at their last state.
    """
    n = sys.n
    x = np.array(x0, dtype=float).reshape(-1, n)
    p = np.array(p0, dtype=float).reshape(-1, n)
    if x.shape != p.shape:
        raise DomainError("x0 and p0 must have matching shapes")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise DomainError("non-finite initial condition")
    method = spec.resolve(sys)
    nsteps = int(round(abs(t) / spec.dt))
    h = t / nsteps if nsteps else 0.0
    T = np.broadcast_to(np.eye(2 * n), (x.shape[0], 2 * n, 2 * n)).copy() if tangent else None
    escaped = np.zeros(x.shape[0], dtype=bool)

    times, xs, ps, Ts = [0.0], [x.copy()], [p.copy()], [None if T is None else T.copy()]
    for k in range(1, nsteps + 1):
        xn, pn, Tn = step(sys, x, p, h, method, T)
        bad = ~np.all(np.isfinite(pn), axis=-1) | (np.linalg.norm(pn, axis=-1) > spec.escape_radius)
        if np.any(bad & ~escaped):
            if raise_on_escape:
                raise DivergenceError(f"trajectory escaped radius {spec.escape_radius} at t = {k * h:.6g}")
            escaped |= bad
        keep = ~escaped
        x[keep], p[keep] = xn[keep], pn[keep]
        if T is not None:
            T[keep] = Tn[keep]
        if record and (k % spec.sample_every == 0 or k == nsteps):
            times.append(k * h)
            xs.append(x.copy())
            ps.append(p.copy())
            Ts.append(None if T is None else T.copy())
    if not record:
        times, xs, ps, Ts = [nsteps * h], [x], [p], [T]
    tang = None if T is None else np.stack(Ts)
    return np.asarray(times), np.stack(xs), np.stack(ps), tang, escaped


def flow_map(sys: DampedSystem, x0, p0, t: float, spec: StepSpec = StepSpec()) -> PhaseTrajectory:
    """Trajectory of ``Phi^t`` from a single initial condition (``t`` may be negative)."""
    times, xs, ps, _, _ = integrate(sys, x0, p0, t, spec)
    return PhaseTrajectory(times, xs[:, 0, :], ps[:, 0, :])


def tangent_flow(sys: DampedSystem, x0, p0, t: float, spec: StepSpec = StepSpec()) -> PhaseTrajectory:
    """Trajectory together with the tangent map ``D Phi^t`` at every sample."""
    times, xs, ps, Ts, _ = integrate(sys, x0, p0, t, spec, tangent=True)
    return PhaseTrajectory(times, xs[:, 0, :], ps[:, 0, :], Ts[:, 0])


# ---------------------------------------------------------------------------
# rotation numbers


def graph_evaluator(graph, period: float) -> Callable:
    """Turn a TrigPoly, grid function or callable into a periodic callable ``P(x)``."""
    if isinstance(graph, TrigPoly):
        return graph
    values = getattr(graph, "values", None)
    if values is not None:
        xs = graph.grid.x
        vals = np.asarray(values, dtype=float)
        L = graph.grid.period

        def P(x):
            return np.interp(np.mod(x, L), np.append(xs, L), np.append(vals, vals[0]))

        return P
    if callable(graph):
        return graph
    if np.isscalar(graph):
        c = float(graph)
        return lambda x: np.full(np.shape(x), c)
    raise DomainError("graph must be a TrigPoly, grid function, callable or constant")


def graph_speed(sys: DampedSystem, graph, x):
    """Projected speed ``H_p(x, P(x))`` along a one-dimensional graph."""
    P = graph_evaluator(graph, sys.period)
    x = np.asarray(x, dtype=float)
    return sys.hamiltonian.H_p(x[..., None], np.asarray(P(x), dtype=float)[..., None])[..., 0]


def rotation_number(sys: DampedSystem, graph, horizon: float = 1000.0, spec: StepSpec = StepSpec(),
                    n_quad: int = 2048, tol: float = 0.05, x0: float = 0.0) -> float:
    """Mean speed ``lim x(t)/t`` of the circle dynamics ``x' = H_p(x, P(x))``.

    When the speed has constant sign the period integral
    ``period / integral(dx / H_p)`` is used (trapezoid rule, spectrally
    accurate for smooth periodic data); otherwise the lifted dynamics is
    averaged over ``horizon``. A ``ConvergenceError`` carrying the partial
    average is raised when the running average still moves by more than
    ``tol`` over the last decade of the horizon.
    """
    if sys.n != 1:
        raise DomainError("rotation numbers are implemented for n = 1")
    L = sys.period
    values = getattr(graph, "values", None)
    xs = graph.grid.x if values is not None else np.arange(n_quad) * (L / n_quad)
    f = graph_speed(sys, graph, xs)
    if np.all(f > 0) or np.all(f < 0):
        return float(1.0 / np.mean(1.0 / f))

    def rhs(t, y):
        return graph_speed(sys, graph, y)

    t_eval = np.linspace(0.1 * horizon, horizon, 101)
    sol = solve_ivp(rhs, (0.0, horizon), [x0], t_eval=t_eval, rtol=1e-10, atol=1e-12, max_step=max(spec.dt, 0.1))
    avg = (sol.y[0] - x0) / sol.t
    if np.ptp(avg) > tol:
        raise ConvergenceError(f"no rotation number: running average oscillates by {np.ptp(avg):.3g}",
                               residual=float(avg[-1]))
    return float(avg[-1])
