"""Nonsmooth analysis and verification tools for grid solutions and invariant graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import DomainError
from .flow import DampedSystem
from .model import TrigPoly
from .solver import CharacteristicCurve, GridFunction


# ---------------------------------------------------------------------------
# superdifferentials and semiconcavity


@dataclass
class SuperdiffInterval:
    """One-sided difference quotients per grid point.

    For semiconcave data ``d_minus >= d_plus`` up to O(dx) slack, and the
    superdifferential is approximated by ``[lower, upper]``.
    """

    d_plus: np.ndarray
    d_minus: np.ndarray
    differentiable: np.ndarray

    @property
    def lower(self) -> np.ndarray:
        return np.minimum(self.d_plus, self.d_minus)

    @property
    def upper(self) -> np.ndarray:
        return np.maximum(self.d_plus, self.d_minus)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def semiconcavity_constant(u: GridFunction) -> float:
    """Largest second difference quotient ``(u(x+dx) + u(x-dx) - 2u(x)) / dx^2``."""
    v = u.values
    return float(np.max((np.roll(v, -1) + np.roll(v, 1) - 2 * v) / u.grid.dx**2))


def superdifferential(u: GridFunction, c_scl: Optional[float] = None) -> SuperdiffInterval:
    """Superdifferential intervals of a periodic grid function.

    A point is flagged differentiable when ``|d_minus - d_plus| <= 3 dx C``
    with ``C`` the semiconcavity constant (estimated from ``u`` unless given).
    """
    v = u.values
    dx = u.grid.dx
    d_plus = (np.roll(v, -1) - v) / dx
    d_minus = (v - np.roll(v, 1)) / dx
    if c_scl is None:
        c_scl = semiconcavity_constant(u)
    diff = np.abs(d_minus - d_plus) <= 3 * dx * max(c_scl, 0.0)
    return SuperdiffInterval(d_plus, d_minus, diff)


def centered_derivative(u: GridFunction) -> np.ndarray:
    v = u.values
    return (np.roll(v, -1) - np.roll(v, 1)) / (2 * u.grid.dx)


# ---------------------------------------------------------------------------
# Hausdorff distance


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise DomainError(f"empty interval [{self.lo}, {self.hi}]")


def _as_intervals(S):
    if isinstance(S, Interval):
        return [S]
    if isinstance(S, (list, tuple)) and S and all(isinstance(s, Interval) for s in S):
        return list(S)
    return None


def _directed_1d(A, B):
    """sup over a in A of dist(a, B) for unions of intervals."""
    B = sorted(B, key=lambda s: s.lo)
    ends = np.array([[b.lo, b.hi] for b in B])

    def dist(t):
        return float(np.min(np.maximum(0.0, np.maximum(ends[:, 0] - t, t - ends[:, 1]))))

    worst = 0.0
    gaps = [(B[i].hi, B[i + 1].lo) for i in range(len(B) - 1) if B[i + 1].lo > B[i].hi]
    for a in A:
        probes = [a.lo, a.hi]
        for g0, g1 in gaps:
            m = 0.5 * (g0 + g1)
            if a.lo <= m <= a.hi:
                probes.append(m)
        worst = max(worst, max(dist(t) for t in probes))
    return worst


def hausdorff_distance(A, B) -> float:
    """Hausdorff distance between two nonempty compact sets.

    Sets are either point clouds (arrays of shape ``(m,)`` or ``(m, d)``) or,
    on the line, an ``Interval`` or a list of intervals. Points and intervals
    can be mixed on the line.
    """
    IA, IB = _as_intervals(A), _as_intervals(B)
    if IA is not None or IB is not None:
        if IA is None:
            IA = [Interval(float(a), float(a)) for a in np.asarray(A, dtype=float).ravel()]
        if IB is None:
            IB = [Interval(float(b), float(b)) for b in np.asarray(B, dtype=float).ravel()]
        if not IA or not IB:
            raise DomainError("Hausdorff distance of an empty set")
        return max(_directed_1d(IA, IB), _directed_1d(IB, IA))
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.size == 0 or B.size == 0:
        raise DomainError("Hausdorff distance of an empty set")
    A = A.reshape(len(A), -1) if A.ndim > 0 else A.reshape(1, 1)
    B = B.reshape(len(B), -1) if B.ndim > 0 else B.reshape(1, 1)
    dab = cKDTree(B).query(A)[0].max()
    dba = cKDTree(A).query(B)[0].max()
    return float(max(dab, dba))


# ---------------------------------------------------------------------------
# convergence measurement


@dataclass
class ErrorCurves:
    times: np.ndarray
    c0: np.ndarray
    w1inf: np.ndarray


def error_curves(snapshots, u_ref: GridFunction, mode: str = "hausdorff") -> ErrorCurves:
    """C0 and W^{1,inf} distances of snapshots ``[(t, U)]`` to ``u_ref``.

    The gradient part is the sup over x of a distance between the
    superdifferential interval of ``U`` and the derivative of ``u_ref``:
    ``mode="hausdorff"`` compares with the superdifferential interval of
    ``u_ref`` (exactly zero when ``U = u_ref``), ``mode="singleton"`` with its
    centered difference, which leaves an ``O(dx |u_ref''|)`` floor.
    """
    if mode not in ("hausdorff", "singleton"):
        raise DomainError(f"unknown error mode {mode!r}")
    ref_sd = superdifferential(u_ref)
    dref = centered_derivative(u_ref)
    times, c0, w1 = [], [], []
    for t, U in snapshots:
        if U.grid != u_ref.grid:
            raise DomainError("snapshot and reference grids differ")
        e0 = float(np.max(np.abs(U.values - u_ref.values)))
        sd = superdifferential(U)
        if mode == "singleton":
            g = np.maximum(np.abs(sd.lower - dref), np.abs(sd.upper - dref))
        else:
            g = np.maximum(np.abs(sd.lower - ref_sd.lower), np.abs(sd.upper - ref_sd.upper))
        times.append(t)
        c0.append(e0)
        w1.append(e0 + float(np.max(g)))
    return ErrorCurves(np.asarray(times, float), np.asarray(c0), np.asarray(w1))


class FloorOnlyError(DomainError):
    """Every sample of an error curve sits on the discretization floor."""


@dataclass
class RateFit:
    times: np.ndarray
    errors: np.ndarray
    fitted_log_intercept: float
    fitted_rate: float
    r_squared: float
    floor_time: float

    @property
    def C(self) -> float:
        return math.exp(self.fitted_log_intercept)


def detect_floor(times, errors, flat: float = 0.01, margin: float = 100.0) -> float:
    """Start of the discretization floor of an error curve (``inf`` if none is reached).

    The floor is flagged once the log-error changes by less than ``flat`` over
    one unit of time; its level is the median error from there on. The
    returned time is the first sample within ``margin`` of that level, so the
    bend into the floor is excluded from rate fits too.
    """
    t = np.asarray(times, float)
    e = np.asarray(errors, float)
    le = np.log(e)
    for i in range(len(t)):
        j = np.searchsorted(t, t[i] + 1.0 - 1e-12)
        if j >= len(t):
            break
        if abs(le[j] - le[i]) < flat:
            level = float(np.median(e[i:]))
            near = np.flatnonzero(e <= margin * level)
            return float(t[near[0]])
    return math.inf


def fit_rate(times, errors, min_samples: int = 5) -> RateFit:
    """Least-squares fit of ``log e(t) = log C - rate t`` over the pre-floor window."""
    t = np.asarray(times, float)
    e = np.asarray(errors, float)
    if t.shape != e.shape or t.ndim != 1:
        raise DomainError("times and errors must be matching 1-d arrays")
    if np.any(~(e > 0)):
        raise DomainError("errors must be positive")
    order = np.argsort(t)
    t, e = t[order], e[order]
    floor = detect_floor(t, e)
    m = t < floor
    if m.sum() < min_samples:
        raise FloorOnlyError(f"only {m.sum()} samples above the floor (floor at t = {floor})")
    tt, le = t[m], np.log(e[m])
    slope, intercept = np.polyfit(tt, le, 1)
    pred = intercept + slope * tt
    ss_res = float(np.sum((le - pred) ** 2))
    ss_tot = float(np.sum((le - le.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return RateFit(t, e, float(intercept), float(-slope), min(max(r2, 0.0), 1.0), floor)


# ---------------------------------------------------------------------------
# invariant graphs


def _graph_and_derivative(P, period, n_samples):
    """Sample points, values and derivatives of a one-dimensional graph."""
    if isinstance(P, TrigPoly):
        x = np.arange(n_samples) * (P.period / n_samples)
        return x, P(x), P(x, 1)
    if isinstance(P, GridFunction):
        return P.grid.x, P.values, centered_derivative(P)
    if isinstance(P, tuple) and len(P) == 2 and all(callable(f) for f in P):
        x = np.arange(n_samples) * (period / n_samples)
        return x, np.asarray(P[0](x), float), np.asarray(P[1](x), float)
    if callable(P):
        x = np.arange(n_samples) * (period / n_samples)
        h = 1e-6 * period
        return x, np.asarray(P(x), float), (np.asarray(P(x + h)) - np.asarray(P(x - h))) / (2 * h)
    raise DomainError("graph must be a TrigPoly, GridFunction, callable or (P, dP) pair")


def exactness_constant(P, period: float = 2 * math.pi, n_samples: int = 1024, n: int = 1) -> np.ndarray:
    """Cohomology class ``c_i = (1/period) * integral of P_i along cycle i`` (trapezoid rule).

    For ``n = 2`` ``P`` is a callable mapping points of shape ``(m, 2)`` to
    covectors of shape ``(m, 2)``; cycle i runs along axis i through the origin.
    """
    if n == 1:
        if isinstance(P, TrigPoly):
            period = P.period
        if isinstance(P, GridFunction):
            return np.array([float(np.mean(P.values))])
        s = np.arange(n_samples) * (period / n_samples)
        vals = P(s) if callable(P) else np.asarray(P, float)
        return np.array([float(np.mean(vals))])
    if n == 2:
        s = np.arange(n_samples) * (period / n_samples)
        out = []
        for i in range(2):
            pts = np.zeros((n_samples, 2))
            pts[:, i] = s
            out.append(float(np.mean(np.asarray(P(pts))[:, i])))
        return np.asarray(out)
    raise DomainError("exactness_constant supports n = 1 or 2")


def kam_invariance_residual(sys: DampedSystem, P, n_samples: int = 1024) -> float:
    """``sup_x |-H_x(x, P) - lam P - P'(x) H_p(x, P)|``: zero exactly on invariant graphs."""
    if sys.n != 1:
        raise DomainError("invariance residual is implemented for n = 1")
    x, p, dp = _graph_and_derivative(P, sys.period, n_samples)
    h = sys.hamiltonian
    X, Pc = x[:, None], p[:, None]
    lhs = -h.H_x(X, Pc)[:, 0] - sys.lam * p
    rhs = dp * h.H_p(X, Pc)[:, 0]
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# residuals of stationary solutions


@dataclass
class ResidualReport:
    stationary_residual: float
    n_differentiable: int
    calibration_defect: Optional[float] = None
    domination_margins: Optional[np.ndarray] = None
    domination_holds: Optional[bool] = None


def stationary_residual(u: GridFunction, sys: DampedSystem) -> tuple:
    """``sup |lam u + H(x, du)|`` over differentiable grid points (centered differences)."""
    sd = superdifferential(u)
    du = centered_derivative(u)
    x = u.grid.x
    r = np.abs(sys.lam * u.values + sys.hamiltonian.H(x[:, None], du[:, None]))
    mask = sd.differentiable
    if not np.any(mask):
        return math.inf, 0
    return float(np.max(r[mask])), int(mask.sum())


def calibration_defect(u: GridFunction, sys: DampedSystem, curve: CharacteristicCurve) -> float:
    """``|u(gamma(0)) - exp(-lam T) u(gamma(-T)) - discounted action|``."""
    T = -curve.times[-1]
    lhs = float(u(curve.positions[0])) - math.exp(-sys.lam * T) * float(u(curve.positions[-1]))
    return abs(lhs - curve.discounted_action())


def domination_margins(u: GridFunction, sys: DampedSystem, n_curves: int = 50, T: float = 2.0,
                       n_quad: int = 2001, seed: int = 0) -> np.ndarray:
    """Margins ``action - [u(eta(0)) - exp(-lam T) u(eta(-T))]`` over random smooth curves.

    Each curve is ``eta(s) = x0 + v s + A sin(k s + phi)`` on ``[-T, 0]``; the
    action is integrated with Simpson's rule. Domination means every margin is
    non-negative (up to the discretization error of ``u``).
    """
    from scipy.integrate import simpson

    rng = np.random.default_rng(seed)
    s = np.linspace(-T, 0.0, n_quad)
    out = np.empty(n_curves)
    for i in range(n_curves):
        x0 = rng.uniform(0, sys.period)
        v = rng.uniform(-4, 4)
        A = rng.uniform(0, 0.5)
        k = rng.uniform(0.5, 3.0)
        phi = rng.uniform(0, 2 * math.pi)
        eta = x0 + v * s + A * (np.sin(k * s + phi) - math.sin(phi))
        deta = v + A * k * np.cos(k * s + phi)
        L = sys.hamiltonian.lagrangian(eta[:, None], deta[:, None])
        action = simpson(np.exp(sys.lam * s) * L, x=s)
        out[i] = action - (float(u(eta[-1])) - math.exp(-sys.lam * T) * float(u(eta[0])))
    return out


def residual_checks(u: GridFunction, sys: DampedSystem, curve: Optional[CharacteristicCurve] = None,
                    n_comparison: int = 50, domination_tol: float = 1e-2, seed: int = 0) -> ResidualReport:
    res, count = stationary_residual(u, sys)
    report = ResidualReport(res, count)
    if curve is not None:
        report.calibration_defect = calibration_defect(u, sys, curve)
        T = -float(curve.times[-1])
        margins = domination_margins(u, sys, n_comparison, T=T, seed=seed)
        report.domination_margins = margins
        report.domination_holds = bool(np.all(margins >= -domination_tol))
    return report


class SubstituteLagrangianProbe:
    """Shifted Lagrangians built from a reference solution ``u``.

    ``l(x, w) = L(x, w) - lam u(x) - w u'(x)`` and
    ``F(x, w) = l(x, w) + H(x, u'(x)) + lam u(x) = L(x, w) + H(x, u') - w u'``,
    which is non-negative by the Fenchel inequality and vanishes exactly at
    ``w = H_p(x, u'(x))``.
    """

    def __init__(self, u: GridFunction, sys: DampedSystem):
        self.u = u
        self.sys = sys
        self._du = GridFunction(u.grid, centered_derivative(u))

    def du(self, x):
        return self._du(x)

    def l(self, x, w):
        x, w = np.broadcast_arrays(np.asarray(x, float), np.asarray(w, float))
        L = self.sys.hamiltonian.lagrangian(x[..., None], w[..., None])
        return L - self.sys.lam * self.u(x) - w * self.du(x)

    def F(self, x, w):
        x, w = np.broadcast_arrays(np.asarray(x, float), np.asarray(w, float))
        H = self.sys.hamiltonian.H(x[..., None], self.du(x)[..., None])
        return self.l(x, w) + H + self.sys.lam * self.u(x)

    def discounted_integral(self, curve: CharacteristicCurve) -> float:
        """Discounted integral of ``l`` along a characteristic (midpoint rule per step)."""
        mids = 0.5 * (curve.positions[:-1] + curve.positions[1:])
        disc = np.exp(self.sys.lam * curve.times[:-1])
        return float(curve.weight * np.sum(disc * self.l(mids, curve.velocities)))
