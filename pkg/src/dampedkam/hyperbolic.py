"""Tangent dynamics along an invariant graph torus (n = 1).

The torus ``x -> (x, P(x))`` is parametrized by ``x`` itself. Time-1 transport
is read off the actual flow: the landing point defines the circle map
``phi``, and the tangent ``T(x) = (1, P'(x))`` is carried to
``phi'(x) T(phi(x))``. In the moving frame ``M = (T | V)`` with
``V = J^T T / |T|^2`` (so ``det M = 1``) the monodromy is upper triangular,

    D Phi^1 M(x) = M(phi(x)) [[phi'(x), S(x)], [0, m(x)]],   m = e^{-lam} / phi',

and the stable bundle ``E^s = T B + V`` is invariant exactly when

    phi'(x) B(x) + S(x) = m(x) B(phi(x)).

For a rigid rotation ``phi(x) = x + omega`` this is
``-e^{-lam} B(x + omega) + S(x) + B(x) = 0``, solved here both in Fourier
space and by fixed-point iteration.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConsistencyError, DomainError
from .flow import DampedSystem, StepSpec, integrate
from .model import TWO_PI, TrigPoly

logger = logging.getLogger(__name__)

COHOMOLOGICAL_TOL = 1e-10


def _graph_with_derivative(P, period):
    """Return callables ``(P, P')`` for a TrigPoly, a ``(P, dP)`` pair or grid samples."""
    if isinstance(P, TrigPoly):
        return (lambda x: P(x)), (lambda x: P(x, 1))
    if isinstance(P, tuple) and len(P) == 2:
        return P
    values = getattr(P, "values", None)
    if values is not None:
        xs = np.append(P.grid.x, P.grid.period)
        cs = CubicSpline(xs, np.append(values, values[0]), bc_type="periodic")
        L = P.grid.period
        return (lambda x: cs(np.mod(x, L))), (lambda x: cs(np.mod(x, L), 1))
    if np.isscalar(P):
        c = float(P)
        return (lambda x: np.full(np.shape(x), c)), (lambda x: np.zeros(np.shape(x)))
    raise DomainError("torus graph must be a TrigPoly, a (P, dP) pair, grid samples or a constant")


def _periodic_spline(theta, values, period):
    return CubicSpline(np.append(theta, period), np.append(values, values[:1], axis=0), bc_type="periodic", axis=0)


@dataclass
class TorusSampling:
    """Samples of a graph torus ``K(theta) = (theta, P(theta))`` on a uniform grid."""

    theta: np.ndarray
    K: np.ndarray  # (N, 2)
    DK: np.ndarray  # (N, 2)
    omega: Optional[float]
    period: float
    P: object
    dP: object

    @property
    def N(self):
        return self.theta.size

    def tangent(self, x):
        x = np.asarray(x, float)
        return np.stack([np.ones_like(x), self.dP(x)], axis=-1)

    def frame(self, x):
        """``V = J^T T / |T|^2`` with ``J^T (a, b) = (-b, a)``."""
        T = self.tangent(x)
        return np.stack([-T[..., 1], T[..., 0]], axis=-1) / np.sum(T * T, axis=-1, keepdims=True)


def graph_torus(P, N: int = 256, period: float = TWO_PI, omega: Optional[float] = None) -> TorusSampling:
    """Sample the graph of ``P`` at ``N`` equally spaced phases."""
    if N < 8:
        raise DomainError("need at least 8 phases")
    f, df = _graph_with_derivative(P, period)
    theta = np.arange(N) * (period / N)
    K = np.stack([theta, np.asarray(f(theta), float)], axis=-1)
    DK = np.stack([np.ones(N), np.asarray(df(theta), float)], axis=-1)
    if not np.all(np.isfinite(K)) or not np.all(np.isfinite(DK)):
        raise DomainError("torus samples are not finite")
    return TorusSampling(theta, K, DK, omega, period, f, df)


@dataclass
class Monodromy:
    matrices: np.ndarray  # (N, 2, 2) time-1 tangent maps at K(theta)
    landing: np.ndarray  # (N,) lifted x-coordinate of Phi^1(K(theta))
    dphi: np.ndarray  # (N,) derivative of the circle map
    transport_residual: float
    position_residual: float
    det_residual: float  # max relative deviation of det from e^{-lam}

    @property
    def phi(self):
        return self.landing


def time1_monodromy(sys: DampedSystem, torus: TorusSampling, spec: StepSpec = StepSpec(),
                    max_residual: float = 1e-4) -> Monodromy:
    """Integrate the tangent flow for unit time from every torus sample.

    The transport residual is ``sup |D Phi^1 T(x) - phi'(x) T(phi(x))|`` where
    ``phi'(x)`` is the x-component of the transported tangent. A residual
    (tangential or positional) above ``max_residual`` raises
    ``ConsistencyError``: the input is not invariant enough to build the
    splitting on.
    """
    if sys.n != 1:
        raise DomainError("the splitting is implemented for n = 1")
    _, xs, ps, Ts, _ = integrate(sys, torus.K[:, :1], torus.K[:, 1:], 1.0, spec, tangent=True, record=False)
    D = Ts[-1]
    x1, p1 = xs[-1, :, 0], ps[-1, :, 0]
    moved = np.einsum("kij,kj->ki", D, torus.DK)
    dphi = moved[:, 0]
    target = dphi[:, None] * torus.tangent(x1)
    transport = float(np.max(np.linalg.norm(moved - target, axis=-1)))
    position = float(np.max(np.abs(p1 - torus.P(x1))))
    det_res = float(np.max(np.abs(np.linalg.det(D) * math.exp(sys.lam) - 1.0)))
    worst = max(transport, position)
    if worst > max_residual:
        raise ConsistencyError(f"torus not invariant enough: time-1 defect {worst:.3g} > {max_residual:.3g}")
    return Monodromy(D, x1, dphi, transport, position, det_res)


@dataclass
class CohomologicalSolution:
    B: np.ndarray
    B_iterative: np.ndarray
    discrepancy: float
    iterations: int


def _shift_factors(N, shift, period):
    """Fourier multipliers of ``theta -> theta + shift`` acting on real trigonometric interpolants."""
    k = np.fft.fftfreq(N, d=1.0 / N)
    rot = np.exp(2j * math.pi * k * shift / period)
    if N % 2 == 0:
        # the Nyquist mode interpolates as a cosine
        rot[N // 2] = math.cos(math.pi * N * shift / period)
    return rot


def _fourier_shift(values, shift, period):
    """Evaluate the trigonometric interpolant of periodic samples at ``theta + shift``."""
    return np.fft.ifft(np.fft.fft(values) * _shift_factors(values.size, shift, period)).real


def solve_cohomological(S, lam: float, omega: float, period: float = TWO_PI, tol: float = 1e-12,
                        max_iter: int = 100_000, agree_tol: float = COHOMOLOGICAL_TOL) -> CohomologicalSolution:
    """Solve ``-e^{-lam} B(theta + omega) + S(theta) + B(theta) = 0`` on a uniform grid.

    The Fourier solution ``B_k = -S_k / (1 - e^{-lam} e^{i k omega 2 pi / period})``
    is cross-checked against the iteration ``B <- e^{-lam} B(. + omega) - S``,
    with the shift applied exactly to the trigonometric interpolant. A
    disagreement above ``agree_tol`` raises ``ConsistencyError``.
    """
    if not lam > 0:
        raise DomainError("the cohomological equation needs lam > 0")
    S = np.asarray(S, dtype=float)
    if S.ndim != 1 or S.size < 2 or not np.all(np.isfinite(S)):
        raise DomainError("S must be a finite one-dimensional sample array")
    N = S.size
    q = math.exp(-lam)
    B_hat = -np.fft.fft(S) / (1.0 - q * _shift_factors(N, omega, period))
    B = np.fft.ifft(B_hat).real

    Bi = np.zeros(N)
    scale = max(1.0, float(np.max(np.abs(S))))
    it = 0
    for it in range(1, max_iter + 1):
        new = q * _fourier_shift(Bi, omega, period) - S
        change = float(np.max(np.abs(new - Bi)))
        Bi = new
        if change <= tol * scale:
            break
    disc = float(np.max(np.abs(B - Bi)))
    if disc > agree_tol * scale:
        raise ConsistencyError(f"spectral and iterative solutions differ by {disc:.3g}")
    return CohomologicalSolution(B, Bi, disc, it)


def solve_transported(S, dphi, phi, torus: TorusSampling, lam: float, tol: float = 1e-12,
                      max_iter: int = 10_000) -> np.ndarray:
    """Fixed point of ``B = (m B(phi) - S) / phi'`` with ``m = e^{-lam} / phi'``.

    ``B(phi)`` is read from the periodic cubic spline of the current iterate.
    The map contracts by ``e^{-lam}`` per unit time on average, so the
    iteration converges for every ``lam > 0``.
    """
    if not lam > 0:
        raise DomainError("the cohomological equation needs lam > 0")
    S = np.asarray(S, float)
    m = math.exp(-lam) / dphi
    B = np.zeros_like(S)
    scale = max(1.0, float(np.max(np.abs(S))))
    for _ in range(max_iter):
        Bphi = _periodic_spline(torus.theta, B, torus.period)(np.mod(phi, torus.period))
        new = (m * Bphi - S) / dphi
        change = float(np.max(np.abs(new - B)))
        B = new
        if change <= tol * scale:
            return B
    raise ConsistencyError("transported cohomological iteration did not settle")


@dataclass
class SplittingData:
    theta: np.ndarray
    DK: np.ndarray
    V: np.ndarray
    S: np.ndarray
    B: np.ndarray
    Es: np.ndarray
    frame_det_min: float
    monodromy: Monodromy
    rigid: bool
    spectral: Optional[CohomologicalSolution] = None


def _is_rigid(torus: TorusSampling, mono: Monodromy, tol=1e-9):
    if torus.omega is None:
        return False
    shift = mono.landing - torus.theta
    return bool(np.max(np.abs(shift - torus.omega)) <= tol and np.max(np.abs(mono.dphi - 1.0)) <= tol)


def compute_splitting(sys: DampedSystem, torus: TorusSampling, spec: StepSpec = StepSpec(),
                      mono: Optional[Monodromy] = None) -> SplittingData:
    """Frame, shear, cohomological solution and stable bundle along the torus."""
    if not sys.lam > 0:
        raise DomainError("the stable bundle needs lam > 0")
    if mono is None:
        mono = time1_monodromy(sys, torus, spec)
    x = torus.theta
    V = torus.frame(x)
    DPV = np.einsum("kij,kj->ki", mono.matrices, V)
    T1 = torus.tangent(mono.landing)
    S = np.sum(T1 * DPV, axis=-1) / np.sum(T1 * T1, axis=-1)
    det = torus.DK[:, 0] * V[:, 1] - torus.DK[:, 1] * V[:, 0]
    rigid = _is_rigid(torus, mono)
    spectral = None
    if rigid:
        spectral = solve_cohomological(S, sys.lam, torus.omega, torus.period)
        B = spectral.B
    else:
        B = solve_transported(S, mono.dphi, mono.landing, torus, sys.lam)
    Es = torus.DK * B[:, None] + V
    return SplittingData(x, torus.DK, V, S, B, Es, float(np.min(np.abs(det))), mono, rigid, spectral)


@dataclass
class SplittingReport:
    es_residual: float
    ec_residual: float
    mean_log_multiplier: float  # average of log m over the samples; equals -lam for rigid transport

    @property
    def multiplier(self):
        return math.exp(self.mean_log_multiplier)


def splitting_residual(sys: DampedSystem, torus: TorusSampling, B, mono: Optional[Monodromy] = None,
                       spec: StepSpec = StepSpec()) -> SplittingReport:
    """Invariance defect ``sup |D Phi^1 E^s(x) - m(x) E^s(phi(x))|`` of ``E^s = T B + V``.

    Sections carry a unit V-coefficient, so the defect is linear in errors of
    ``B``. The tangential defect of ``time1_monodromy`` is reported alongside.
    """
    if not sys.lam > 0:
        raise DomainError("the stable bundle needs lam > 0")
    if mono is None:
        mono = time1_monodromy(sys, torus, spec)
    B = np.asarray(B, float)
    x = torus.theta
    Es = torus.tangent(x) * B[:, None] + torus.frame(x)
    moved = np.einsum("kij,kj->ki", mono.matrices, Es)
    m = math.exp(-sys.lam) / mono.dphi
    y = mono.landing
    By = _periodic_spline(x, B, torus.period)(np.mod(y, torus.period))
    target = m[:, None] * (torus.tangent(y) * By[:, None] + torus.frame(y))
    es = float(np.max(np.linalg.norm(moved - target, axis=-1)))
    return SplittingReport(es, mono.transport_residual, float(np.mean(np.log(m))))


@dataclass(frozen=True)
class EnsembleSpec:
    n: int = 32
    delta0: float = 1e-4
    T: float = 15.0
    floor: float = 1e-10
    on_torus_tol: float = 1e-8
    step: StepSpec = StepSpec(sample_every=10)


@dataclass
class TransverseResult:
    exponent: float
    on_torus: bool
    times: np.ndarray
    mean_log_distance: np.ndarray
    fit_window: tuple


def transverse_exponent(sys: DampedSystem, torus: TorusSampling, ens: EnsembleSpec = EnsembleSpec()) -> TransverseResult:
    """Slope of the ensemble-mean log distance to the torus versus time.

    Seeds sit at equally spaced phases, displaced by ``delta0`` along the unit
    normal. The distance is ``|p - P(x)| / sqrt(1 + P'(x)^2)``. Samples below
    ``floor`` are excluded from the fit. With ``delta0 = 0`` the result is
    flagged ``on_torus`` when the distance stays under ``on_torus_tol``.
    """
    if ens.n < 1 or not ens.T > 0 or ens.delta0 < 0:
        raise DomainError("invalid ensemble specification")
    x0 = np.arange(ens.n) * (torus.period / ens.n)
    d0 = torus.dP(x0)
    nrm = np.sqrt(1.0 + d0 * d0)
    xs0 = x0 - ens.delta0 * d0 / nrm
    ps0 = torus.P(x0) + ens.delta0 / nrm
    times, xs, ps, _, escaped = integrate(sys, xs0[:, None], ps0[:, None], ens.T, ens.step, raise_on_escape=False)
    x, p = xs[..., 0], ps[..., 0]
    dist = np.abs(p - torus.P(x)) / np.sqrt(1.0 + torus.dP(x) ** 2)
    if ens.delta0 == 0 or np.max(dist) <= ens.on_torus_tol:
        on = bool(np.max(dist) <= ens.on_torus_tol)
        return TransverseResult(float("nan"), on, times, np.full(times.size, -np.inf), (0.0, 0.0))
    dist = dist[:, ~escaped]
    mean_log = np.mean(np.log(np.maximum(dist, 1e-300)), axis=1)
    above = np.all(dist > ens.floor, axis=1)
    stop = int(np.argmin(above)) if not above.all() else above.size
    if stop < 3:
        raise DomainError("distance reached the floor before three samples were taken")
    t, y = times[:stop], mean_log[:stop]
    slope = float(np.polyfit(t, y, 1)[0])
    if slope > 0:
        warnings.warn(f"ensemble moves away from the torus (exponent {slope:.3g})", RuntimeWarning)
    return TransverseResult(slope, False, times, mean_log, (float(t[0]), float(t[-1])))
