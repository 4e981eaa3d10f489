"""Hamiltonians, Lagrangians and the Legendre transform on the torus.

Points are arrays whose trailing axis has length ``n`` (the torus dimension);
all evaluations broadcast over the leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConvergenceError, DomainError

TWO_PI = 2.0 * math.pi
SQRT2 = math.sqrt(2.0)

#: Damping index used by every registered example.
EXAMPLE_LAMBDA = 1.0 / SQRT2


def _as_points(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.shape[-1] != n:
        raise DomainError(f"expected trailing dimension {n}, got shape {a.shape}")
    return a


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise DomainError("non-finite input")


@dataclass(frozen=True)
class TrigPoly:
    """Real trigonometric polynomial on a circle of circumference ``period``.

    ``cos_coeffs[k]`` multiplies ``cos(2*pi*k*x/period)`` for k = 0..degree (so
    index 0 is the constant term) and ``sin_coeffs[k-1]`` multiplies the sine of
    harmonic k.
    """

    cos_coeffs: tuple = (0.0,)
    sin_coeffs: tuple = ()
    period: float = TWO_PI

    def __post_init__(self):
        object.__setattr__(self, "cos_coeffs", tuple(float(c) for c in self.cos_coeffs) or (0.0,))
        object.__setattr__(self, "sin_coeffs", tuple(float(c) for c in self.sin_coeffs))
        if not self.period > 0:
            raise DomainError("period must be positive")

    @property
    def degree(self) -> int:
        return max(len(self.cos_coeffs) - 1, len(self.sin_coeffs))

    def coefficient_arrays(self):
        """Return ``(a, b)`` of length degree+1 with ``b[0] = 0``."""
        k = self.degree + 1
        a = np.zeros(k)
        b = np.zeros(k)
        a[: len(self.cos_coeffs)] = self.cos_coeffs
        b[1 : len(self.sin_coeffs) + 1] = self.sin_coeffs
        return a, b

    def __call__(self, x, deriv: int = 0):
        """Evaluate the ``deriv``-th derivative at ``x`` (any shape)."""
        x = np.asarray(x, dtype=float)
        a, b = self.coefficient_arrays()
        kappa = TWO_PI / self.period
        k = np.arange(a.size)
        w = kappa * k
        phase = np.multiply.outer(x, w) + deriv * math.pi / 2
        scale = w**deriv if deriv else np.ones_like(w)
        return np.cos(phase) @ (a * scale) + np.sin(phase) @ (b * scale)

    def deriv(self, x, order: int = 1):
        return self(x, deriv=order)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = TrigPoly((other,), (), self.period)
        if not math.isclose(other.period, self.period):
            raise DomainError("cannot add trig polynomials of different periods")
        a1, b1 = self.coefficient_arrays()
        a2, b2 = other.coefficient_arrays()
        m = max(a1.size, a2.size)
        a = np.zeros(m)
        b = np.zeros(m)
        a[: a1.size] += a1
        a[: a2.size] += a2
        b[: b1.size] += b1
        b[: b2.size] += b2
        return TrigPoly(tuple(a), tuple(b[1:]), self.period)

    __radd__ = __add__

    def __mul__(self, s):
        return TrigPoly(tuple(s * c for c in self.cos_coeffs), tuple(s * c for c in self.sin_coeffs), self.period)

    __rmul__ = __mul__

    def to_dict(self) -> dict:
        return {"period": self.period, "cos": list(self.cos_coeffs), "sin": list(self.sin_coeffs)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrigPoly":
        unknown = set(d) - {"period", "cos", "sin"}
        if unknown:
            raise DomainError(f"unknown trig-poly keys: {sorted(unknown)}")
        return cls(tuple(d.get("cos", (0.0,))), tuple(d.get("sin", ())), float(d.get("period", TWO_PI)))


class Hamiltonian:
    """Interface for Hamiltonians ``H(x, p)`` on the cotangent bundle of the n-torus.

    Subclasses provide ``H``, ``H_x``, ``H_p`` and ``H_pp``. The second
    derivatives ``H_xx`` and ``H_xp`` (``H_xp[..., i, j] = d2H/dx_i dp_j``)
    default to central differences of the first derivatives; they are only
    needed by the tangent flow.
    """

    n: int = 1
    period: float = TWO_PI
    #: False for the degenerate test systems that violate convexity in p.
    tonelli: bool = True
    _fd_step = 1e-5

    def H(self, x, p):
        raise NotImplementedError

    def H_x(self, x, p):
        raise NotImplementedError

    def H_p(self, x, p):
        raise NotImplementedError

    def H_pp(self, x, p):
        raise NotImplementedError

    def _fd_x(self, f, x, p):
        x = np.asarray(x, dtype=float)
        h = self._fd_step
        cols = []
        for i in range(self.n):
            e = np.zeros(self.n)
            e[i] = h
            cols.append((f(x + e, p) - f(x - e, p)) / (2 * h))
        return np.stack(cols, axis=-2)

    def H_xx(self, x, p):
        return self._fd_x(self.H_x, x, p)

    def H_xp(self, x, p):
        return self._fd_x(self.H_p, x, p)

    def lagrangian(self, x, v):
        """L(x, v) = max_p <p, v> - H(x, p), by the numeric Legendre solve."""
        return legendre_transform(self, x, v, method="numeric").value

    def reduce(self, x):
        return np.mod(x, self.period)


@dataclass(frozen=True, eq=False)
class MechanicalHamiltonian(Hamiltonian):
    """``H(x, p) = |p + d|^2 / 2 + V(x) + offset`` with a trigonometric potential.

    For n > 1 the potential is the separable sum ``V(x) = sum_i V_i(x_i)``.
    """

    drift: tuple = (0.0,)
    potentials: tuple = (TrigPoly(),)
    offset: float = 0.0

    def __post_init__(self):
        drift = tuple(float(d) for d in np.atleast_1d(self.drift))
        pots = self.potentials
        if isinstance(pots, TrigPoly):
            pots = (pots,)
        pots = tuple(pots)
        if len(pots) != len(drift):
            raise DomainError("need one potential per coordinate")
        periods = {p.period for p in pots}
        if len(periods) != 1:
            raise DomainError("all potentials must share one period")
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "potentials", pots)
        object.__setattr__(self, "offset", float(self.offset))

    @property
    def n(self):
        return len(self.drift)

    @property
    def period(self):
        return self.potentials[0].period

    @property
    def d(self):
        return np.asarray(self.drift)

    def V(self, x, deriv=0):
        x = _as_points(x, self.n)
        if deriv == 0:
            return sum(V(x[..., i]) for i, V in enumerate(self.potentials))
        return np.stack([V(x[..., i], deriv) for i, V in enumerate(self.potentials)], axis=-1)

    def H(self, x, p):
        p = _as_points(p, self.n)
        q = p + self.d
        return 0.5 * np.sum(q * q, axis=-1) + self.V(x) + self.offset

    def H_x(self, x, p):
        return self.V(x, 1) + 0.0 * np.asarray(p)

    def H_p(self, x, p):
        return _as_points(p, self.n) + self.d + 0.0 * np.asarray(x)

    def H_pp(self, x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.broadcast_to(np.eye(self.n), shape + (self.n, self.n)).copy()

    def H_xx(self, x, p):
        vxx = self.V(x, 2)
        out = vxx[..., :, None] * np.eye(self.n)
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.broadcast_to(out, shape + (self.n, self.n)).copy()

    def H_xp(self, x, p):
        shape = np.broadcast_shapes(np.shape(x), np.shape(p))[:-1]
        return np.zeros(shape + (self.n, self.n))

    def lagrangian(self, x, v):
        v = _as_points(v, self.n)
        return 0.5 * np.sum(v * v, axis=-1) - v @ self.d - self.V(x) - self.offset

    def shifted(self, c: float) -> "MechanicalHamiltonian":
        return MechanicalHamiltonian(self.drift, self.potentials, self.offset + c)

    def perturbed(self, eps: float, potentials) -> "MechanicalHamiltonian":
        """``H + eps * W`` for a potential-only perturbation ``W``."""
        if isinstance(potentials, TrigPoly):
            potentials = (potentials,)
        pots = tuple(V + eps * W for V, W in zip(self.potentials, potentials))
        return MechanicalHamiltonian(self.drift, pots, self.offset)

    def to_dict(self) -> dict:
        pot = self.potentials[0].to_dict() if self.n == 1 else [V.to_dict() for V in self.potentials]
        return {"kind": "mechanical", "n": self.n, "drift": list(self.drift), "potential": pot, "offset": self.offset}


class CallableHamiltonian(Hamiltonian):
    """Generic Hamiltonian assembled from user callables."""

    def __init__(self, n, H, H_x, H_p, H_pp, H_xx=None, H_xp=None, tonelli=True, period=TWO_PI):
        self.n = n
        self.period = period
        self.tonelli = tonelli
        self._H, self._H_x, self._H_p, self._H_pp = H, H_x, H_p, H_pp
        self._H_xx, self._H_xp = H_xx, H_xp

    def H(self, x, p):
        return self._H(x, p)

    def H_x(self, x, p):
        return self._H_x(x, p)

    def H_p(self, x, p):
        return self._H_p(x, p)

    def H_pp(self, x, p):
        return self._H_pp(x, p)

    def H_xx(self, x, p):
        return self._H_xx(x, p) if self._H_xx else super().H_xx(x, p)

    def H_xp(self, x, p):
        return self._H_xp(x, p) if self._H_xp else super().H_xp(x, p)


class ShearRotation(Hamiltonian):
    """Test system ``H = omega0 * p + a(x) p^2 / 2`` (n = 1).

    The zero section is invariant and carries the rigid rotation ``x' = omega0``;
    with ``a = 0`` (``RigidRotation``) the damped flow decouples completely.
    """

    n = 1

    def __init__(self, omega0: float, a: Optional[TrigPoly] = None):
        self.omega0 = float(omega0)
        self.a = a if a is not None else TrigPoly((0.0,))
        self.period = self.a.period
        self.tonelli = bool(np.min(self.a(np.linspace(0, self.period, 257))) > 0)

    def H(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return (self.omega0 * p + 0.5 * self.a(x) * p * p)[..., 0]

    def H_x(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return 0.5 * self.a(x, 1) * p * p

    def H_p(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return self.omega0 + self.a(x) * p

    def H_pp(self, x, p):
        x, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(p, float))
        return self.a(x)[..., None]

    def H_xx(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return (0.5 * self.a(x, 2) * p * p)[..., None]

    def H_xp(self, x, p):
        x, p = np.asarray(x, float), np.asarray(p, float)
        return (self.a(x, 1) * p)[..., None]


class RigidRotation(ShearRotation):
    """Test system ``H = omega0 * p``: not Tonelli, used in test mode only."""

    def __init__(self, omega0: float):
        super().__init__(omega0, TrigPoly((0.0,)))
        self.tonelli = False


@dataclass(frozen=True)
class LagrangianValue:
    value: np.ndarray
    maximizer_p: np.ndarray


def eval_hamiltonian(h: Hamiltonian, x, p):
    """Return ``(H, H_x, H_p, H_pp)`` at ``(x, p)``; ``x`` is reduced modulo the period."""
    x = _as_points(x, h.n)
    p = _as_points(p, h.n)
    _check_finite(x, p)
    x = h.reduce(x)
    return h.H(x, p), h.H_x(x, p), h.H_p(x, p), h.H_pp(x, p)


def legendre_transform(h: Hamiltonian, x, v, method: str = "auto", max_iter: int = 100, tol: float = 1e-10):
    """Fenchel conjugate ``L(x, v) = max_p <p, v> - H(x, p)`` and its maximizer.

    ``method="auto"`` uses the closed form for mechanical Hamiltonians and a
    damped Newton solve of ``H_p(x, p) = v`` otherwise; ``"numeric"`` forces
    the Newton solve.
    """
    x = _as_points(x, h.n)
    v = _as_points(v, h.n)
    _check_finite(x, v)
    x, v = np.broadcast_arrays(x, v)
    if method == "auto" and isinstance(h, MechanicalHamiltonian):
        return LagrangianValue(h.lagrangian(x, v), v - h.d)
    if method not in ("auto", "numeric"):
        raise DomainError(f"unknown Legendre method {method!r}")

    p = v - h.d if isinstance(h, MechanicalHamiltonian) else np.zeros_like(v)
    r = h.H_p(x, p) - v
    res = np.linalg.norm(r, axis=-1)
    for _ in range(max_iter):
        if np.all(res <= tol):
            break
        try:
            step = np.linalg.solve(h.H_pp(x, p), r[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            worst = float(np.max(res))
            raise ConvergenceError(f"Legendre solve hit a singular H_pp (residual {worst:.3e})",
                                   residual=worst) from exc
        t = np.ones(res.shape)
        active = res > tol
        new_p = p.copy()
        new_res = res.copy()
        for _ in range(40):
            trial = p - t[..., None] * step
            trial_res = np.linalg.norm(h.H_p(x, trial) - v, axis=-1)
            ok = active & (trial_res < res) & ~np.isnan(trial_res)
            accept = ok & (new_res == res)
            new_p[accept] = trial[accept]
            new_res[accept] = trial_res[accept]
            pending = active & (new_res == res)
            if not np.any(pending):
                break
            t = np.where(pending, 0.5 * t, t)
        if np.array_equal(new_res, res):
            break
        p, res = new_p, new_res
        r = h.H_p(x, p) - v
    worst = float(np.max(res)) if res.size else 0.0
    if worst > tol:
        raise ConvergenceError(f"Legendre solve did not converge (residual {worst:.3e})", residual=worst)
    value = np.sum(p * v, axis=-1) - h.H(x, p)
    return LagrangianValue(value, p)


@dataclass
class TonelliReport:
    min_eigenvalue: float
    radii: list
    growth_ratios: list
    passed: bool


def tonelli_check(h: Hamiltonian, x_samples=None, radii: Sequence[float] = (1, 2, 4, 8, 16, 32), n_dirs: int = 16) -> TonelliReport:
    """Sample (H1) convexity and (H2) superlinear growth.

    The growth ratio at radius r is ``min over x, |e| = 1 of H(x, r e) / r``;
    the check passes iff the minimum eigenvalue of ``H_pp`` is positive and
    the growth ratios strictly increase over ``radii``.
    """
    if x_samples is None:
        g = np.linspace(0.0, h.period, 33)[:-1]
        grids = np.meshgrid(*([g] * h.n), indexing="ij")
        x_samples = np.stack([gi.ravel() for gi in grids], axis=-1)
    x = _as_points(x_samples, h.n)
    if h.n == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(n_dirs, h.n))
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    xs = np.repeat(x, len(dirs), axis=0)
    es = np.tile(dirs, (len(x), 1))
    min_eig = np.inf
    ratios = []
    for r in radii:
        p = r * es
        eig = np.linalg.eigvalsh(np.asarray(h.H_pp(xs, p)).reshape(-1, h.n, h.n))
        min_eig = min(min_eig, float(eig.min()))
        ratios.append(float(np.min(h.H(xs, p)) / r))
    # also probe convexity at the origin
    eig0 = np.linalg.eigvalsh(np.asarray(h.H_pp(x, np.zeros_like(x))).reshape(-1, h.n, h.n))
    min_eig = min(min_eig, float(eig0.min()))
    increasing = all(b > a for a, b in zip(ratios, ratios[1:]))
    return TonelliReport(min_eig, list(radii), ratios, bool(min_eig > 0 and increasing))


# ---------------------------------------------------------------------------
# example registry


def fig1() -> MechanicalHamiltonian:
    """``(p + 2)^2 / 2 - 2 sin x + cos x / sqrt2 + cos 2x / 4``; invariant torus ``p = sin x``."""
    return MechanicalHamiltonian((2.0,), (TrigPoly((0.0, 1 / SQRT2, 0.25), (-2.0,)),), 0.0)


def pendulum() -> MechanicalHamiltonian:
    """``p^2 / 2 + cos x - 1``."""
    return MechanicalHamiltonian((0.0,), (TrigPoly((-1.0, 1.0)),), 0.0)


def fig2(alpha: float) -> MechanicalHamiltonian:
    """The published one-parameter family, verbatim.

    ``(p + 2a)^2/2 + (cos x - 1) + a (3 - 2a + 2 sin x - cos x + cos x/sqrt2 - cos 2x/4)``.
    At ``a = 1`` this is not ``fig1`` (sin and cos 2x signs differ).
    """
    a = float(alpha)
    cos = (-1.0 + a * (3.0 - 2.0 * a), 1.0 + a * (-1.0 + 1 / SQRT2), -0.25 * a)
    return MechanicalHamiltonian((2.0 * a,), (TrigPoly(cos, (2.0 * a,)),), 0.0)


def fig2_interp(alpha: float) -> MechanicalHamiltonian:
    """Convex interpolation ``(1 - a) * pendulum + a * fig1``."""
    a = float(alpha)
    V = (1.0 - a) * pendulum().potentials[0] + a * fig1().potentials[0]
    return MechanicalHamiltonian((2.0 * a,), (V,), 2.0 * a - 2.0 * a * a)


REGISTRY: dict = {
    "fig1": fig1,
    "pendulum": pendulum,
    "fig2": fig2,
    "fig2_interp": fig2_interp,
}
FAMILIES = {"fig2", "fig2_interp"}


def get_example(name: str, alpha: Optional[float] = None) -> MechanicalHamiltonian:
    if name not in REGISTRY:
        raise DomainError(f"unknown example {name!r}; choose from {sorted(REGISTRY)}")
    if name in FAMILIES:
        if alpha is None:
            raise DomainError(f"example {name!r} needs alpha")
        return REGISTRY[name](alpha)
    return REGISTRY[name]()


def hamiltonian_from_dict(d: dict) -> MechanicalHamiltonian:
    """Build a Hamiltonian from its JSON description (``kind`` must be ``mechanical``)."""
    allowed = {"kind", "n", "drift", "potential", "offset"}
    unknown = set(d) - allowed
    if unknown:
        raise DomainError(f"unknown Hamiltonian keys: {sorted(unknown)}")
    if d.get("kind", "mechanical") != "mechanical":
        raise DomainError(f"unsupported Hamiltonian kind {d.get('kind')!r}")
    drift = tuple(d.get("drift", (0.0,)))
    n = int(d.get("n", len(drift)))
    if n != len(drift):
        raise DomainError("drift length does not match n")
    pot = d.get("potential", {})
    pots = tuple(TrigPoly.from_dict(pd) for pd in pot) if isinstance(pot, list) else (TrigPoly.from_dict(pot),) * n
    return MechanicalHamiltonian(drift, pots, float(d.get("offset", 0.0)))
