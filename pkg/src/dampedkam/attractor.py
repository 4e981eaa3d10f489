"""Attractor approximation, graph detection and bifurcation scans (n = 1).

Two ways of sampling an attractor are provided:

* ``evolve_cloud`` flows a rectangle of seeds and keeps the tail of every
  trajectory. It sees attracting sets but not the unstable manifolds of
  saddles, which only non-generic seeds approach.
* ``evolve_section`` flows a whole horizontal circle ``p = p0`` (a
  homologically non-trivial curve) and keeps its image, refining the curve
  wherever neighbouring points separate. The image cannot collapse onto a
  fixed point, so it converges to the invariant graph when one attracts it and
  otherwise wraps around saddles and their unstable manifolds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import hausdorff_distance
from .errors import DomainError
from .flow import DampedSystem, StepSpec, graph_evaluator, integrate
from .model import MechanicalHamiltonian

logger = logging.getLogger(__name__)

ATTRACTOR_STEP = StepSpec(dt=1e-2, method="auto", escape_radius=1e3, sample_every=10)


@dataclass(frozen=True)
class SeedSpec:
    """Rectangle of seeds ``x_range x p_range`` with ``nx * np_`` points.

    With ``around`` set (a graph ``P``), ``p_range`` is an offset band around
    ``P(x)`` instead of absolute momenta.
    """

    x_range: tuple = (0.0, 2 * math.pi)
    p_range: tuple = (-1.0, 1.0)
    nx: int = 32
    np_: int = 8
    around: Optional[object] = None

    def points(self, period: float):
        if self.nx < 1 or self.np_ < 1 or self.x_range[1] < self.x_range[0] or self.p_range[1] < self.p_range[0]:
            raise DomainError("empty seed rectangle")
        xs = np.linspace(*self.x_range, self.nx, endpoint=self.nx == 1 or not math.isclose(
            self.x_range[1] - self.x_range[0], period))
        ps = np.linspace(*self.p_range, self.np_) if self.np_ > 1 else np.array([0.5 * sum(self.p_range)])
        X, Pm = np.meshgrid(xs, ps, indexing="ij")
        X, Pm = X.ravel(), Pm.ravel()
        if self.around is not None:
            Pm = Pm + np.asarray(graph_evaluator(self.around, period)(X), float)
        return X, Pm


@dataclass
class AttractorCloud:
    points: np.ndarray  # (m, 2): lifted x, p
    T: float
    seed_spec: object
    excluded: int = 0

    def __post_init__(self):
        if len(self.points) == 0:
            raise DomainError("empty attractor cloud")


@dataclass
class GraphVerdict:
    is_graph: bool
    max_vertical_spread: float
    bins: int
    empty_bins: int
    spreads: np.ndarray


def evolve_cloud(sys: DampedSystem, seed_spec: SeedSpec, T: float = 30.0, spec: StepSpec = ATTRACTOR_STEP,
                 transient: float = 0.8) -> AttractorCloud:
    """Flow every seed for time ``T`` and keep the samples after ``transient * T``."""
    if sys.n != 1:
        raise DomainError("attractor tools are one-dimensional")
    if not T > 0:
        raise DomainError("T must be positive")
    X, P = seed_spec.points(sys.period)
    times, xs, ps, _, escaped = integrate(sys, X[:, None], P[:, None], T, spec, raise_on_escape=False)
    keep_t = times >= transient * T - 1e-12
    good = ~escaped
    pts = np.stack([xs[keep_t][:, good, 0].ravel(), ps[keep_t][:, good, 0].ravel()], axis=-1)
    if escaped.any():
        logger.info("excluded %d diverging seeds", int(escaped.sum()))
    return AttractorCloud(pts, T, seed_spec, int(escaped.sum()))


@dataclass(frozen=True)
class SectionSpec:
    """Initial circle ``p = p0`` sampled at ``n_init`` points, refined to spacing ``h_max``.

    ``p0`` should lie above every invariant set of interest: the image of such
    a circle converges to the upper boundary of the global attractor, which is
    the attracting invariant graph whenever one exists. The default spacing
    keeps roughly five points in each of 128 bins on a period of ``2*pi``.
    """

    p0: float = 3.0
    n_init: int = 256
    h_max: float = 0.01
    chunk: float = 0.5
    max_points: int = 400_000


def _segment_lengths(x, p, period):
    dx = np.diff(np.append(x, x[0] + period))
    dp = np.diff(np.append(p, p[0]))
    return np.hypot(dx, dp)


def evolve_section(sys: DampedSystem, T: float = 30.0, section: SectionSpec = SectionSpec(),
                   spec: StepSpec = ATTRACTOR_STEP) -> AttractorCloud:
    """Image of the circle ``p = p0`` under the flow for time ``T``, adaptively refined.

    The curve is kept as an ordered, closed (modulo one period in x) polygon.
    After each chunk of time, segments longer than ``h_max`` receive a new
    point: the midpoint of the segment's position one chunk earlier, flowed
    over the chunk.
    """
    if sys.n != 1:
        raise DomainError("attractor tools are one-dimensional")
    L = sys.period
    x = np.arange(section.n_init) * (L / section.n_init)
    p = np.full_like(x, section.p0)
    n_chunks = max(1, int(math.ceil(T / section.chunk - 1e-9)))
    dtau = T / n_chunks
    chunk_spec = StepSpec(spec.dt, spec.method, spec.escape_radius)

    def advance(x0, p0):
        _, xs, ps, _, esc = integrate(sys, x0[:, None], p0[:, None], dtau, chunk_spec,
                                      record=False, raise_on_escape=False)
        return xs[-1, :, 0], ps[-1, :, 0], esc

    excluded = 0
    for _ in range(n_chunks):
        px, pp = x.copy(), p.copy()
        x, p, esc = advance(px, pp)
        if esc.any():
            excluded += int(esc.sum())
            keep = ~esc
            x, p, px, pp = x[keep], p[keep], px[keep], pp[keep]
        for _ in range(60):
            seg = _segment_lengths(x, p, L)
            long = np.flatnonzero(seg > section.h_max)
            if long.size == 0:
                break
            if x.size + long.size > section.max_points:
                logger.warning("section refinement capped at %d points", section.max_points)
                break
            nxt = (long + 1) % x.size
            wrap = (nxt == 0).astype(float) * L
            mx = 0.5 * (px[long] + px[nxt] + wrap)
            mp = 0.5 * (pp[long] + pp[nxt])
            nx_, np_, esc = advance(mx, mp)
            ins = long + 1
            # points inserted on the closing segment go to the end; keep lifted x monotone there
            x = np.insert(x, ins, nx_)
            p = np.insert(p, ins, np_)
            px = np.insert(px, ins, mx)
            pp = np.insert(pp, ins, mp)
            if esc.any():
                excluded += int(esc.sum())
    pts = np.stack([x, p], axis=-1)
    return AttractorCloud(pts, T, section, excluded)


def graph_test(cloud: AttractorCloud, bins: int = 128, graph_tol: float = 1e-2, period: float = 2 * math.pi) -> GraphVerdict:
    """Is the cloud the graph of a function of x (to ``graph_tol``)?

    Points are binned by ``x mod period``. Within a bin holding at least three
    points a least-squares line is removed first, so a sloped graph has spread
    of order ``bin_width^2 |P''|`` instead of ``bin_width |P'|``; bins with one
    or two points use the raw range of p.
    """
    if bins < 32:
        raise DomainError("need at least 32 bins")
    pts = np.asarray(cloud.points, float)
    x = np.mod(pts[:, 0], period)
    p = pts[:, 1]
    idx = np.minimum((x / period * bins).astype(int), bins - 1)
    order = np.argsort(idx, kind="stable")
    idx, x, p = idx[order], x[order], p[order]
    starts = np.searchsorted(idx, np.arange(bins))
    ends = np.searchsorted(idx, np.arange(bins), side="right")
    spreads = np.full(bins, np.nan)
    for b in range(bins):
        s, e = starts[b], ends[b]
        if e == s:
            continue
        xb, pb = x[s:e], p[s:e]
        if e - s >= 3 and np.ptp(xb) > 0:
            xc = xb - xb.mean()
            slope = np.dot(xc, pb - pb.mean()) / np.dot(xc, xc)
            r = pb - slope * xc
            spreads[b] = np.ptp(r)
        else:
            spreads[b] = np.ptp(pb)
    empty = int(np.isnan(spreads).sum())
    if empty == bins:
        raise DomainError("all bins empty")
    worst = float(np.nanmax(spreads))
    return GraphVerdict(worst <= graph_tol, worst, bins, empty, spreads)


def cloud_exactness(cloud: AttractorCloud, period: float = 2 * math.pi) -> float:
    """``(1/period) * closed integral of p dx`` over a graph-like cloud.

    Points are sorted by ``x mod period`` and integrated with the trapezoid
    rule, closing the loop across the period.
    """
    x = np.mod(cloud.points[:, 0], period)
    p = cloud.points[:, 1]
    o = np.argsort(x)
    x, p = x[o], p[o]
    xs = np.append(x, x[0] + period)
    ps = np.append(p, p[0])
    return float(np.sum(0.5 * (ps[1:] + ps[:-1]) * np.diff(xs)) / period)


def graph_distance(cloud: AttractorCloud, P, period: float = 2 * math.pi, n_graph: int = 4096) -> float:
    """Hausdorff distance between the cloud and ``graph(P)`` on the cylinder."""
    g = np.arange(n_graph) * (period / n_graph)
    G = np.stack([g, np.asarray(graph_evaluator(P, period)(g), float)], axis=-1)
    C = np.stack([np.mod(cloud.points[:, 0], period), cloud.points[:, 1]], axis=-1)
    # replicate the graph one period left and right so distances wrap
    Gw = np.concatenate([G - [period, 0], G, G + [period, 0]])
    from scipy.spatial import cKDTree

    d_cg = cKDTree(Gw).query(C)[0].max()
    Cw = np.concatenate([C - [period, 0], C, C + [period, 0]])
    d_gc = cKDTree(Cw).query(G)[0].max()
    return float(max(d_cg, d_gc))


# ---------------------------------------------------------------------------
# bifurcation scan


@dataclass(frozen=True)
class ScanSpec:
    coarse: int = 11
    depth: int = 10
    T: float = 30.0
    bins: int = 128
    graph_tol: float = 1e-2
    method: str = "section"
    section: SectionSpec = SectionSpec()
    seeds: SeedSpec = SeedSpec()
    step: StepSpec = ATTRACTOR_STEP
    T_overrides: tuple = ()  # ((alpha_lo, alpha_hi, T), ...)

    def horizon(self, alpha: float) -> float:
        for lo, hi, T in self.T_overrides:
            if lo <= alpha <= hi:
                return T
        return self.T


@dataclass
class ScanRow:
    alpha: float
    is_graph: bool
    spread: float


@dataclass
class ScanResult:
    alpha_star: Optional[float]
    bracket: Optional[tuple]
    rows: list
    verdict_low: Optional[bool] = None
    verdict_high: Optional[bool] = None
    message: str = ""


def attractor_verdict(sys: DampedSystem, scan: ScanSpec, T: float) -> GraphVerdict:
    if scan.method == "section":
        cloud = evolve_section(sys, T, scan.section, scan.step)
    elif scan.method == "cloud":
        cloud = evolve_cloud(sys, scan.seeds, T, scan.step)
    else:
        raise DomainError(f"unknown scan method {scan.method!r}")
    return graph_test(cloud, scan.bins, scan.graph_tol, sys.period)


def bifurcation_scan(family: Callable[[float], DampedSystem], alpha_range=(0.0, 1.0),
                     scan: ScanSpec = ScanSpec()) -> ScanResult:
    """Locate the parameter where the attractor stops (or starts) being a graph.

    A coarse scan of graph verdicts is followed by bisection between the last
    non-graph parameter and the next graph one (or the reverse if the family
    loses the graph as alpha grows), until the bracket is at most
    ``2**-depth`` times the range.
    """
    a0, a1 = map(float, alpha_range)
    rows = []

    def verdict(a):
        v = attractor_verdict(family(a), scan, scan.horizon(a))
        g = bool(v.is_graph)
        rows.append(ScanRow(float(a), g, float(v.max_vertical_spread)))
        logger.info("alpha = %.6f  graph = %s  spread = %.3e", a, g, v.max_vertical_spread)
        return g

    grid = np.linspace(a0, a1, scan.coarse)
    verdicts = [verdict(a) for a in grid]
    lo = hi = None
    non_graph = [i for i, v in enumerate(verdicts) if not v]
    if non_graph and non_graph[-1] + 1 < len(grid):
        i = non_graph[-1]
        lo, hi = grid[i], grid[i + 1]
    else:
        graph_idx = [i for i, v in enumerate(verdicts) if v]
        if graph_idx and non_graph and graph_idx[-1] + 1 < len(grid):
            i = graph_idx[-1]
            lo, hi = grid[i], grid[i + 1]
    if lo is None:
        return ScanResult(None, None, rows, verdicts[0], verdicts[-1], "no bifurcation in range")
    v_lo = verdicts[list(grid).index(lo)]
    width = (a1 - a0) * 2.0**-scan.depth
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if verdict(mid) == v_lo:
            lo = mid
        else:
            hi = mid
    rows.sort(key=lambda r: r.alpha)
    return ScanResult(float(0.5 * (lo + hi)), (float(lo), float(hi)), rows, verdicts[0], verdicts[-1], "ok")


# ---------------------------------------------------------------------------
# persistence under perturbation


@dataclass
class PerturbationReport:
    eps: float
    is_graph: bool
    spread: float
    exactness: float
    distance: float
    excluded: int


def perturbation_test(sys: DampedSystem, perturbation, eps_list: Sequence[float], P0, T: float = 30.0,
                      seeds: Optional[SeedSpec] = None, spec: StepSpec = ATTRACTOR_STEP,
                      bins: int = 128, graph_tol: float = 1e-2) -> list:
    """Attractor of ``H + eps * H1`` near the invariant graph ``P0`` of ``H``.

    ``perturbation`` is a TrigPoly potential (the Hamiltonian must be
    mechanical) or a callable ``eps -> Hamiltonian``.
    """
    if seeds is None:
        seeds = SeedSpec((0.0, sys.period), (-0.2, 0.2), 64, 5, around=P0)
    out = []
    for eps in eps_list:
        if callable(perturbation) and not hasattr(perturbation, "coefficient_arrays"):
            h = perturbation(eps)
        else:
            if not isinstance(sys.hamiltonian, MechanicalHamiltonian):
                raise DomainError("potential perturbations need a mechanical Hamiltonian")
            h = sys.hamiltonian.perturbed(eps, perturbation)
        s = DampedSystem(h, sys.lam, sys.test_mode)
        cloud = evolve_cloud(s, seeds, T, spec)
        v = graph_test(cloud, bins, graph_tol, sys.period)
        c = cloud_exactness(cloud, sys.period)
        d = graph_distance(cloud, P0, sys.period)
        out.append(PerturbationReport(float(eps), v.is_graph, v.max_vertical_spread, c, d, cloud.excluded))
    return out
