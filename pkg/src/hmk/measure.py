"""Certified harmonic measure of dyadic polygons.

Two independent engines back every certified number: the deterministic
grid engine (successive rank refinement with a Richardson-style a
posteriori bound, safety factor 4) and the walk-on-spheres oracle whose
confidence interval must contain the grid value before a certificate is
issued.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyadic import DyadicPolygon, RationalPoint
from .grid import ExitVector, GridSystem, PointOnBoundary, grid_system
from .wos import PolygonScene, WosResult, polygon_scene, wos_integral, wos_piece_masses

SAFETY = 4.0
ERROR_FLOOR = 1e-11


class ToleranceUnreachable(RuntimeError):
    """Refinement budget exhausted before the requested certification."""


@dataclass
class SolverConfig:
    max_rank: int = 10
    min_rank: int = 4
    wos_samples: int = 20000
    wos_shell: float = 2.0**-14
    seed: int = 0x484D4B01
    cross_check: bool = True


DEFAULT_CONFIG = SolverConfig()


@dataclass
class SolveCertificate:
    engine: str
    ranks: list[int]
    deltas: list[float]
    error: float
    seed: int | None = None
    wos_interval: tuple[float, float] | None = None

    def ok(self) -> bool:
        return not self.deltas or self.error >= self.deltas[-1]


@dataclass
class BoundaryData:
    """Boundary function with declared Lipschitz and sup bounds."""

    fn: Callable[[np.ndarray], np.ndarray]
    lip: float = 1.0
    sup: float = 1.0

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.fn(pts)


def as_boundary_data(f) -> BoundaryData:
    if isinstance(f, BoundaryData):
        return f
    value = getattr(f, "value", None)
    if value is not None:
        return BoundaryData(value, float(getattr(f, "lip_bound", 1.0)), float(getattr(f, "sup_bound", 1.0)))
    return BoundaryData(f)


def _require_interior(P: DyadicPolygon, x: RationalPoint) -> None:
    if not P.contains(x) or P.boundary_dist_sq(x) == 0:
        raise PointOnBoundary(f"point {x.as_floats()} is not interior to the polygon")


def _grid_sequence(P: DyadicPolygon, x: RationalPoint, cfg: SolverConfig):
    r = max(P.rank, min(cfg.min_rank, cfg.max_rank))
    while r <= cfg.max_rank:
        yield r, grid_system(P, r).exit_vector(x)
        r += 1


def harmonic_measure_polygon(
    P: DyadicPolygon,
    x: RationalPoint,
    f,
    n: int,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> tuple[float, SolveCertificate]:
    """I with |I - integral of f against the exit measure at x| < 2^-n.

    Grids of increasing rank are solved until the a posteriori bound
    SAFETY * |I_{r+1} - I_r| (plus a rounding floor) drops below 2^-n and
    the walk-on-spheres interval contains the grid value.
    """
    _require_interior(P, x)
    data = as_boundary_data(f)
    target = 2.0**-n
    prev = None
    ranks: list[int] = []
    deltas: list[float] = []
    for r, ev in _grid_sequence(P, x, cfg):
        val = ev.integrate(data)
        ranks.append(r)
        if prev is not None:
            delta = abs(val - prev)
            deltas.append(delta)
            bound = SAFETY * delta + ERROR_FLOOR
            if bound < target:
                cert = SolveCertificate("grid", ranks, deltas, bound)
                if cfg.cross_check:
                    w = wos_integral(
                        polygon_scene(P),
                        x.as_floats(),
                        data,
                        cfg.wos_samples,
                        cfg.seed,
                        lip=data.lip,
                        shell=cfg.wos_shell,
                        sup=data.sup,
                    )
                    cert.seed = cfg.seed
                    cert.wos_interval = w.interval()
                    if abs(val - w.mean) > w.radius + bound:
                        prev = val
                        continue  # engines disagree: keep refining
                return val, cert
        prev = val
    raise ToleranceUnreachable(
        f"rank budget {cfg.max_rank} exhausted before reaching 2^-{n}"
    )


@dataclass
class BoundaryPiece:
    """Labeled boundary piece: a membership predicate on boundary points."""

    label: str
    member: Callable[[np.ndarray], np.ndarray]


def square_sides(P: DyadicPolygon | None = None) -> list[BoundaryPiece]:
    """The four sides of the unit square as labeled pieces."""
    eps = 1e-12
    return [
        BoundaryPiece("left", lambda p: p[:, 0] < eps),
        BoundaryPiece("right", lambda p: p[:, 0] > 1 - eps),
        BoundaryPiece("bottom", lambda p: p[:, 1] < eps),
        BoundaryPiece("top", lambda p: p[:, 1] > 1 - eps),
    ]


def exit_distribution(
    P: DyadicPolygon,
    x: RationalPoint,
    pieces: Sequence[BoundaryPiece],
    n: int,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> tuple[dict[str, tuple[float, float]], SolveCertificate]:
    """Componentwise enclosures of the exit mass of each boundary piece.

    Pieces must partition the boundary up to measure zero; boundary nodes
    matching several pieces (shared corners) split their weight equally.
    """
    _require_interior(P, x)
    target = 2.0**-n

    def masses(ev: ExitVector) -> np.ndarray:
        match = np.stack([np.asarray(p.member(ev.nodes), dtype=bool) for p in pieces])
        counts = match.sum(axis=0)
        if (counts == 0).any():
            raise ValueError("pieces do not cover all boundary nodes")
        share = match / counts
        return share @ ev.weights

    prev = None
    ranks: list[int] = []
    deltas: list[float] = []
    for r, ev in _grid_sequence(P, x, cfg):
        vals = masses(ev)
        ranks.append(r)
        if prev is not None:
            delta = float(np.max(np.abs(vals - prev)))
            deltas.append(delta)
            bound = SAFETY * delta + ERROR_FLOOR
            if 2 * bound < target:
                cert = SolveCertificate("grid", ranks, deltas, bound)
                if cfg.cross_check:
                    wos_vals, radius = _wos_piece_estimate(P, x, pieces, cfg)
                    cert.seed = cfg.seed
                    if np.max(np.abs(wos_vals - vals)) > radius + bound:
                        prev = vals
                        continue
                out = {
                    p.label: (float(v - bound), float(v + bound))
                    for p, v in zip(pieces, vals)
                }
                return out, cert
        prev = vals
    raise ToleranceUnreachable(
        f"rank budget {cfg.max_rank} exhausted before reaching 2^-{n}"
    )


def _wos_piece_estimate(
    P: DyadicPolygon,
    x: RationalPoint,
    pieces: Sequence[BoundaryPiece],
    cfg: SolverConfig,
) -> tuple[np.ndarray, float]:
    """WoS piece masses classified by the piece predicates at exit points."""
    from .wos import walk_exits

    exits, _, unfinished = walk_exits(
        polygon_scene(P), x.as_floats(), cfg.wos_samples, cfg.seed, cfg.wos_shell
    )
    match = np.stack([np.asarray(p.member(exits), dtype=bool) for p in pieces])
    counts = np.maximum(match.sum(axis=0), 1)
    vals = (match / counts).sum(axis=1) / cfg.wos_samples
    worst = float(np.clip(vals.max(initial=0.0), 1.0 / cfg.wos_samples, 0.25))
    radius = 3.0 * math.sqrt(worst / cfg.wos_samples) + 2.0 * unfinished / cfg.wos_samples
    return vals, radius


def wos_estimate(
    P: DyadicPolygon,
    x: RationalPoint,
    f,
    samples: int,
    seed: int,
    shell: float = DEFAULT_CONFIG.wos_shell,
) -> tuple[float, float]:
    """Independent Monte Carlo estimate (mean, confidence radius)."""
    _require_interior(P, x)
    data = as_boundary_data(f)
    res = wos_integral(
        polygon_scene(P), x.as_floats(), data, samples, seed, lip=data.lip, shell=shell, sup=data.sup
    )
    return res.mean, res.radius


def dirichlet_solve(
    P: DyadicPolygon,
    g,
    x: RationalPoint,
    n: int,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> tuple[float, SolveCertificate]:
    """u(x) for the Dirichlet problem with boundary data g, error < 2^-n."""
    return harmonic_measure_polygon(P, x, g, n, cfg)


@dataclass
class HarmonicCorrection:
    """f replaced inside P by the harmonic extension of its boundary values."""

    source: BoundaryData
    polygon: DyadicPolygon
    rank: int
    tolerance: float
    _system: GridSystem = field(repr=False, default=None)
    _u_int: np.ndarray = field(repr=False, default=None)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        out = np.asarray(self.source(pts), dtype=np.float64).copy()
        n = self._system.n
        i = np.clip(np.floor(pts[:, 0] * n).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(pts[:, 1] * n).astype(np.int64), 0, n - 1)
        inside = self._system.occ[i, j]
        if inside.any():
            vals = self._interp_many(pts[inside])
            out[inside] = vals
        return out

    def _interp_many(self, pts: np.ndarray) -> np.ndarray:
        sysm = self._system
        n = sysm.n
        g = None
        cx = np.clip(np.floor(pts[:, 0] * n).astype(np.int64), 0, n - 1)
        cy = np.clip(np.floor(pts[:, 1] * n).astype(np.int64), 0, n - 1)
        tx = pts[:, 0] * n - cx
        ty = pts[:, 1] * n - cy
        vals = np.zeros(len(pts))
        for di, dj, w in (
            (0, 0, (1 - tx) * (1 - ty)),
            (1, 0, tx * (1 - ty)),
            (0, 1, (1 - tx) * ty),
            (1, 1, tx * ty),
        ):
            ii, jj = cx + di, cy + dj
            ki = sysm._idx_int[ii, jj]
            kb = sysm._idx_bnd[ii, jj]
            node_val = np.zeros(len(pts))
            m_int = ki >= 0
            node_val[m_int] = self._u_int[ki[m_int]]
            m_bnd = kb >= 0
            if m_bnd.any():
                if g is None:
                    g = np.asarray(self.source(sysm.bnd_coords), dtype=np.float64)
                node_val[m_bnd] = g[kb[m_bnd]]
            vals += w * node_val
        return vals


def harmonic_correction(
    f,
    P: DyadicPolygon,
    rank: int | None = None,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> HarmonicCorrection:
    """The harmonic correction of f in P: f outside, harmonic extension inside."""
    data = as_boundary_data(f)
    r = rank if rank is not None else min(max(P.rank + 3, cfg.min_rank + 2), cfg.max_rank)
    sysm = grid_system(P, r)
    u = sysm.solve_dirichlet(data)
    # a posteriori spot tolerance from one coarser rank at the cell centers
    sys_lo = grid_system(P, max(P.rank, r - 1))
    u_lo = sys_lo.solve_dirichlet(data)
    probe = _interior_probe_points(P, min(r - 1, 5))
    hc = HarmonicCorrection(data, P, r, 0.0, sysm, u)
    hc_lo = HarmonicCorrection(data, P, r - 1, 0.0, sys_lo, u_lo)
    if len(probe):
        tol = float(np.max(np.abs(hc(probe) - hc_lo(probe)))) * SAFETY + ERROR_FLOOR
    else:
        tol = ERROR_FLOOR
    hc.tolerance = tol
    return hc


def _interior_probe_points(P: DyadicPolygon, rank: int) -> np.ndarray:
    n = 2**rank
    sysm = grid_system(P, max(P.rank, rank))
    pts = []
    for i in range(1, n):
        for j in range(1, n):
            x, y = i / n, j / n
            ci = min(int(x * sysm.n), sysm.n - 1)
            cj = min(int(y * sysm.n), sysm.n - 1)
            if sysm.occ[ci, cj] and sysm.interior_mask[ci, cj]:
                pts.append((x, y))
    return np.asarray(pts) if pts else np.zeros((0, 2))


# ---------------------------------------------------------------------------
# weak measures

class WeakMeasure:
    """A measure accessed only through weak integration with certified error.

    integrate(f, tol) returns I with |I - integral f dmu| < tol or raises
    ToleranceUnreachable.  Implementations may expose batch integration to
    share solver work across a family of test functions.
    """

    def integrate(self, f, tol: float) -> float:
        raise NotImplementedError

    def integrate_batch(self, fs: Sequence, tol: float) -> list[float]:
        return [self.integrate(f, tol) for f in fs]

    def integrate_batch_soft(self, fs: Sequence, tol: float) -> tuple[np.ndarray, np.ndarray]:
        """Best-effort batch: values plus achieved error bounds (never raises)."""
        vals, bounds = [], []
        for f in fs:
            try:
                vals.append(self.integrate(f, tol))
                bounds.append(tol)
            except ToleranceUnreachable:
                vals.append(self.integrate(f, 8 * tol))
                bounds.append(8 * tol)
        return np.asarray(vals), np.asarray(bounds)

    def check_normalization(self, tol: float = 1e-6) -> bool:
        one = self.integrate(BoundaryData(lambda p: np.ones(len(p)), 0.0, 1.0), tol)
        return abs(one - 1.0) <= 2 * tol


def batch_measure(
    P: DyadicPolygon,
    x: RationalPoint,
    fs: Sequence,
    tol: float,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> tuple[np.ndarray, np.ndarray]:
    """Certified integrals of many boundary functions against one exit law.

    Two successive grid ranks are solved once; every integral is a dot
    product against the two exit vectors and carries the per-function
    Richardson bound.  Raises ToleranceUnreachable if any bound misses tol.
    """
    _require_interior(P, x)
    datas = [as_boundary_data(f) for f in fs]
    prev = None
    best = None
    for r, ev in _grid_sequence(P, x, cfg):
        vals = np.array([ev.integrate(d) for d in datas])
        if prev is not None:
            bounds = SAFETY * np.abs(vals - prev) + ERROR_FLOOR
            if best is None or bounds.max() < best[1].max():
                best = (vals, bounds)
            if bounds.max() < tol:
                return vals, bounds
        prev = vals
    if best is None:
        raise ToleranceUnreachable("refinement budget exhausted in batch measure")
    raise ToleranceUnreachable(
        f"batch bound {best[1].max():.3e} did not reach tol {tol:.3e}"
    )


class PolygonMeasure(WeakMeasure):
    """Exit measure of a dyadic polygon at an interior point (grid-backed)."""

    def __init__(self, P: DyadicPolygon, x: RationalPoint, cfg: SolverConfig = DEFAULT_CONFIG):
        _require_interior(P, x)
        self.polygon = P
        self.x = x
        self.cfg = cfg

    def integrate(self, f, tol: float) -> float:
        n = max(0, math.ceil(-math.log2(max(tol, 1e-12))))
        val, _ = harmonic_measure_polygon(self.polygon, self.x, f, n, self.cfg)
        return val

    def integrate_batch(self, fs: Sequence, tol: float) -> list[float]:
        vals, _ = batch_measure(self.polygon, self.x, fs, tol, self.cfg)
        return list(vals)

    def integrate_batch_soft(self, fs: Sequence, tol: float) -> tuple[np.ndarray, np.ndarray]:
        datas = [as_boundary_data(f) for f in fs]
        prev = None
        best: tuple[np.ndarray, np.ndarray] | None = None
        for r, ev in _grid_sequence(self.polygon, self.x, self.cfg):
            vals = np.array([ev.integrate(d) for d in datas])
            if prev is not None:
                bounds = SAFETY * np.abs(vals - prev) + ERROR_FLOOR
                if best is None or bounds.max() < best[1].max():
                    best = (vals, bounds)
                if bounds.max() < tol:
                    break
            prev = vals
        if best is None:
            return prev, np.full(len(datas), math.inf)
        return best

    def exit_vector(self, rank: int) -> ExitVector:
        return grid_system(self.polygon, rank).exit_vector(self.x)
