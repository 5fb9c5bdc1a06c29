"""Desk-scale realizations of the counterexample domain constructions.

The true constructions use radii exp(-8^k) and placements 1 - 2^-n whose
channel masses decay double-exponentially; neither survives floating
point.  The gallery keeps the logical structure but reparametrizes:
placements 1 - (7/8)^n (exactly dyadic), radii 2^-(n+3k+5), and channel
half-width 3/32 of the placement scale.  Every inequality target is
re-derived for this schedule through the logarithmic boundary estimate and
re-verified numerically before a stage is accepted; reports record both
the target and the achieved enclosure.

All domains live in the unit disk; rasterizations and grid solves use the
affine chart w = (z + 1 + i) / 2 onto the unit box (radii halved).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyadic import DyadicCube, DyadicPolygon, RationalPoint
from .measure import SolverConfig, harmonic_measure_polygon, BoundaryData
from .grid import grid_system
from .transfer import beurling_bound
from .wos import Arc, Scene, Segment, wos_integral
from .analytic import smoothstep


class RankBudget(ValueError):
    """Requested rank or index beyond the configured desk budget."""


class StageExceedsPrefix(ValueError):
    """Stage asks for more enumeration terms than the stub reveals."""


# ---------------------------------------------------------------------------
# coordinates and schedule

def to_box(z: np.ndarray) -> np.ndarray:
    """Disk chart -> unit box: w = (z + 1 + i)/2."""
    z = np.asarray(z, dtype=np.float64)
    return (z + 1.0) / 2.0


def to_disk(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return 2.0 * w - 1.0


@dataclass(frozen=True)
class DeskSchedule:
    """Desk-scale placement and radii schedule (exactly dyadic).

    Placements x(n) = (5/8)^n march toward the origin instead of the
    boundary: the aperture channel of the n-th stage then has length over
    width pi/(4 beta) independent of n, so every channel mass stays
    resolvable (the boundary-accumulating placements of the source
    construction make those masses decay doubly exponentially, which no
    floating-point engine can certify).  At any finite stage the
    separation logic is placement-agnostic: it needs only disjoint stage
    neighborhoods and the channel-domain inclusions, which hold here with
    margin 1/8 of the local scale.  Radii r(n, k) = 2^-(n+3k+5).
    """

    eta_num: int = 5
    eta_den: int = 8
    beta: Fraction = Fraction(1, 4)

    def eta(self) -> Fraction:
        return Fraction(self.eta_num, self.eta_den)

    def scale(self, n: int) -> Fraction:
        return self.eta() ** n

    def x(self, n: int) -> Fraction:
        """Placement on the real axis of the disk chart."""
        return self.scale(n)

    def x_box(self, n: int) -> RationalPoint:
        return RationalPoint.of((self.x(n) + 1) / 2, Fraction(1, 2))

    def r(self, n: int, k: int) -> Fraction:
        return Fraction(1, 2 ** (n + 3 * k + 5))

    def channel(self, n: int) -> tuple[Fraction, Fraction]:
        """Radii (inner, outer) of the open channel around |z| = x(n)."""
        s = self.scale(n)
        return (1 - self.beta) * s, (1 + self.beta) * s


SCHEDULE = DeskSchedule()


# ---------------------------------------------------------------------------
# enumerable-set stub


@dataclass
class EnumerableSetStub:
    """Deterministic injective enumeration with a deliberately opaque API.

    Membership of an integer is decidable only by scanning prefixes; the
    busy variant spends k^3 steps of a counter machine before revealing
    the k-th element, so 'beyond the revealed prefix' behaves honestly
    like ignorance rather than a hidden oracle.
    """

    enumerate: Callable[[int], int]
    description: str

    @classmethod
    def prefix(cls, values: Sequence[int]) -> "EnumerableSetStub":
        vals = list(values)
        if len(set(vals)) != len(vals):
            raise ValueError("enumeration must be injective")

        def nth(k: int) -> int:
            if k >= len(vals):
                raise StageExceedsPrefix(f"stub reveals only {len(vals)} elements")
            return vals[k]

        return cls(nth, "prefix:" + ",".join(str(v) for v in vals))

    @classmethod
    def busy(cls, seed: int = 5, limit: int = 6) -> "EnumerableSetStub":
        def nth(k: int) -> int:
            if k >= limit:
                raise StageExceedsPrefix(f"busy stub budgeted to {limit} elements")
            state = seed
            seen: list[int] = []
            steps = 0
            while len(seen) <= k:
                steps += 1
                state = (state * 6364136223846793005 + 1442695040888963407) % 2**64
                if steps % max(1, (len(seen) + 1) ** 3) == 0:
                    v = 2 + (state >> 33) % 7
                    if v not in seen:
                        seen.append(int(v))
            return seen[k]

        return cls(nth, f"busy:{seed}")

    def revealed(self, stage: int) -> list[int]:
        return [self.enumerate(k) for k in range(stage)]

    def status(self, n: int, stage: int) -> str:
        """'in' / 'out' relative to the revealed prefix, else 'unknown'."""
        pre = self.revealed(stage)
        if n in pre:
            return "in"
        return "out-or-unknown"


def parse_stub(spec: str) -> EnumerableSetStub:
    if spec.startswith("prefix:"):
        return EnumerableSetStub.prefix([int(t) for t in spec[7:].split(",") if t])
    if spec.startswith("busy:"):
        return EnumerableSetStub.busy(int(spec[5:]))
    raise ValueError(f"unknown stub spec {spec!r}")


# ---------------------------------------------------------------------------
# exact conservative rasterization

class Primitive:
    """Removed-set primitive with an exact may-touch test on closed boxes.

    Coordinates are in the disk chart; `hit` takes exact rationals.  The
    vectorized `batch` path works on the integer cube lattice with padded
    float comparisons and re-decides the ambiguous shortlist exactly.
    """

    def hit(self, xlo: Fraction, xhi: Fraction, ylo: Fraction, yhi: Fraction) -> bool:
        raise NotImplementedError

    def batch(self, X0, X1, Y0, Y1, N: int) -> np.ndarray:
        out = np.zeros(len(X0), dtype=bool)
        for i in range(len(X0)):
            out[i] = self.hit(
                Fraction(int(X0[i]), N),
                Fraction(int(X1[i]), N),
                Fraction(int(Y0[i]), N),
                Fraction(int(Y1[i]), N),
            )
        return out

    def _exact_shortlist(self, mask_ambiguous, X0, X1, Y0, Y1, N):
        out = np.zeros(len(X0), dtype=bool)
        idx = np.flatnonzero(mask_ambiguous)
        for i in idx:
            out[i] = self.hit(
                Fraction(int(X0[i]), N),
                Fraction(int(X1[i]), N),
                Fraction(int(Y0[i]), N),
                Fraction(int(Y1[i]), N),
            )
        return out


@dataclass
class BallPrimitive(Primitive):
    cx: Fraction
    cy: Fraction
    r: Fraction

    def hit(self, xlo, xhi, ylo, yhi):
        dx = max(xlo - self.cx, self.cx - xhi, 0)
        dy = max(ylo - self.cy, self.cy - yhi, 0)
        return dx * dx + dy * dy <= self.r * self.r

    def batch(self, X0, X1, Y0, Y1, N):
        # shortlist by a padded bounding box, decide exactly inside it
        cx, cy, r = float(self.cx), float(self.cy), float(self.r)
        pad = r + 4.0 / N
        near = (
            (X1 / N >= cx - pad)
            & (X0 / N <= cx + pad)
            & (Y1 / N >= cy - pad)
            & (Y0 / N <= cy + pad)
        )
        return self._exact_shortlist(near, X0, X1, Y0, Y1, N)


@dataclass
class HalfplaneBandPrimitive(Primitive):
    """Removed set {Re z >= 0, a_min <= |z| <= a_max} (either bound optional)."""

    a_min: Fraction | None
    a_max: Fraction | None

    def hit(self, xlo, xhi, ylo, yhi):
        if xhi < 0:
            return False
        xlo = max(xlo, Fraction(0))
        rmin_sq = Fraction(0)
        if not (xlo <= 0 <= xhi):
            rmin_sq += min(xlo * xlo, xhi * xhi)
        if not (ylo <= 0 <= yhi):
            rmin_sq += min(ylo * ylo, yhi * yhi)
        rmax_sq = max(x * x for x in (xlo, xhi)) + max(y * y for y in (ylo, yhi))
        if self.a_min is not None and rmax_sq < self.a_min * self.a_min:
            return False
        if self.a_max is not None and rmin_sq > self.a_max * self.a_max:
            return False
        return True

    def batch(self, X0, X1, Y0, Y1, N):
        X0c = np.maximum(X0, 0.0)
        in_half = X1 >= 0
        rmin = np.where(
            (X0c <= 0) & (X1 >= 0), 0.0, np.minimum(X0c**2, X1**2)
        ) + np.where((Y0 <= 0) & (Y1 >= 0), 0.0, np.minimum(Y0**2, Y1**2))
        rmax = np.maximum(X0c**2, X1**2) + np.maximum(Y0**2, Y1**2)
        hit = in_half.copy()
        ambiguous = np.zeros(len(X0), dtype=bool)
        NN = float(N) * float(N)
        rel = 1e-9
        if self.a_min is not None:
            t = float(self.a_min * self.a_min) * NN
            hit &= rmax >= t * (1 - rel)
            ambiguous |= np.abs(rmax - t) < t * 2 * rel
        if self.a_max is not None:
            t = float(self.a_max * self.a_max) * NN
            hit &= rmin <= t * (1 + rel)
            ambiguous |= np.abs(rmin - t) < t * 2 * rel
        ambiguous &= in_half
        if ambiguous.any():
            exact = self._exact_shortlist(ambiguous & hit, X0, X1, Y0, Y1, N)
            hit = np.where(ambiguous, exact, hit)
        return hit


@dataclass
class NotchPrimitive(Primitive):
    """Removed set {Re z >= x_min, |Im z| <= half_width}."""

    x_min: Fraction
    half_width: Fraction

    def hit(self, xlo, xhi, ylo, yhi):
        return xhi >= self.x_min and ylo <= self.half_width and yhi >= -self.half_width

    def batch(self, X0, X1, Y0, Y1, N):
        # exact separable thresholds on the integer lattice
        xm = self.x_min * N
        hw = self.half_width * N
        xm_ceil = math.ceil(xm) if xm == math.ceil(xm) else math.ceil(xm)
        return (
            (X1 >= float(math.floor(xm)))
            & (Y0 <= float(math.ceil(hw)))
            & (Y1 >= float(math.floor(-hw)))
        )


def ball_primitive(cx: Fraction, cy: Fraction, r: Fraction) -> Primitive:
    return BallPrimitive(cx, cy, r)


def halfplane_band_primitive(a_min: Fraction | None, a_max: Fraction | None) -> Primitive:
    return HalfplaneBandPrimitive(a_min, a_max)


def notch_primitive(x_min: Fraction, half_width: Fraction) -> Primitive:
    return NotchPrimitive(x_min, half_width)


_RASTER_CACHE: dict = {}


def rasterize_disk_domain(
    removed: Sequence[Primitive],
    rank: int,
    max_rank: int = 10,
    cache_key=None,
) -> DyadicPolygon:
    """Conservative interior rasterization of the disk minus the primitives.

    A rank-`rank` cube is kept iff its closure lies strictly inside the
    unit disk (an exact integer test) and cannot touch any removed
    primitive, so the rasterization's closure is contained in the true
    domain.  Coordinates are mapped to the unit box.
    """
    if rank > max_rank:
        raise RankBudget(f"rank {rank} beyond budget {max_rank}")
    if cache_key is not None and (cache_key, rank) in _RASTER_CACHE:
        return _RASTER_CACHE[(cache_key, rank)]
    n = 2**rank
    N = n  # disk chart scaled by N: cube [2i-N, 2i+2-N] x [2j-N, 2j+2-N] over N
    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    I = I.ravel()
    J = J.ravel()
    X0 = (2 * I - N).astype(np.float64)
    X1 = X0 + 2.0
    Y0 = (2 * J - N).astype(np.float64)
    Y1 = Y0 + 2.0
    # strict disk containment: integer arithmetic, exact in float64
    worst = np.maximum(X0**2, X1**2) + np.maximum(Y0**2, Y1**2)
    keep = worst < float(N) * float(N)
    for prim in removed:
        if not keep.any():
            break
        sel = np.flatnonzero(keep)
        hits = prim.batch(X0[sel], X1[sel], Y0[sel], Y1[sel], N)
        keep[sel[hits]] = False
    cells = list(zip(I[keep].tolist(), J[keep].tolist()))
    if not cells:
        raise RankBudget(f"no interior cubes at rank {rank}")
    poly = DyadicPolygon.of(rank, cells)
    if cache_key is not None:
        _RASTER_CACHE[(cache_key, rank)] = poly
    return poly


# ---------------------------------------------------------------------------
# Omega_0


def omega0_primitives(rank: int) -> list[Primitive]:
    """Removed balls of Omega_0: centers 1 - 2^-k, radii 2^-(4k+5).

    Balls with k beyond rank + 1 lie inside the cube column already cut by
    the strict disk-containment test, so finitely many primitives suffice.
    """
    prims = []
    for k in range(1, rank + 2):
        xk = 1 - Fraction(1, 2**k)
        rk = Fraction(1, 2 ** (4 * k + 5))
        prims.append(ball_primitive(xk, Fraction(0), rk))
    return prims


def build_omega0(rank: int, max_rank: int = 9) -> DyadicPolygon:
    """Rasterization of the disk minus the shrinking ball chain."""
    return rasterize_disk_domain(omega0_primitives(rank), rank, max_rank, cache_key="omega0")


def omega0_scene() -> Scene:
    pieces = [Arc((0.0, 0.0), 1.0, label="circle")]
    for k in range(1, 9):
        xk = 1 - 2.0**-k
        rk = 2.0 ** -(4 * k + 5)
        pieces.append(Arc((xk, 0.0), rk, label=f"ball:{k}"))
    return Scene(pieces)


def omega0_distance(z: np.ndarray) -> np.ndarray:
    """Closed-form distance to the boundary of Omega_0 (disk chart)."""
    z = np.asarray(z, dtype=np.float64)
    d = 1.0 - np.hypot(z[..., 0], z[..., 1])
    for k in range(1, 26):
        xk = 1 - 2.0**-k
        rk = 2.0 ** -(4 * k + 5)
        d = np.minimum(d, np.hypot(z[..., 0] - xk, z[..., 1]) - rk)
    return d


# ---------------------------------------------------------------------------
# E_n and its exit mass


def en_radii(n: int, sched: DeskSchedule = SCHEDULE) -> tuple[Fraction, Fraction]:
    return sched.channel(n)


def en_primitives(n: int, sched: DeskSchedule = SCHEDULE) -> list[Primitive]:
    a_in, a_out = en_radii(n, sched)
    return [
        halfplane_band_primitive(None, a_in),
        halfplane_band_primitive(a_out, None),
    ]


def en_scene(n: int, sched: DeskSchedule = SCHEDULE) -> Scene:
    a_in = float(en_radii(n, sched)[0])
    a_out = float(en_radii(n, sched)[1])
    half_pi = math.pi / 2
    pieces = [
        Arc((0.0, 0.0), 1.0, half_pi, 3 * half_pi, label="outer-left"),
        Arc((0.0, 0.0), a_in, -half_pi, half_pi, label="band-inner"),
        Arc((0.0, 0.0), a_out, -half_pi, half_pi, label="band-outer"),
        Segment((0.0, -a_in), (0.0, a_in), label="axis-inner"),
        Segment((0.0, a_out), (0.0, 1.0), label="axis-up"),
        Segment((0.0, -1.0), (0.0, -a_out), label="axis-down"),
    ]
    return Scene(pieces)


def far_arc_indicator() -> Callable[[np.ndarray], np.ndarray]:
    """Indicator of the target arc {|z| = 1, Re z <= -1/2} (disk chart)."""

    def fn(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        r = np.hypot(z[..., 0], z[..., 1])
        return ((r > 0.9) & (z[..., 0] <= -0.5)).astype(np.float64)

    return fn


def ramp_boundary_function() -> Callable[[np.ndarray], np.ndarray]:
    """Smooth ramp of Re z: 1 on Re <= -1/2, 0 on Re >= 0 (disk chart)."""

    def fn(z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return 1.0 - smoothstep(2.0 * z[..., 0] + 1.0)

    return fn


@dataclass
class InequalityReport:
    """Numerical verdict for one inequality at desk scale."""

    inequality: str
    lhs_enclosure: tuple[float, float]
    rhs: float
    margin: float
    engines: dict[str, float] = field(default_factory=dict)
    passed: bool = False
    note: str = ""

    @classmethod
    def check_upper(cls, name, lhs_lo, lhs_hi, rhs, engines=None, note=""):
        ok = lhs_hi < rhs
        margin = rhs - lhs_hi
        return cls(name, (lhs_lo, lhs_hi), rhs, margin, engines or {}, ok, note)

    @classmethod
    def check_lower(cls, name, lhs_lo, lhs_hi, rhs, engines=None, note=""):
        ok = lhs_lo > rhs
        margin = lhs_lo - rhs
        return cls(name, (lhs_lo, lhs_hi), rhs, margin, engines or {}, ok, note)

    def row(self) -> dict:
        return {
            "inequality": self.inequality,
            "lhs_lo": self.lhs_enclosure[0],
            "lhs_hi": self.lhs_enclosure[1],
            "rhs": self.rhs,
            "margin": self.margin,
            "pass": self.passed,
            "note": self.note,
        }


_LN_CACHE: dict[tuple[int, int], tuple[int, InequalityReport]] = {}


def compute_ln(
    n: int,
    budget: int = 6,
    rank: int | None = None,
    wos_samples: int = 400_000,
    seed: int = 0x4C4E,
    sched: DeskSchedule = SCHEDULE,
) -> tuple[int, InequalityReport]:
    """Smallest l with the far-arc exit mass of E_n above 2^-l.

    Grid solve on a rasterization (primary, Richardson-certified) with a
    walk-on-spheres cross-check on the exact circle geometry.
    """
    if n > budget:
        raise RankBudget(f"index {n} beyond desk budget {budget}")
    key = (n, id(sched) if sched is not SCHEDULE else 0)
    if key in _LN_CACHE:
        return _LN_CACHE[key]
    a_in, a_out = en_radii(n, sched)
    width = float(a_out - a_in)
    if rank is None:
        rank = min(9, max(7, int(math.ceil(math.log2(1.0 / width))) + 5))
    P = rasterize_disk_domain(en_primitives(n, sched), rank, cache_key=("en", n))
    x = sched.x_box(n)
    ind = far_arc_indicator()
    data = BoundaryData(lambda w: ind(to_disk(w)), lip=0.0, sup=1.0)
    top = min(rank + 2, 10)
    ev = grid_system(P, top).exit_vector(x)
    ev2 = grid_system(P, top - 1).exit_vector(x)
    val = ev.integrate(data)
    delta = abs(val - ev2.integrate(data))
    bound = 4.0 * delta + 1e-11
    lo, hi = max(val - bound, 0.0), val + bound
    # cross-engine check on the same rasterized polygon (the exact-geometry
    # channel mass differs by the shaved width, exponentially; l_n is a
    # property of the rasterization by definition)
    from .wos import polygon_scene

    data_box = BoundaryData(lambda w: ind(to_disk(w)), lip=0.0, sup=1.0)
    xb = tuple(float(c) for c in x.coords)
    floor_mass = 64.0 / wos_samples
    if val >= floor_mass:
        wres = wos_integral(
            polygon_scene(P), xb, data_box, wos_samples, seed, lip=0.0, sup=1.0
        )
        consistent = abs(val - wres.mean) <= wres.radius + bound + 0.1 * max(val, wres.mean)
        engines = {"grid": val, "grid_bound": bound, "wos": wres.mean, "wos_radius": wres.radius}
        note_x = "cross-check ok" if consistent else "cross-check DISAGREE"
    else:
        wres = wos_integral(polygon_scene(P), xb, data_box, wos_samples, seed, lip=0.0, sup=1.0)
        consistent = wres.mean <= max(4 * val, 8 * floor_mass)
        engines = {"grid": val, "grid_bound": bound, "wos": wres.mean, "wos_radius": wres.radius}
        note_x = "mass below MC floor: one-sided check" + (" ok" if consistent else " DISAGREE")
    if lo <= 0:
        raise RankBudget(f"E_{n} mass {val:.3e} not certified positive at desk scale")
    ell = max(1, math.floor(-math.log2(lo)) + 1)
    rep = InequalityReport.check_lower(
        f"en-mass:{n}", lo, hi, 2.0**-ell, engines=engines, note=f"l_{n}={ell}, {note_x}"
    )
    rep.passed = rep.passed and consistent
    _LN_CACHE[key] = (ell, rep)
    return ell, rep
