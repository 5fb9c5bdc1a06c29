"""Interior and harmonic approximation of domains from weak measure data.

Implements the approximation calculus: greedy interior approximations from
domain enumerations, the measure-guided search for harmonic approximations
(polygons whose exit laws match a target measure on the subharmonic net
while carrying little boundary mass), the upgrade of interior to harmonic
approximations under a regularity modulus, and the two reconstruction
directions that recover the boundary and the domain from measure data
alone.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Sequence

import numpy as np

from .dyadic import (
    DomainEnumeration,
    DyadicCube,
    DyadicPolygon,
    PointOracle,
    RationalPoint,
    cube_of_point,
    distance_to_enumerated_boundary,
    polygon_union,
    refine,
)
from .measure import (
    DEFAULT_CONFIG,
    BoundaryData,
    PolygonMeasure,
    SolverConfig,
    WeakMeasure,
    batch_measure,
    harmonic_measure_polygon,
)
from .testfns import SubharmonicNet, TestFunction, lipschitz_subharmonic_net
from .wos import polygon_scene


class SearchBudgetExceeded(RuntimeError):
    """Search did not find an admissible polygon within the budget."""


class ModulusUndefined(KeyError):
    """Regularity modulus has no entry for the requested index."""


class BudgetExceeded(RuntimeError):
    """Stopping-time search exceeded its configured rank budget."""


@dataclass
class SearchConfig:
    max_rank: int = 7
    candidate_budget: int = 10**6
    solver: SolverConfig = field(default_factory=lambda: DEFAULT_CONFIG)


@dataclass
class InteriorApproximation:
    """Nested polygons inside the domain approaching its boundary."""

    base_point: RationalPoint
    members: Callable[[int], DyadicPolygon]

    def polygon(self, n: int) -> DyadicPolygon:
        return self.members(n)


@dataclass
class RegularityModulus:
    """eps(n) thresholds: near-boundary points concentrate exit mass."""

    eps: Callable[[int], Fraction]

    @classmethod
    def geometric(cls, ratio: Fraction = Fraction(1, 4), scale: Fraction = Fraction(1, 8)):
        return cls(lambda n: scale * ratio**n)


@dataclass
class VerificationRecord:
    """Outcome of the post-hoc check of the three defining conditions."""

    rank: int
    contains_x: bool
    contains_anchor: bool
    net_gap: float
    net_bound: float
    boundary_mass_upper: float
    boundary_mass_bound: float

    def ok(self) -> bool:
        return (
            self.contains_x
            and self.contains_anchor
            and self.net_gap < self.net_bound
            and self.boundary_mass_upper < self.boundary_mass_bound
        )


@dataclass
class HarmonicApproximation:
    """Polygon sequence whose exit laws approximate the target measure."""

    base_point: RationalPoint
    anchor: DyadicPolygon | None
    members: Callable[[int], DyadicPolygon]
    records: dict[int, VerificationRecord] = field(default_factory=dict)

    def polygon(self, n: int) -> DyadicPolygon:
        return self.members(n)


# ---------------------------------------------------------------------------
# interior approximation from enumerations


def build_interior_approx(
    dom: DomainEnumeration,
    bnd: DomainEnumeration,
    x: PointOracle,
    n: int,
    max_terms: int = 512,
) -> DyadicPolygon:
    """Greedy chained union of enumerated interior polygons.

    Extends the union with the first enumerated polygon meeting it until
    every boundary vertex (at rank >= n+1) is certified within 2^-n / d of
    the domain boundary via the enumerated-distance routine.
    """
    xr = x.resolve(n + 3)
    d = xr.dim
    target = Fraction(1, 2**n * d)
    pending: list[DyadicPolygon] = []
    current: DyadicPolygon | None = None
    k = 0

    def pull() -> bool:
        nonlocal k
        p = dom.next(k)
        k += 1
        if p is None:
            return False
        pending.append(p)
        return True

    while current is None:
        if not pull():
            raise SearchBudgetExceeded("enumeration exhausted before covering x")
        for i, p in enumerate(pending):
            if p.contains(xr):
                current = p
                pending.pop(i)
                break

    for _ in range(max_terms):
        if _vertices_certified(current, dom, bnd, n, target):
            return current
        merged = False
        for i, p in enumerate(pending):
            try:
                current = polygon_union(current, p)
            except Exception:
                continue
            pending.pop(i)
            merged = True
            break
        if not merged and not pull():
            # enumeration exhausted: the union is the whole domain
            if _vertices_certified(current, dom, bnd, n, target):
                return current
            raise SearchBudgetExceeded("enumeration exhausted before certification")
    raise SearchBudgetExceeded("interior approximation budget exhausted")


def _boundary_vertices(P: DyadicPolygon, min_rank: int) -> list[RationalPoint]:
    Q = refine(P, max(P.rank, min_rank))
    verts = set()
    for _, flo, fhi in Q.boundary_faces():
        verts.add(flo)
        verts.add(fhi)
    return [RationalPoint(v) for v in sorted(verts)]


def _vertices_certified(
    P: DyadicPolygon,
    dom: DomainEnumeration,
    bnd: DomainEnumeration,
    n: int,
    target: Fraction,
) -> bool:
    for v in _boundary_vertices(P, n + 1):
        q = distance_to_enumerated_boundary(PointOracle.exact(v), dom, bnd, n + 3)
        if q + Fraction(1, 2 ** (n + 3)) >= target:
            return False
    return True


# ---------------------------------------------------------------------------
# plateau bumps and collar cutoffs


def _smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def plateau_bump(center: Sequence[float], scale_n: int, dim: int = 2) -> BoundaryData:
    """Radial plateau: 1 on ||x-c|| <= 2^-n-3, 0 from 2^-n-2 (scale of eq).

    Realizes phi(2^{n+1} d (x - x_Q)) for the fixed spline profile phi = 1
    on [0, 1/2], 0 on [1, inf).
    """
    c = np.asarray(center, dtype=np.float64)
    rad = 2.0 ** -(scale_n + 1) / dim

    def fn(pts: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(np.asarray(pts, dtype=np.float64) - c, axis=1) / rad
        return 1.0 - _smoothstep(2.0 * r - 1.0)

    return BoundaryData(fn, lip=1.875 * 2.0 / rad, sup=1.0)


def collar_cutoff(P: DyadicPolygon) -> BoundaryData:
    """Upper cutoff of the closure of P: 1 on it, 0 beyond a 2^-rank collar."""
    scene = polygon_scene(P)
    width = float(P.side)

    def fn(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        d = scene.distance(pts)
        inside = scene.contains(pts)
        t = np.where(inside, 0.0, d / width)
        return 1.0 - _smoothstep(t)

    return BoundaryData(fn, lip=1.875 / width, sup=1.0)


# ---------------------------------------------------------------------------
# harmonic approximation search


def _measure_profile(mu: WeakMeasure, net: SubharmonicNet, tol: float):
    basis = SubharmonicNet.basis_functions()
    cones = [f for f in net.members if f.name == "cone"]
    vals = mu.integrate_batch(list(basis) + cones, tol)
    moments = np.array(vals[: len(basis)])
    cone_vals = np.array(vals[len(basis):])
    return moments, cones, cone_vals


def _candidate_from_measure(
    mu: WeakMeasure,
    x: RationalPoint,
    Q: DyadicPolygon | None,
    rank: int,
    threshold: float,
    tol: float,
) -> DyadicPolygon | None:
    """Maximal polygon of measure-clear rank-`rank` cubes around x."""
    n_cells = 2**rank
    cubes = [DyadicCube(rank, idx) for idx in itertools.product(range(n_cells), repeat=2)]
    # plateau covers the whole cube and its surroundings (support 2^-rank+1)
    bumps = [
        plateau_bump([float(c) for c in cb.center().coords], rank - 3) for cb in cubes
    ]
    masses, bounds = mu.integrate_batch_soft(bumps, tol)
    clear = {
        cb.indices
        for cb, m, b in zip(cubes, masses, bounds)
        if m + b < threshold
    }
    if Q is not None:
        clear |= set(refine(Q, rank).cells)
    home = tuple(cube_of_point(x, rank).indices)
    if home not in clear:
        return None
    comp = {home}
    stack = [home]
    while stack:
        cur = stack.pop()
        for axis in range(2):
            for step in (-1, 1):
                nb = cur[:axis] + (cur[axis] + step,) + cur[axis + 1 :]
                if nb in clear and nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
    try:
        return DyadicPolygon(rank, frozenset(comp))
    except Exception:
        return None


def verify_harmonic_member(
    cand: DyadicPolygon,
    mu: WeakMeasure,
    x: RationalPoint,
    Q: DyadicPolygon | None,
    n: int,
    net: SubharmonicNet,
    mu_moments: np.ndarray,
    cones: list[TestFunction],
    mu_cones: np.ndarray,
    cfg: SearchConfig,
) -> VerificationRecord:
    """Post-hoc check of the three defining conditions against solves."""
    contains_x = cand.interior_contains(x)
    contains_anchor = Q is None or Q in cand
    net_bound = 2.0 ** -(n + 1)
    mass_bound = 2.0 ** -(n + 1)
    if not (contains_x and contains_anchor):
        return VerificationRecord(cand.rank, contains_x, contains_anchor, math.inf, net_bound, math.inf, mass_bound)
    tol_mu = 2.0 ** -(n + 5)
    basis = SubharmonicNet.basis_functions()
    vals, bounds = batch_measure(cand, x, list(basis) + cones, 2.0 ** -(n + 3), cfg.solver)
    m_cand = vals[: len(basis)]
    gap = SubharmonicNet.bilinear_gap(m_cand, mu_moments)
    gap += float(bounds[: len(basis)].sum()) + 4 * tol_mu
    if cones:
        cone_gap = float(
            np.max(np.abs(vals[len(basis):] - mu_cones) + bounds[len(basis):]) + tol_mu
        )
        gap = max(gap, cone_gap)
    cutoff = collar_cutoff(cand)
    mass_vals, mass_bounds = mu.integrate_batch_soft([cutoff], tol_mu)
    return VerificationRecord(
        cand.rank,
        contains_x,
        contains_anchor,
        gap,
        net_bound,
        float(mass_vals[0] + mass_bounds[0]),
        mass_bound,
    )


def harmonic_approx_search(
    mu: WeakMeasure,
    x: RationalPoint,
    Q: DyadicPolygon | None,
    n: int,
    cfg: SearchConfig | None = None,
) -> tuple[DyadicPolygon, VerificationRecord]:
    """Greedy search for a polygon satisfying the harmonic approximation
    conditions at index n against the target measure mu.

    Candidates are generated rank by rank: at each rank the maximal polygon
    of measure-clear cubes containing x (fast, measure-guided), verified
    post hoc; on failure the rank increases.  The returned record carries
    the verified condition values.
    """
    cfg = cfg or SearchConfig()
    net = lipschitz_subharmonic_net(min(n, 4))
    tol = 2.0 ** -(n + 5)
    mu_moments, cones, mu_cones = _measure_profile(mu, net, tol)
    r0 = max(Q.rank if Q is not None else 1, 1)
    tested = 0
    for rank in range(r0, cfg.max_rank + 1):
        # per-cube clearance threshold: boundary-adjacent cubes of the
        # candidate can number about 2^(rank+2), so their bump masses must
        # sum below the 2^-(n+1) target of the third condition
        threshold = 2.0 ** -(n + rank + 4)
        cand = _candidate_from_measure(mu, x, Q, rank, threshold, max(tol, threshold / 4))
        if cand is None:
            continue
        tested += 1
        if tested > cfg.candidate_budget:
            break
        rec = verify_harmonic_member(cand, mu, x, Q, n, net, mu_moments, cones, mu_cones, cfg)
        if rec.ok():
            return cand, rec
    raise SearchBudgetExceeded(
        f"no admissible polygon up to rank {cfg.max_rank} for index {n}"
    )


def measure_from_harmonic_approx(
    ha: HarmonicApproximation,
    f,
    n: int,
    cfg: SolverConfig = DEFAULT_CONFIG,
) -> float:
    """Integral of f against the target measure via the (n+1)-th member."""
    P = ha.polygon(n + 1)
    val, _ = harmonic_measure_polygon(P, ha.base_point, f, n + 1, cfg)
    return val


# ---------------------------------------------------------------------------
# interior-to-harmonic upgrade


def concentration_rank(reg: RegularityModulus, n: int, dim: int = 2) -> int:
    """Smallest k > n + d with d 2^(1-k) below the modulus at scale n+2."""
    try:
        eps = reg.eps(n + 2)
    except Exception as exc:
        raise ModulusUndefined(str(exc)) from exc
    if eps is None:
        raise ModulusUndefined(f"no modulus entry for {n + 2}")
    eps = Fraction(eps)
    k = n + dim + 1
    while Fraction(dim) * Fraction(2) ** (1 - k) >= eps:
        k += 1
        if k > 64:
            raise ModulusUndefined("modulus too small for a representable rank")
    return k


def interior_to_harmonic(
    ia: InteriorApproximation,
    reg: RegularityModulus,
    n: int,
    dim: int = 2,
) -> int:
    """Index k_n making the interior member a harmonic approximation member.

    Selection rule: the smallest k > n + d with d 2^(1-k) below the
    regularity threshold for concentration at scale 2^-(n+2).
    """
    return concentration_rank(reg, n, dim)


# ---------------------------------------------------------------------------
# reconstruction from measure data


def boundary_from_measure(
    mu: WeakMeasure,
    budget: int = 2048,
    max_rank: int = 5,
) -> DomainEnumeration:
    """Enumerate single-cube polygons carrying positive boundary mass.

    Tests each cube P with the hat function chi_P(y) dist(y, boundary of P)
    at precisions 2^-m; a certified positive integral proves the domain
    boundary meets P.  Semi-decision: within the budget a cube is emitted
    iff a positive test succeeded.
    """

    def gen() -> Iterator[DyadicPolygon]:
        spent = 0
        for rank in range(1, max_rank + 1):
            side = 2.0**-rank
            for idx in itertools.product(range(2**rank), repeat=2):
                lo = np.array([k * side for k in idx])
                hi = lo + side

                def hat(pts: np.ndarray, lo=lo, hi=hi) -> np.ndarray:
                    pts = np.asarray(pts, dtype=np.float64)
                    inside = np.all((pts > lo) & (pts < hi), axis=1)
                    d = np.minimum.reduce(
                        [pts[:, 0] - lo[0], hi[0] - pts[:, 0], pts[:, 1] - lo[1], hi[1] - pts[:, 1]]
                    )
                    return np.where(inside, np.maximum(d, 0.0), 0.0)

                for m in (3, 5, 7):
                    spent += 1
                    if spent > budget:
                        return
                    tol = 2.0**-m
                    try:
                        val = mu.integrate(BoundaryData(hat, 1.0, side / 2), tol)
                    except Exception:
                        continue
                    if val - tol > 0:
                        yield DyadicPolygon.of(rank, [idx])
                        break
                    if val + tol < 2.0 ** -(m + 1):
                        break  # mass certified too small to bother refining

    emitted: list[DyadicPolygon] = []
    source = gen()

    def nth(k: int) -> DyadicPolygon | None:
        while len(emitted) <= k:
            try:
                emitted.append(next(source))
            except StopIteration:
                return None
        return emitted[k]

    return DomainEnumeration(nth, kind="boundary")


@dataclass
class DomainReconstruction:
    polygon: DyadicPolygon
    rank: int
    threshold: float
    harnack_constant: float


def domain_from_measure(
    mu0: WeakMeasure,
    x0: RationalPoint,
    reg: RegularityModulus,
    n: int,
    harnack_constant: float | None = None,
    rank_cap: int = 8,
) -> DomainReconstruction:
    """Interior polygon around x0 from bump integrals of the anchor measure.

    A rank-k_n cube is interior when its plateau-bump mass (certified) is
    below the Harnack-scaled threshold; the result is the maximal polygon
    of interior cubes containing x0.  The Harnack constant defaults to a
    practical 2^(n+2) scale; the worst-case chain bound of the theory is
    astronomically conservative and recorded only in the certificate.
    """
    k_n = min(concentration_rank(reg, n), rank_cap)
    C = harnack_constant if harnack_constant is not None else 2.0 ** (n + 2)
    threshold = 2.0 ** -(n + 1) / C
    tol = 2.0 ** -(n + 2) / C
    n_cells = 2**k_n
    cubes = [DyadicCube(k_n, idx) for idx in itertools.product(range(n_cells), repeat=2)]
    bumps = [plateau_bump([float(c) for c in cb.center().coords], n) for cb in cubes]
    masses = np.array(mu0.integrate_batch(bumps, tol))
    interior = {
        cb.indices for cb, m in zip(cubes, masses) if m + tol < threshold
    }
    home = tuple(cube_of_point(x0, k_n).indices)
    if home not in interior:
        raise SearchBudgetExceeded("anchor cube not classified interior")
    comp = {home}
    stack = [home]
    while stack:
        cur = stack.pop()
        for axis in range(2):
            for step in (-1, 1):
                nb = cur[:axis] + (cur[axis] + step,) + cur[axis + 1 :]
                if nb in interior and nb not in comp:
                    comp.add(nb)
                    stack.append(nb)
    return DomainReconstruction(DyadicPolygon(k_n, frozenset(comp)), k_n, threshold, C)


# ---------------------------------------------------------------------------
# regularity probing


def regularity_probe(
    boundary_cubes: Callable[[int], set[tuple[int, ...]]],
    mu_at: Callable[[RationalPoint], WeakMeasure],
    n: int,
    dim: int = 2,
    k_budget: int = 9,
) -> int:
    """Stopping-time search for the concentration rank k (then k_n = k + d).

    boundary_cubes(rank) returns the indices of rank-`rank` cubes meeting
    the domain boundary.  The search accepts the first k such that every
    rank-k cube near the boundary sees, from its center, exit mass above
    1 - 2^-(n+3) in the plateau bump of its rank-(n+d) ancestor.
    """
    coarse = boundary_cubes(n + dim)
    near_coarse = _with_neighbors(coarse, n + dim)
    k = n + dim + 1
    while k <= k_budget:
        fine = boundary_cubes(k)
        near_fine = _with_neighbors(fine, k)
        ok = True
        shift = k - (n + dim)
        for idx in sorted(near_fine):
            parent = tuple(i >> shift for i in idx)
            if parent not in near_coarse:
                continue
            cube = DyadicCube(k, idx)
            center = cube.center()
            parent_cube = DyadicCube(n + dim, parent)
            bump = plateau_bump([float(c) for c in parent_cube.center().coords], n + 3)
            mu = mu_at(center)
            if mu is None:
                continue
            tol = 2.0 ** -(n + 5)
            val = mu.integrate(bump, tol)
            if val - tol <= 1.0 - 2.0 ** -(n + 3):
                ok = False
                break
        if ok:
            return k
        k += 1
    raise BudgetExceeded(f"no admissible k at or below {k_budget} for index {n}")


def _with_neighbors(cells: set[tuple[int, ...]], rank: int) -> set[tuple[int, ...]]:
    n = 2**rank
    out = set()
    for idx in cells:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                nb = (idx[0] + di, idx[1] + dj)
                if 0 <= nb[0] < n and 0 <= nb[1] < n:
                    out.add(nb)
    return out
