"""Exact geometry of dyadic cubes and polygons.

All coordinates are exact rationals with power-of-two denominators; every
predicate in this module (membership, adjacency, connectivity, distances)
is decided in exact arithmetic.  A cube of rank m with indices (k_1,..,k_d)
is the half-open box  prod_l [k_l 2^-m, (k_l+1) 2^-m);  a polygon is a
finite set of same-rank cubes whose union has connected interior.  The
ambient box is [0,1]^d, so indices live in [0, 2^m).
"""

from __future__ import annotations

import itertools
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Sequence


class DisjointInteriors(ValueError):
    """Union of the polygons would have a disconnected interior."""


class RankTooSmall(ValueError):
    """Requested rank is below the polygon's native rank."""


class AmbientExceeded(ValueError):
    """Requested objects do not fit in the ambient box [0,1]^d."""


# ---------------------------------------------------------------------------
# rational points and oracles


def _is_dyadic(q: Fraction) -> bool:
    d = q.denominator
    return d & (d - 1) == 0


@dataclass(frozen=True)
class RationalPoint:
    """Point of [0,1]^d with dyadic-rational coordinates."""

    coords: tuple[Fraction, ...]

    def __post_init__(self):
        if len(self.coords) < 2:
            raise ValueError("dimension must be >= 2")
        if not all(_is_dyadic(c) for c in self.coords):
            raise ValueError("coordinates must have power-of-two denominators")

    @classmethod
    def of(cls, *coords) -> "RationalPoint":
        return cls(tuple(Fraction(c) for c in coords))

    @property
    def dim(self) -> int:
        return len(self.coords)

    def as_floats(self) -> tuple[float, ...]:
        return tuple(float(c) for c in self.coords)

    def dist_sq(self, other: "RationalPoint") -> Fraction:
        return sum((a - b) ** 2 for a, b in zip(self.coords, other.coords))


@dataclass(frozen=True)
class PointOracle:
    """Delivers 2^-n-accurate dyadic approximations of a point on demand.

    Successive answers must be mutually consistent:
    ||query(n) - query(n+1)|| < 2^-n + 2^-(n+1).
    """

    query: Callable[[int], RationalPoint]

    @classmethod
    def exact(cls, p: RationalPoint) -> "PointOracle":
        return cls(lambda n: p)

    def resolve(self, n: int) -> RationalPoint:
        return self.query(n)

    def check_consistency(self, upto: int) -> bool:
        for n in range(upto):
            gap = self.query(n).dist_sq(self.query(n + 1))
            if gap >= (Fraction(1, 2**n) + Fraction(1, 2 ** (n + 1))) ** 2:
                return False
        return True


# ---------------------------------------------------------------------------
# cubes


@dataclass(frozen=True)
class DyadicCube:
    """Half-open dyadic cube of side 2^-rank at integer indices."""

    rank: int
    indices: tuple[int, ...]

    def __post_init__(self):
        if self.rank < 0:
            raise ValueError("rank must be nonnegative")

    @property
    def dim(self) -> int:
        return len(self.indices)

    @property
    def side(self) -> Fraction:
        return Fraction(1, 2**self.rank)

    def low(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(k, 2**self.rank) for k in self.indices)

    def high(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(k + 1, 2**self.rank) for k in self.indices)

    def center(self) -> RationalPoint:
        return RationalPoint(
            tuple(Fraction(2 * k + 1, 2 ** (self.rank + 1)) for k in self.indices)
        )

    def contains(self, p: RationalPoint) -> bool:
        return all(lo <= c < lo + self.side for lo, c in zip(self.low(), p.coords))

    def closure_dist_sq(self, p: RationalPoint) -> Fraction:
        """Exact squared distance from p to the closed cube."""
        total = Fraction(0)
        for lo, hi, c in zip(self.low(), self.high(), p.coords):
            if c < lo:
                total += (lo - c) ** 2
            elif c > hi:
                total += (c - hi) ** 2
        return total

    def children(self, m: int) -> Iterator["DyadicCube"]:
        """All rank-m descendants (m >= rank)."""
        f = 2 ** (m - self.rank)
        ranges = [range(k * f, (k + 1) * f) for k in self.indices]
        for idx in itertools.product(*ranges):
            yield DyadicCube(m, idx)


def cube_of_point(p: RationalPoint, rank: int) -> DyadicCube:
    """The rank-`rank` cube containing p (half-open convention)."""
    scale = 2**rank
    return DyadicCube(rank, tuple(math.floor(c * scale) for c in p.coords))


# ---------------------------------------------------------------------------
# polygons


def _face_neighbors(idx: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    for axis in range(len(idx)):
        for step in (-1, 1):
            yield idx[:axis] + (idx[axis] + step,) + idx[axis + 1 :]


def _connected(cells: frozenset[tuple[int, ...]]) -> bool:
    if not cells:
        return False
    start = next(iter(cells))
    seen = {start}
    stack = [start]
    while stack:
        cur = stack.pop()
        for nb in _face_neighbors(cur):
            if nb in cells and nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == len(cells)


@dataclass(frozen=True)
class DyadicPolygon:
    """Finite set of same-rank cubes with connected interior."""

    rank: int
    cells: frozenset[tuple[int, ...]]

    def __post_init__(self):
        if not self.cells:
            raise ValueError("polygon must contain at least one cube")
        n = 2**self.rank
        for idx in self.cells:
            if any(k < 0 or k >= n for k in idx):
                raise AmbientExceeded(f"cube {idx} outside [0,1]^d at rank {self.rank}")
        if not _connected(self.cells):
            raise DisjointInteriors("cube set has disconnected interior")

    @classmethod
    def of(cls, rank: int, cells: Iterable[Sequence[int]]) -> "DyadicPolygon":
        return cls(rank, frozenset(tuple(c) for c in cells))

    @classmethod
    def full_box(cls, rank: int, dim: int = 2) -> "DyadicPolygon":
        return cls(rank, frozenset(itertools.product(range(2**rank), repeat=dim)))

    @property
    def dim(self) -> int:
        return len(next(iter(self.cells)))

    @property
    def side(self) -> Fraction:
        return Fraction(1, 2**self.rank)

    def cubes(self) -> Iterator[DyadicCube]:
        for idx in sorted(self.cells):
            yield DyadicCube(self.rank, idx)

    def contains(self, p: RationalPoint) -> bool:
        """Point-set membership (union of half-open cubes)."""
        scale = 2**self.rank
        if any(c < 0 or c >= 1 for c in p.coords):
            return False
        return tuple(math.floor(c * scale) for c in p.coords) in self.cells

    def interior_contains(self, p: RationalPoint) -> bool:
        return self.contains(p) and self.boundary_dist_sq(p) > 0

    def boundary_faces(self) -> list[tuple[int, tuple[Fraction, ...], tuple[Fraction, ...]]]:
        """Closed boundary faces as (axis, low corner, high corner).

        A face of a cube lies on the boundary iff the face-neighbor cube is
        not part of the polygon.  Faces are degenerate boxes: lo[axis] ==
        hi[axis].
        """
        faces = []
        s = self.side
        for idx in sorted(self.cells):
            lo = tuple(Fraction(k, 2**self.rank) for k in idx)
            hi = tuple(l + s for l in lo)
            for axis in range(len(idx)):
                for step in (-1, 1):
                    nb = idx[:axis] + (idx[axis] + step,) + idx[axis + 1 :]
                    if nb in self.cells:
                        continue
                    plane = lo[axis] if step == -1 else hi[axis]
                    flo = lo[:axis] + (plane,) + lo[axis + 1 :]
                    fhi = hi[:axis] + (plane,) + hi[axis + 1 :]
                    faces.append((axis, flo, fhi))
        return faces

    def boundary_dist_sq(self, p: RationalPoint) -> Fraction:
        """Exact squared distance from p to the topological boundary."""
        best = None
        for _, flo, fhi in self.boundary_faces():
            total = Fraction(0)
            for lo, hi, c in zip(flo, fhi, p.coords):
                if c < lo:
                    total += (lo - c) ** 2
                elif c > hi:
                    total += (c - hi) ** 2
            if best is None or total < best:
                best = total
                if best == 0:
                    break
        return best

    def area(self) -> Fraction:
        return len(self.cells) * self.side ** self.dim

    def __contains__(self, other: "DyadicPolygon") -> bool:
        """Point-set inclusion other <= self."""
        m = max(self.rank, other.rank)
        return refine(other, m).cells <= refine(self, m).cells


# ---------------------------------------------------------------------------
# operations


def refine(P: DyadicPolygon, m: int) -> DyadicPolygon:
    """Re-express P at rank m >= rank(P); same point set."""
    if m < P.rank:
        raise RankTooSmall(f"cannot refine rank-{P.rank} polygon to rank {m}")
    if m == P.rank:
        return P
    f = 2 ** (m - P.rank)
    d = P.dim
    cells = set()
    for idx in P.cells:
        for off in itertools.product(range(f), repeat=d):
            cells.add(tuple(k * f + o for k, o in zip(idx, off)))
    return DyadicPolygon(m, frozenset(cells))


def polygon_union(P: DyadicPolygon, P2: DyadicPolygon) -> DyadicPolygon:
    """Union of two dyadic polygons at rank max(rank(P), rank(P2)).

    Raises DisjointInteriors when the union's interior is disconnected
    (the two polygons neither overlap nor share a face).
    """
    m = max(P.rank, P2.rank)
    cells = refine(P, m).cells | refine(P2, m).cells
    if not _connected(cells):
        raise DisjointInteriors("polygon interiors do not meet")
    return DyadicPolygon(m, cells)


def sqrt_enclosure(q: Fraction, n: int) -> tuple[Fraction, Fraction]:
    """Dyadic enclosure (lo, hi) of sqrt(q) with hi - lo <= 2^-n, q >= 0."""
    if q < 0:
        raise ValueError("negative radicand")
    if q == 0:
        return Fraction(0), Fraction(0)
    p = n + 1
    scaled = q.numerator * (4**p) // q.denominator
    r = math.isqrt(scaled)
    lo = Fraction(r, 2**p)
    hi = Fraction(r + 1, 2**p)
    # floor division loses at most 1 ulp of the scaled integer
    if lo * lo > q:
        lo = Fraction(max(r - 1, 0), 2**p)
    return lo, hi


def boundary_distance(x: RationalPoint, P: DyadicPolygon, n: int = 30) -> tuple[Fraction, Fraction]:
    """Enclosure of dist(x, boundary of P) at precision 2^-n.

    The squared distance is computed exactly; only the square root is
    enclosed.  The enclosure is (0, 0) iff x lies on the boundary.
    """
    return sqrt_enclosure(P.boundary_dist_sq(x), n)


def enumerate_candidates(
    n: int,
    x: RationalPoint,
    Q: DyadicPolygon | None = None,
    dim: int = 2,
) -> Iterator[DyadicPolygon]:
    """Stream of all rank-n polygons in [0,1]^d containing x (and Q if given).

    Candidates appear in lexicographic order of their sorted cube-index
    lists.  Every emitted polygon is connected and duplicate-free by
    construction; the stream is finite but may be astronomically long for
    n >= 3, so consumers should impose budgets.
    """
    if any(c < 0 or c > 1 for c in x.coords):
        raise AmbientExceeded("base point outside the ambient box")
    universe = sorted(itertools.product(range(2**n), repeat=dim))
    pos = {c: i for i, c in enumerate(universe)}
    base = {tuple(cube_of_point(x, n).indices)}
    if Q is not None:
        if Q.rank > n:
            raise RankTooSmall(f"anchor polygon rank {Q.rank} exceeds candidate rank {n}")
        base |= set(refine(Q, n).cells)
    base_positions = sorted(pos[c] for c in base)

    def emit(chosen: list[int], next_required: int) -> Iterator[DyadicPolygon]:
        # chosen: positions in increasing order; next_required indexes
        # base_positions; all base cells below max(chosen) are included.
        if next_required == len(base_positions):
            cells = frozenset(universe[i] for i in chosen)
            if _connected(cells):
                yield DyadicPolygon(n, cells)
        start = chosen[-1] + 1 if chosen else 0
        limit = (
            base_positions[next_required]
            if next_required < len(base_positions)
            else len(universe) - 1
        )
        for nxt in range(start, limit + 1):
            req = next_required
            if req < len(base_positions) and nxt == base_positions[req]:
                req += 1
            yield from emit(chosen + [nxt], req)

    yield from emit([], 0)


# ---------------------------------------------------------------------------
# enumerations of a priori unknown domains


@dataclass
class DomainEnumeration:
    """Callback producing the k-th polygon of a lower-computable set.

    kind 'interior': emitted polygons have closure inside the open domain
    and their union exhausts it.  kind 'boundary': a polygon is eventually
    emitted iff its interior meets the boundary of the domain.
    """

    next: Callable[[int], DyadicPolygon | None]
    kind: str = "interior"

    def take(self, k: int) -> list[DyadicPolygon]:
        out = []
        for i in range(k):
            p = self.next(i)
            if p is None:
                break
            out.append(p)
        return out

    @classmethod
    def from_list(cls, polys: Sequence[DyadicPolygon], kind: str = "interior") -> "DomainEnumeration":
        return cls(lambda k: polys[k] if k < len(polys) else None, kind)


def distance_to_enumerated_boundary(
    x: PointOracle,
    interior: DomainEnumeration,
    boundary: DomainEnumeration,
    n: int,
    max_terms: int = 4096,
) -> Fraction:
    """q with |q - dist(x, boundary of the domain)| < 2^-n, by greedy search.

    Exhausts interior polygons around x while collecting boundary-touching
    polygons of shrinking size; the distance is bracketed from below by the
    ball exhausted around x and from above by the nearest boundary polygon.
    """
    target = Fraction(1, 2**n)
    xr = x.resolve(n + 3)
    slack = Fraction(1, 2 ** (n + 3))
    upper = None  # upper bound on dist
    lower = Fraction(0)
    fine: set[tuple[int, ...]] = set()
    fine_rank = 0
    k_int = 0
    k_bnd = 0
    while True:
        # pull one more boundary polygon: min over its closed cubes
        p = boundary.next(k_bnd)
        k_bnd += 1
        if p is not None:
            # the domain boundary meets the cube's interior, so it comes no
            # farther than the cube's far side: dist <= dist(x,cube) + diam
            _, diam_hi = sqrt_enclosure(Fraction(p.dim) * p.side**2, n + 3)
            for idx in p.cells:
                _, hi = sqrt_enclosure(DyadicCube(p.rank, idx).closure_dist_sq(xr), n + 3)
                cand = hi + diam_hi
                if upper is None or cand < upper:
                    upper = cand
        # pull interior polygons; lower bound = distance from x to the region
        # not yet exhausted by interior cubes
        p = interior.next(k_int)
        k_int += 1
        if p is not None:
            if not fine:
                fine_rank = p.rank
            if p.rank > fine_rank:
                f = 2 ** (p.rank - fine_rank)
                fine = {
                    tuple(k * f + o for k, o in zip(idx, off))
                    for idx in fine
                    for off in itertools.product(range(f), repeat=p.dim)
                }
                fine_rank = p.rank
            f = 2 ** (fine_rank - p.rank)
            for idx in p.cells:
                for off in itertools.product(range(f), repeat=p.dim):
                    fine.add(tuple(k * f + o for k, o in zip(idx, off)))
            lower = _uncovered_distance(xr, fine, fine_rank)
        if upper is not None and upper - lower < target - 2 * slack:
            return (upper + lower) / 2
        if k_int > max_terms and k_bnd > max_terms:
            raise RuntimeError("enumeration budget exhausted before certification")


def _uncovered_distance(x: RationalPoint, fine: set[tuple[int, ...]], m: int) -> Fraction:
    """Distance from x to the nearest point not covered by the seen cubes.

    Lower-bounds dist(x, boundary) when the seen cubes all lie inside the
    domain.  Scans rings of the rank-m lattice outward from x.
    """
    if not fine:
        return Fraction(0)
    scale = 2**m
    home = tuple(min(scale - 1, max(0, math.floor(c * scale))) for c in x.coords)
    if home not in fine:
        return Fraction(0)
    side = Fraction(1, scale)
    best_sq: Fraction | None = None
    dim = len(home)
    for ring in range(1, scale + 2):
        if best_sq is not None and best_sq <= ((ring - 1) * side) ** 2:
            break
        lo = [home[a] - ring for a in range(dim)]
        hi = [home[a] + ring for a in range(dim)]
        for idx in itertools.product(*(range(l, h + 1) for l, h in zip(lo, hi))):
            if max(abs(i - h) for i, h in zip(idx, home)) != ring:
                continue
            outside_box = any(k < 0 or k >= scale for k in idx)
            if outside_box or idx not in fine:
                d2 = Fraction(0)
                for k, c in zip(idx, x.coords):
                    l, h = Fraction(k, scale), Fraction(k + 1, scale)
                    if c < l:
                        d2 += (l - c) ** 2
                    elif c > h:
                        d2 += (c - h) ** 2
                if best_sq is None or d2 < best_sq:
                    best_sq = d2
        if ring > scale:
            break
    if best_sq is None:
        return Fraction(1)
    lo_r, _ = sqrt_enclosure(best_sq, m + 4)
    return lo_r


def boundary_net(
    complement_exhaustion: DomainEnumeration,
    intersecting: DomainEnumeration,
    n: int,
    ambient_rank: int = 0,
    max_terms: int = 4096,
) -> list[RationalPoint]:
    """Finite 2^-n-net (Hausdorff) of a compact set from its two handles.

    complement_exhaustion enumerates polygons exhausting the complement of K
    in the ambient box; intersecting enumerates the dyadic cubes of size
    2^-(n+1) meeting K.  Returns the centers of collected cubes once the two
    pictures agree to Hausdorff distance < 2^-(n+1).
    """
    target_sq = Fraction(1, 4 ** (n + 1))
    removed: dict[int, set[tuple[int, ...]]] = {}
    hits: set[tuple[int, ...]] = set()
    hit_rank = n + 1
    k_hit = 0
    # the collection of same-size cubes meeting K is finite: drain it first
    while k_hit < max_terms:
        q = intersecting.next(k_hit)
        k_hit += 1
        if q is None:
            break
        if q.rank == hit_rank:
            hits.update(q.cells)
    for k in range(max_terms):
        p = complement_exhaustion.next(k)
        if p is not None:
            removed.setdefault(p.rank, set()).update(p.cells)
        if not hits:
            continue
        if _hausdorff_ok(removed, hits, hit_rank, target_sq):
            return [DyadicCube(hit_rank, idx).center() for idx in sorted(hits)]
        if p is None:
            break
    raise RuntimeError("net handles did not converge within budget")


def _hausdorff_ok(
    removed: dict[int, set[tuple[int, ...]]],
    hits: set[tuple[int, ...]],
    hit_rank: int,
    target_sq: Fraction,
) -> bool:
    # S1 = ambient minus removed (at rank hit_rank), S2 = hit cubes.
    m = hit_rank
    for rank in removed:
        m = max(m, rank)
    full = set(itertools.product(range(2**m), repeat=2))
    rem_fine: set[tuple[int, ...]] = set()
    for rank, cells in removed.items():
        f = 2 ** (m - rank)
        for idx in cells:
            for off in itertools.product(range(f), repeat=len(idx)):
                rem_fine.add(tuple(k * f + o for k, o in zip(idx, off)))
    s1 = full - rem_fine
    f = 2 ** (m - hit_rank)
    s2 = set()
    for idx in hits:
        for off in itertools.product(range(f), repeat=len(idx)):
            s2.add(tuple(k * f + o for k, o in zip(idx, off)))
    if not s1 or not s2:
        return False
    return _dir_hausdorff_sq(s1, s2, m) <= target_sq and _dir_hausdorff_sq(s2, s1, m) <= target_sq


def _dir_hausdorff_sq(a: set[tuple[int, ...]], b: set[tuple[int, ...]], rank: int) -> Fraction:
    """max over cubes of a of (distance from the cube to the set b)^2, conservative.

    Computed in floats with a padding that safely dominates rounding at the
    desk scales used here (rank <= 12).
    """
    h = 1.0 / 2**rank
    bl = sorted(b)
    worst = 0.0
    for idx in a:
        cx = [(k + 0.5) * h for k in idx]
        best = math.inf
        for j in bl:
            d2 = 0.0
            for axis, k in enumerate(j):
                lo, hi = k * h, (k + 1) * h
                c = cx[axis]
                if c < lo:
                    d2 += (lo - c) ** 2
                elif c > hi:
                    d2 += (c - hi) ** 2
            if d2 < best:
                best = d2
        # any point of the a-cube is within half a diameter of its center
        val = (math.sqrt(best) + math.sqrt(len(idx)) * h / 2 + 1e-12) ** 2
        if val > worst:
            worst = val
    return Fraction(worst)


# ---------------------------------------------------------------------------
# domain file format

_HEADER = re.compile(r"^dyadic-polygon v1 d=(\d+) rank=(\d+)$")


def write_polygon(P: DyadicPolygon, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"dyadic-polygon v1 d={P.dim} rank={P.rank}\n")
        for idx in sorted(P.cells):
            fh.write(" ".join(str(k) for k in idx) + "\n")


def read_polygon(path: str) -> DyadicPolygon:
    with open(path) as fh:
        header = fh.readline().strip()
        m = _HEADER.match(header)
        if not m:
            raise ValueError(f"bad domain file header: {header!r}")
        d, rank = int(m.group(1)), int(m.group(2))
        cells = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            idx = tuple(int(t) for t in line.split())
            if len(idx) != d:
                raise ValueError(f"expected {d} indices per line, got {line!r}")
            cells.append(idx)
    return DyadicPolygon.of(rank, cells)


def read_enumeration_dir(path: str, kind: str = "interior") -> DomainEnumeration:
    """Enumeration from a directory of 000001.dp, 000002.dp, ... files."""
    names = sorted(f for f in os.listdir(path) if f.endswith(".dp"))
    files = [os.path.join(path, f) for f in names]

    def nth(k: int) -> DyadicPolygon | None:
        if k >= len(files):
            return None
        return read_polygon(files[k])

    return DomainEnumeration(nth, kind)


def write_enumeration_dir(polys: Sequence[DyadicPolygon], path: str) -> None:
    os.makedirs(path, exist_ok=True)
    for i, p in enumerate(polys, start=1):
        write_polygon(p, os.path.join(path, f"{i:06d}.dp"))
