import itertools
import math
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmk.dyadic import (
    AmbientExceeded,
    DisjointInteriors,
    DomainEnumeration,
    DyadicCube,
    DyadicPolygon,
    PointOracle,
    RankTooSmall,
    RationalPoint,
    boundary_distance,
    boundary_net,
    cube_of_point,
    distance_to_enumerated_boundary,
    enumerate_candidates,
    polygon_union,
    read_polygon,
    refine,
    sqrt_enclosure,
    write_polygon,
)

UNIT = DyadicPolygon.full_box(0)


def rand_polygon(rng, rank, dim=2, grow=6):
    n = 2**rank
    cur = {(rng.randrange(n),) * 0 + tuple(rng.randrange(n) for _ in range(dim))}
    for _ in range(grow):
        base = rng.choice(sorted(cur))
        axis = rng.randrange(dim)
        step = rng.choice((-1, 1))
        nb = base[:axis] + (base[axis] + step,) + base[axis + 1 :]
        if all(0 <= k < n for k in nb):
            cur.add(nb)
    return DyadicPolygon.of(rank, cur)


# ---------------------------------------------------------------------------
# union / refine


def test_union_shared_face_joins():
    a = DyadicPolygon.of(1, [(0, 0)])
    b = DyadicPolygon.of(1, [(1, 0)])
    u = polygon_union(a, b)
    assert u.rank == 1 and len(u.cells) == 2


def test_union_idempotent():
    p = DyadicPolygon.of(1, [(0, 0), (0, 1)])
    assert polygon_union(p, p) == p


def test_union_mixed_rank_counts_cubes_by_brute_force():
    p = DyadicPolygon.of(1, [(0, 0)])  # [0,1/2)^2
    q = DyadicPolygon.of(2, [(1, 1), (2, 1)])  # overlaps p and pokes out
    u = polygon_union(p, q)
    assert u.rank == 2
    # brute force: every rank-2 cube whose center lands in p or q
    expected = set()
    for idx in itertools.product(range(4), repeat=2):
        c = DyadicCube(2, idx).center()
        if p.contains(c) or q.contains(c):
            expected.add(idx)
    assert u.cells == expected


def test_union_disjoint_rejected():
    a = DyadicPolygon.of(1, [(0, 0)])
    b = DyadicPolygon.of(1, [(1, 1)])  # touches only at a corner
    with pytest.raises(DisjointInteriors):
        polygon_union(a, b)


def test_refine_identity_and_counting():
    p = DyadicPolygon.of(0, [(0, 0)])
    assert refine(p, 0) == p
    assert len(refine(p, 2).cells) == 16
    with pytest.raises(RankTooSmall):
        refine(refine(p, 2), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.randoms())
def test_refine_preserves_membership(extra, pyrng):
    rng = random.Random(pyrng.randrange(10**9))
    p = rand_polygon(rng, 2)
    q = refine(p, 2 + extra)
    for _ in range(50):
        pt = RationalPoint.of(
            Fraction(rng.randrange(0, 64), 64), Fraction(rng.randrange(0, 64), 64)
        )
        assert p.contains(pt) == q.contains(pt)


def test_union_refine_agree_with_rasterization():
    rng = random.Random(7)
    for _ in range(25):
        a = rand_polygon(rng, rng.randrange(1, 4))
        b = rand_polygon(rng, rng.randrange(1, 4))
        m = max(a.rank, b.rank) + 2
        try:
            u = polygon_union(a, b)
        except DisjointInteriors:
            continue
        raster = refine(a, m).cells | refine(b, m).cells
        assert refine(u, m).cells == raster


# ---------------------------------------------------------------------------
# distances


def test_boundary_distance_center_of_unit_square():
    lo, hi = boundary_distance(RationalPoint.of(Fraction(1, 2), Fraction(1, 2)), UNIT, 20)
    assert lo <= Fraction(1, 2) <= hi
    assert hi - lo <= Fraction(1, 2**20)


def test_boundary_distance_zero_iff_on_boundary():
    p = DyadicPolygon.of(1, [(0, 0), (1, 0)])
    on = RationalPoint.of(Fraction(1, 2), 0)
    inside = RationalPoint.of(Fraction(1, 2), Fraction(1, 4))
    assert p.boundary_dist_sq(on) == 0
    assert p.boundary_dist_sq(inside) > 0
    lo, hi = boundary_distance(on, p)
    assert lo == hi == 0


def test_boundary_distance_matches_face_brute_force():
    rng = random.Random(3)
    for _ in range(20):
        poly = rand_polygon(rng, 3)
        x = RationalPoint.of(
            Fraction(rng.randrange(0, 128), 128), Fraction(rng.randrange(0, 128), 128)
        )
        # brute force over faces using float arithmetic
        best = math.inf
        for axis, flo, fhi in poly.boundary_faces():
            d2 = 0.0
            for lo, hi, c in zip(flo, fhi, x.coords):
                if c < lo:
                    d2 += float(lo - c) ** 2
                elif c > hi:
                    d2 += float(c - hi) ** 2
            best = min(best, d2)
        assert math.isclose(float(poly.boundary_dist_sq(x)), best, abs_tol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.fractions(0, 4, max_denominator=2**12))
def test_sqrt_enclosure_brackets(q):
    lo, hi = sqrt_enclosure(q, 12)
    assert lo * lo <= q <= hi * hi
    assert hi - lo <= Fraction(2, 2**12)


# ---------------------------------------------------------------------------
# candidate enumeration


def test_enumerate_rank0_single():
    cands = list(enumerate_candidates(0, RationalPoint.of(Fraction(1, 4), Fraction(1, 4))))
    assert len(cands) == 1
    assert cands[0] == DyadicPolygon.full_box(0)


def test_enumerate_rank1_counts_match_brute_force():
    x = RationalPoint.of(Fraction(1, 4), Fraction(1, 4))
    cands = list(enumerate_candidates(1, x))
    cells = list(itertools.product(range(2), repeat=2))
    expected = 0
    xc = tuple(cube_of_point(x, 1).indices)
    for r in range(1, 5):
        for sub in itertools.combinations(cells, r):
            if xc not in sub:
                continue
            try:
                DyadicPolygon.of(1, sub)
                expected += 1
            except DisjointInteriors:
                continue
    assert len(cands) == expected
    # no duplicates, all connected, all contain x
    seen = set(c.cells for c in cands)
    assert len(seen) == len(cands)
    assert all(c.contains(x) for c in cands)


def test_enumerate_lexicographic_order():
    x = RationalPoint.of(Fraction(1, 4), Fraction(1, 4))
    keys = [tuple(sorted(c.cells)) for c in enumerate_candidates(1, x)]
    assert keys == sorted(keys)


def test_enumerate_full_anchor_yields_box_only():
    x = RationalPoint.of(Fraction(1, 4), Fraction(1, 4))
    full = DyadicPolygon.full_box(1)
    cands = list(enumerate_candidates(1, x, Q=full))
    assert cands == [full]


# ---------------------------------------------------------------------------
# oracles, enumerated distance, nets


def disk_rasterization(rank, center=(Fraction(1, 2), Fraction(1, 2)), radius=Fraction(1, 2), strict=True):
    """Rank-`rank` cubes whose closure lies inside the disk."""
    cells = []
    r2 = radius * radius
    for idx in itertools.product(range(2**rank), repeat=2):
        cube = DyadicCube(rank, idx)
        corners = itertools.product(*((lo, hi) for lo, hi in zip(cube.low(), cube.high())))
        worst = max(sum((a - b) ** 2 for a, b in zip(c, center)) for c in corners)
        if (worst < r2) if strict else (worst <= r2):
            cells.append(idx)
    return DyadicPolygon.of(rank, cells)


def disk_boundary_cubes(rank, center=(Fraction(1, 2), Fraction(1, 2)), radius=Fraction(1, 2)):
    cells = []
    r2 = radius * radius
    for idx in itertools.product(range(2**rank), repeat=2):
        cube = DyadicCube(rank, idx)
        corners = list(itertools.product(*((lo, hi) for lo, hi in zip(cube.low(), cube.high()))))
        d2 = [sum((a - b) ** 2 for a, b in zip(c, center)) for c in corners]
        if min(d2) < r2 < max(d2):
            cells.append(idx)
    return [DyadicPolygon.of(rank, [c]) for c in cells]


def test_distance_to_enumerated_boundary_disk_center():
    # unit disk mapped to the [0,1]^2 frame: radius 1/2 around the center
    interior = DomainEnumeration.from_list([disk_rasterization(r) for r in range(2, 7)])
    bnd = []
    for r in range(2, 7):
        bnd.extend(disk_boundary_cubes(r))
    boundary = DomainEnumeration.from_list(bnd, kind="boundary")
    x = PointOracle.exact(RationalPoint.of(Fraction(1, 2), Fraction(1, 2)))
    q = distance_to_enumerated_boundary(x, interior, boundary, 4)
    assert abs(q - Fraction(1, 2)) < Fraction(1, 16)


def test_distance_to_enumerated_boundary_off_center():
    interior = DomainEnumeration.from_list([disk_rasterization(r) for r in range(2, 8)])
    bnd = []
    for r in range(2, 8):
        bnd.extend(disk_boundary_cubes(r))
    boundary = DomainEnumeration.from_list(bnd, kind="boundary")
    # point at (3/4, 1/2): true distance 1/4
    x = PointOracle.exact(RationalPoint.of(Fraction(3, 4), Fraction(1, 2)))
    q = distance_to_enumerated_boundary(x, interior, boundary, 4)
    assert abs(q - Fraction(1, 4)) < Fraction(1, 16)


def test_point_oracle_consistency():
    p = RationalPoint.of(Fraction(1, 3 * 0 + 4), Fraction(3, 8))
    assert PointOracle.exact(p).check_consistency(10)


def test_boundary_net_single_point():
    # K = {(1/2, 1/2)}: complement exhaustion leaves the center cube at
    # every rank; intersecting cubes are those containing the point.
    target = RationalPoint.of(Fraction(1, 2), Fraction(1, 2))

    def complement(k):
        rank = k + 2
        n = 2**rank
        cells = [
            idx
            for idx in itertools.product(range(n), repeat=2)
            if DyadicCube(rank, idx).closure_dist_sq(target) > 0
        ]
        return DyadicPolygon.of(rank, cells) if cells else None

    def hits_at(rank):
        n = 2**rank
        return [
            DyadicPolygon.of(rank, [idx])
            for idx in itertools.product(range(n), repeat=2)
            if DyadicCube(rank, idx).closure_dist_sq(target) == 0
        ]

    for n in (1, 2):
        hit_list = hits_at(n + 1)
        net = boundary_net(
            DomainEnumeration(complement),
            DomainEnumeration.from_list(hit_list, "boundary"),
            n,
        )
        assert net
        for p in net:
            assert p.dist_sq(target) <= Fraction(2, 4 ** (n + 1))


def test_boundary_net_square_boundary():
    # K = boundary of [1/4,3/4]^2
    lo, hi = Fraction(1, 4), Fraction(3, 4)

    def on_k_dist_sq(pt):
        x, y = pt.coords
        inside_x = min(x - lo, hi - x)
        inside_y = min(y - lo, hi - y)
        if lo <= x <= hi and lo <= y <= hi:
            return min(inside_x, inside_y) ** 2
        dx = max(lo - x, x - hi, 0)
        dy = max(lo - y, y - hi, 0)
        return dx * dx + dy * dy

    def cube_meets_k(cube):
        xs = (cube.low()[0], cube.high()[0])
        ys = (cube.low()[1], cube.high()[1])
        # cube meets boundary iff it meets the closed square but is not
        # strictly inside the open square
        meets_sq = not (xs[1] < lo or xs[0] > hi or ys[1] < lo or ys[0] > hi)
        strictly_inside = lo < xs[0] and xs[1] < hi and lo < ys[0] and ys[1] < hi
        return meets_sq and not strictly_inside

    def components(cells):
        remaining = set(cells)
        comps = []
        while remaining:
            start = remaining.pop()
            comp = {start}
            stack = [start]
            while stack:
                cur = stack.pop()
                for axis in range(2):
                    for step in (-1, 1):
                        nb = cur[:axis] + (cur[axis] + step,) + cur[axis + 1 :]
                        if nb in remaining:
                            remaining.remove(nb)
                            comp.add(nb)
                            stack.append(nb)
            comps.append(comp)
        return comps

    comp_polys = []
    for rank in (3, 4, 5):
        n_ = 2**rank
        cells = [
            idx
            for idx in itertools.product(range(n_), repeat=2)
            if not cube_meets_k(DyadicCube(rank, idx))
        ]
        for comp in components(cells):
            comp_polys.append(DyadicPolygon.of(rank, comp))

    def complement(k):
        return comp_polys[k] if k < len(comp_polys) else None

    n = 2
    rank = n + 1
    hits = [
        DyadicPolygon.of(rank, [idx])
        for idx in itertools.product(range(2**rank), repeat=2)
        if cube_meets_k(DyadicCube(rank, idx))
    ]
    net = boundary_net(DomainEnumeration(complement), DomainEnumeration.from_list(hits, "boundary"), n)
    assert net
    for p in net:
        assert on_k_dist_sq(p) < Fraction(1, 4**n)


# ---------------------------------------------------------------------------
# file format


def test_polygon_file_round_trip(tmp_path):
    p = rand_polygon(random.Random(1), 3)
    path = tmp_path / "p.dp"
    write_polygon(p, str(path))
    assert read_polygon(str(path)) == p
    header = path.read_text().splitlines()[0]
    assert header == "dyadic-polygon v1 d=2 rank=3"
