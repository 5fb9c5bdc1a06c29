"""Walk-on-spheres estimation of harmonic measure integrals.

A scene is a finite list of boundary pieces (segments and circular arcs)
covering the boundary of a planar domain.  Walks step to the sphere of the
exact distance to the nearest piece and absorb in an eps-shell; absorbed
walks are projected to the nearest boundary point, which carries a piece
label for exit classification.  All randomness is counter-based, so runs
are reproducible from the recorded 64-bit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import CounterRng

DEFAULT_SHELL = 2.0**-14
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Segment:
    """Closed segment boundary piece."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    label: str = ""

    def dist_project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(self.p0)
        b = np.asarray(self.p1)
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            proj = np.broadcast_to(a, pts.shape).copy()
        else:
            t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
        d = np.linalg.norm(pts - proj, axis=1)
        return d, proj


@dataclass(frozen=True)
class Arc:
    """Circular arc from angle a0 to a1 (counterclockwise, radians).

    A full circle is a0=0, a1=2*pi.
    """

    center: tuple[float, float]
    radius: float
    a0: float = 0.0
    a1: float = TWO_PI
    label: str = ""

    @property
    def full(self) -> bool:
        return self.a1 - self.a0 >= TWO_PI - 1e-15

    def dist_project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center)
        v = pts - c
        r = np.linalg.norm(v, axis=1)
        safe = np.maximum(r, 1e-300)
        if self.full:
            proj = c + v * (self.radius / safe)[:, None]
            proj[r == 0] = c + np.array([self.radius, 0.0])
            return np.abs(r - self.radius), proj
        ang = np.arctan2(v[:, 1], v[:, 0])
        rel = np.mod(ang - self.a0, TWO_PI)
        width = self.a1 - self.a0
        onarc = rel <= width
        # inside the angular sector: radial projection; outside: the nearer
        # endpoint in euclidean distance
        radial = c + v * (self.radius / safe)[:, None]
        d_radial = np.abs(r - self.radius)
        e0 = c + self.radius * np.array([math.cos(self.a0), math.sin(self.a0)])
        e1 = c + self.radius * np.array([math.cos(self.a1), math.sin(self.a1)])
        d0 = np.linalg.norm(pts - e0, axis=1)
        d1 = np.linalg.norm(pts - e1, axis=1)
        end_proj = np.where((d0 <= d1)[:, None], np.broadcast_to(e0, pts.shape), np.broadcast_to(e1, pts.shape))
        end_d = np.minimum(d0, d1)
        proj = np.where(onarc[:, None], radial, end_proj)
        d = np.where(onarc, d_radial, end_d)
        return d, proj


Piece = Segment | Arc


class Scene:
    """Boundary-piece collection with vectorized nearest-piece queries."""

    def __init__(self, pieces: Sequence[Piece]):
        if not pieces:
            raise ValueError("scene needs at least one boundary piece")
        self.pieces = list(pieces)

    def nearest(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(distance, projection, piece index) for each query point."""
        best_d = None
        best_proj = None
        best_i = None
        for i, piece in enumerate(self.pieces):
            d, proj = piece.dist_project(pts)
            if best_d is None:
                best_d, best_proj, best_i = d, proj, np.zeros(len(pts), dtype=np.int64)
            else:
                better = d < best_d
                best_d = np.where(better, d, best_d)
                best_proj = np.where(better[:, None], proj, best_proj)
                best_i = np.where(better, i, best_i)
        return best_d, best_proj, best_i

    def distance(self, pts: np.ndarray) -> np.ndarray:
        d, _, _ = self.nearest(pts)
        return d

    def labels(self) -> list[str]:
        return [p.label for p in self.pieces]


class PolygonScene:
    """Scene for a dyadic polygon, with a nodal distance-field accelerator.

    Boundary faces come straight from the occupancy grid as integer arrays
    (no exact-rational round trip), nearest-face queries are vectorized
    over all faces at once, and a nodal distance field gives a safe lower
    bound on the boundary distance (the distance function is 1-Lipschitz).
    Walks step on the smaller sphere, which keeps the estimator exact, and
    fall back to exact face distances only near the boundary.
    """

    def __init__(self, polygon, grid_rank: int | None = None):
        from .dyadic import refine

        self.polygon = polygon
        q0 = polygon.rank
        occ0 = np.zeros((2**q0, 2**q0), dtype=bool)
        for idx in polygon.cells:
            occ0[idx] = True
        h0 = 1.0 / 2**q0
        # vertical faces: between cells (i-1, j) and (i, j)
        padded = np.zeros((2**q0 + 2, 2**q0 + 2), dtype=bool)
        padded[1:-1, 1:-1] = occ0
        vdiff = padded[1:, 1:-1] != padded[:-1, 1:-1]  # (n+1, n)
        hdiff = padded[1:-1, 1:] != padded[1:-1, :-1]  # (n, n+1)
        vi, vj = np.nonzero(vdiff)
        hi, hj = np.nonzero(hdiff)
        # vertical face k: x = vi*h, y in [vj*h, (vj+1)*h]
        self._vx = vi * h0
        self._vlo = vj * h0
        self._vhi = (vj + 1) * h0
        # horizontal face k: y = hj*h, x in [hi*h, (hi+1)*h]
        self._hy = hj * h0
        self._hlo = hi * h0
        self._hhi = (hi + 1) * h0
        self._nv = len(vi)
        q = grid_rank if grid_rank is not None else min(polygon.rank + 2, 8)
        q = max(q, polygon.rank)
        self._q = q
        n = 2**q + 1
        xs = np.linspace(0.0, 1.0, n)
        nodes = np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)
        nfaces = max(1, self._nv + len(self._hy))
        chunk = max(256, min(1 << 14, (1 << 23) // nfaces))
        d = np.empty(len(nodes))
        for lo in range(0, len(nodes), chunk):
            part = nodes[lo : lo + chunk]
            d[lo : lo + len(part)], _, _ = self._face_nearest(part)
        self._field = d.reshape(n, n)
        self._h = 1.0 / 2**q
        if q == q0:
            occ = occ0
        else:
            occ = np.zeros((2**q, 2**q), dtype=bool)
            for idx in refine(polygon, q).cells:
                occ[idx] = True
        self._occ = occ

    def _face_nearest(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = pts[:, 0][:, None]
        y = pts[:, 1][:, None]
        dv = (x - self._vx[None, :]) ** 2 + (
            np.clip(y, self._vlo[None, :], self._vhi[None, :]) - y
        ) ** 2
        dh = (y - self._hy[None, :]) ** 2 + (
            np.clip(x, self._hlo[None, :], self._hhi[None, :]) - x
        ) ** 2
        kv = np.argmin(dv, axis=1)
        kh = np.argmin(dh, axis=1)
        best_v = dv[np.arange(len(pts)), kv]
        best_h = dh[np.arange(len(pts)), kh]
        use_v = best_v <= best_h
        d = np.sqrt(np.where(use_v, best_v, best_h))
        proj = np.empty_like(pts)
        proj[use_v, 0] = self._vx[kv[use_v]]
        proj[use_v, 1] = np.clip(pts[use_v, 1], self._vlo[kv[use_v]], self._vhi[kv[use_v]])
        nu = ~use_v
        proj[nu, 1] = self._hy[kh[nu]]
        proj[nu, 0] = np.clip(pts[nu, 0], self._hlo[kh[nu]], self._hhi[kh[nu]])
        piece = np.where(use_v, kv, self._nv + kh)
        return d, proj, piece

    def nearest(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nfaces = max(1, self._nv + len(self._hy))
        chunk = max(256, min(1 << 14, (1 << 23) // nfaces))
        out_d = np.empty(len(pts))
        out_p = np.empty_like(pts)
        out_i = np.empty(len(pts), dtype=np.int64)
        for lo in range(0, len(pts), chunk):
            sl = slice(lo, min(lo + chunk, len(pts)))
            out_d[sl], out_p[sl], out_i[sl] = self._face_nearest(pts[sl])
        return out_d, out_p, out_i

    def distance(self, pts: np.ndarray) -> np.ndarray:
        d, _, _ = self.nearest(pts)
        return d

    def labels(self) -> list[str]:
        return ["face"] * (self._nv + len(self._hy))

    def lower_distance(self, pts: np.ndarray) -> np.ndarray:
        i = np.rint(pts[:, 0] / self._h).astype(np.int64)
        j = np.rint(pts[:, 1] / self._h).astype(np.int64)
        n = self._field.shape[0]
        i = np.clip(i, 0, n - 1)
        j = np.clip(j, 0, n - 1)
        node = np.stack([i * self._h, j * self._h], axis=1)
        offset = np.linalg.norm(pts - node, axis=1)
        return self._field[i, j] - offset

    def contains(self, pts: np.ndarray) -> np.ndarray:
        i = np.floor(pts[:, 0] / self._h).astype(np.int64)
        j = np.floor(pts[:, 1] / self._h).astype(np.int64)
        n = self._occ.shape[0]
        ok = (i >= 0) & (i < n) & (j >= 0) & (j < n)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = self._occ[i[ok], j[ok]]
        return out


_SCENE_CACHE: dict[tuple[int, frozenset], "PolygonScene"] = {}


def polygon_scene(polygon) -> PolygonScene:
    key = (polygon.rank, polygon.cells)
    sc = _SCENE_CACHE.get(key)
    if sc is None:
        sc = PolygonScene(polygon)
        if len(_SCENE_CACHE) >= 16:
            _SCENE_CACHE.pop(next(iter(_SCENE_CACHE)))
        _SCENE_CACHE[key] = sc
    return sc


@dataclass
class WosResult:
    """Monte Carlo estimate with a certified-by-construction radius."""

    mean: float
    radius: float
    samples: int
    seed: int
    shell: float
    stderr: float
    unfinished: int = 0
    piece_mass: dict[str, float] = field(default_factory=dict)

    def interval(self) -> tuple[float, float]:
        return self.mean - self.radius, self.mean + self.radius


def walk_exits(
    scene: Scene,
    x: tuple[float, float],
    samples: int,
    seed: int,
    shell: float = DEFAULT_SHELL,
    max_steps: int | None = None,
    batch: int = 1 << 16,
    stream_offset: int = 0,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Exit points and piece indices of `samples` walks from x.

    Returns (exit_points, piece_indices, unfinished) where unfinished walks
    were force-projected after max_steps (counted for the error budget).
    """
    if max_steps is None:
        max_steps = int(40 * (1 + abs(math.log2(max(shell, 1e-300)))))
    rng = CounterRng(seed)
    lower = getattr(scene, "lower_distance", None)
    exits = np.empty((samples, 2))
    pidx = np.empty(samples, dtype=np.int64)
    unfinished = 0
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        streams = np.arange(done, done + m, dtype=np.uint64) + np.uint64(stream_offset)
        pos = np.tile(np.asarray(x, dtype=np.float64), (m, 1))
        alive = np.ones(m, dtype=bool)
        out = np.empty((m, 2))
        out_piece = np.empty(m, dtype=np.int64)
        for step in range(max_steps):
            if not alive.any():
                break
            apos = pos[alive]
            if lower is not None:
                d = lower(apos)
                near = d < 4 * shell
                if near.any():
                    dn, proj, pi = scene.nearest(apos[near])
                    d = d.copy()
                    d[near] = dn
                    hit = dn < shell
                    if hit.any():
                        alive_idx = np.flatnonzero(alive)
                        hit_idx = alive_idx[np.flatnonzero(near)[hit]]
                        out[hit_idx] = proj[hit]
                        out_piece[hit_idx] = pi[hit]
                        alive[hit_idx] = False
                        keep = np.ones(len(apos), dtype=bool)
                        keep[np.flatnonzero(near)[hit]] = False
                        apos = apos[keep]
                        d = d[keep]
            else:
                d, proj, pi = scene.nearest(apos)
                hit = d < shell
                if hit.any():
                    alive_idx = np.flatnonzero(alive)
                    hit_idx = alive_idx[hit]
                    out[hit_idx] = proj[hit]
                    out_piece[hit_idx] = pi[hit]
                    alive[hit_idx] = False
                    apos = apos[~hit]
                    d = d[~hit]
            if len(apos) == 0:
                continue
            alive_idx = np.flatnonzero(alive)
            theta = TWO_PI * rng.uniform(streams[alive_idx], step)
            stepv = np.stack([np.cos(theta), np.sin(theta)], axis=1) * d[:, None]
            pos[alive_idx] = apos + stepv
        if alive.any():
            # force-project stragglers; accounted in the caller's radius
            rem = np.flatnonzero(alive)
            _, proj, pi = scene.nearest(pos[rem])
            out[rem] = proj
            out_piece[rem] = pi
            unfinished += len(rem)
        exits[done : done + m] = out
        pidx[done : done + m] = out_piece
        done += m
    return exits, pidx, unfinished


def wos_integral(
    scene: Scene,
    x: tuple[float, float],
    f: Callable[[np.ndarray], np.ndarray],
    samples: int,
    seed: int,
    lip: float = 0.0,
    shell: float = DEFAULT_SHELL,
    sup: float = 1.0,
    max_steps: int | None = None,
) -> WosResult:
    """Estimate of the f-integral against the exit distribution from x.

    The radius combines 3x the standard error, the Lipschitz shell bias
    lip * shell, and a worst-case term for force-projected walks.
    """
    exits, pidx, unfinished = walk_exits(scene, x, samples, seed, shell, max_steps)
    vals = np.asarray(f(exits), dtype=np.float64)
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    radius = 3.0 * stderr + lip * shell + 2.0 * sup * unfinished / samples
    labels = scene.labels()
    mass: dict[str, float] = {}
    for i, lab in enumerate(labels):
        sel = pidx == i
        if sel.any():
            mass[lab] = mass.get(lab, 0.0) + float(sel.mean())
    return WosResult(mean, radius, samples, seed, shell, stderr, unfinished, mass)


def wos_piece_masses(
    scene: Scene,
    x: tuple[float, float],
    samples: int,
    seed: int,
    shell: float = DEFAULT_SHELL,
    max_steps: int | None = None,
) -> tuple[dict[str, float], float, int]:
    """Exit mass per piece label, with a shared 3-sigma-style radius."""
    exits, pidx, unfinished = walk_exits(scene, x, samples, seed, shell, max_steps)
    labels = scene.labels()
    mass: dict[str, float] = {}
    for i, lab in enumerate(labels):
        sel = pidx == i
        if sel.any():
            mass[lab] = mass.get(lab, 0.0) + float(sel.mean())
    worst = max(mass.values(), default=0.0)
    worst = min(max(worst, 1.0 / samples), 0.25)
    radius = 3.0 * math.sqrt(worst / samples) + 2.0 * unfinished / samples
    return mass, radius, unfinished
