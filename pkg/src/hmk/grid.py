"""Finite-difference Dirichlet engine on dyadic polygons.

Node-centered 5-point scheme on the rank-r lattice of refine(P, r): a
lattice node with all four incident cells in the polygon is an unknown;
nodes with one to three incident cells lie on the boundary and carry
Dirichlet data at their exact coordinates (interior nodes of a face are
midpoints of finer dyadic faces; polygon vertices, including reentrant
corners, take the data value at the corner itself).

One adjoint solve per (polygon, rank, point) produces the full discrete
exit distribution over boundary nodes, so arbitrarily many boundary
functionals cost a dot product each.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dyadic import DyadicPolygon, RationalPoint, refine


class PointOnBoundary(ValueError):
    """Evaluation point is not in the open interior of the polygon."""


@dataclass
class ExitVector:
    """Discrete harmonic measure at x on the rank-r lattice of P."""

    rank: int
    weights: np.ndarray  # (n_boundary,) nonnegative, sums to 1
    nodes: np.ndarray  # (n_boundary, 2) float coordinates
    node_index: np.ndarray  # (n_boundary, 2) integer lattice coordinates

    def integrate(self, f) -> float:
        return float(self.weights @ np.asarray(f(self.nodes), dtype=np.float64))


class GridSystem:
    """Assembled 5-point system for one polygon at one rank."""

    def __init__(self, polygon: DyadicPolygon, rank: int):
        if polygon.dim != 2:
            raise ValueError("grid engine is 2-d only")
        rank = max(rank, polygon.rank)
        self.polygon = polygon
        self.rank = rank
        n = 2**rank
        self.n = n
        occ = np.zeros((n, n), dtype=bool)
        for idx in refine(polygon, rank).cells:
            occ[idx] = True
        self.occ = occ
        pad = np.zeros((n + 2, n + 2), dtype=np.int8)
        pad[1:-1, 1:-1] = occ
        inc = (
            pad[0 : n + 1, 0 : n + 1]
            + pad[1 : n + 2, 0 : n + 1]
            + pad[0 : n + 1, 1 : n + 2]
            + pad[1 : n + 2, 1 : n + 2]
        )
        self.interior_mask = inc == 4
        self.boundary_mask = (inc >= 1) & (inc <= 3)
        ii, jj = np.nonzero(self.interior_mask)
        self.int_nodes = np.stack([ii, jj], axis=1)
        bi, bj = np.nonzero(self.boundary_mask)
        self.bnd_nodes = np.stack([bi, bj], axis=1)
        self.h = 1.0 / n
        self.bnd_coords = self.bnd_nodes.astype(np.float64) * self.h

        idx_int = -np.ones((n + 1, n + 1), dtype=np.int64)
        idx_int[ii, jj] = np.arange(len(ii))
        idx_bnd = -np.ones((n + 1, n + 1), dtype=np.int64)
        idx_bnd[bi, bj] = np.arange(len(bi))
        self._idx_int = idx_int
        self._idx_bnd = idx_bnd

        rows_a, cols_a = [], []
        rows_b, cols_b = [], []
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = ii + di, jj + dj
            ok = (ni >= 0) & (ni <= n) & (nj >= 0) & (nj <= n)
            src = np.flatnonzero(ok)
            tgt_int = idx_int[ni[ok], nj[ok]]
            tgt_bnd = idx_bnd[ni[ok], nj[ok]]
            m_int = tgt_int >= 0
            rows_a.append(src[m_int])
            cols_a.append(tgt_int[m_int])
            m_bnd = tgt_bnd >= 0
            rows_b.append(src[m_bnd])
            cols_b.append(tgt_bnd[m_bnd])
        n_int = len(ii)
        n_bnd = len(bi)
        ra = np.concatenate(rows_a)
        ca = np.concatenate(cols_a)
        A = sp.coo_matrix(
            (np.full(len(ra), -1.0), (ra, ca)), shape=(n_int, n_int)
        ).tocsc()
        A = A + sp.identity(n_int, format="csc") * 4.0
        rb = np.concatenate(rows_b)
        cb = np.concatenate(cols_b)
        self.B = sp.coo_matrix(
            (np.full(len(rb), 1.0), (rb, cb)), shape=(n_int, n_bnd)
        ).tocsr()
        self.A = A
        self._lu = None

    @property
    def lu(self):
        if self._lu is None:
            self._lu = spla.splu(self.A)
        return self._lu

    def _interp(self, x: RationalPoint) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear weights of x over its cell's corner nodes.

        Returns (c_int over interior nodes, c_bnd over boundary nodes).
        """
        n = self.n
        fx, fy = x.coords
        cx = min(int(fx * n), n - 1)
        cy = min(int(fy * n), n - 1)
        if not self.occ[cx, cy]:
            raise PointOnBoundary(f"{x.as_floats()} is not inside the polygon")
        tx = float(fx * n - cx)
        ty = float(fy * n - cy)
        c_int = np.zeros(len(self.int_nodes))
        c_bnd = np.zeros(len(self.bnd_nodes))
        for di, dj, w in (
            (0, 0, (1 - tx) * (1 - ty)),
            (1, 0, tx * (1 - ty)),
            (0, 1, (1 - tx) * ty),
            (1, 1, tx * ty),
        ):
            if w == 0.0:
                continue
            i, j = cx + di, cy + dj
            ki = self._idx_int[i, j]
            if ki >= 0:
                c_int[ki] += w
            else:
                kb = self._idx_bnd[i, j]
                c_bnd[kb] += w
        return c_int, c_bnd

    def exit_vector(self, x: RationalPoint) -> ExitVector:
        c_int, c_bnd = self._interp(x)
        z = self.lu.solve(c_int)
        w = self.B.T @ z + c_bnd
        return ExitVector(self.rank, w, self.bnd_coords, self.bnd_nodes)

    def solve_dirichlet(self, f) -> np.ndarray:
        """Interior solution values for boundary data f(coords)."""
        g = np.asarray(f(self.bnd_coords), dtype=np.float64)
        return self.lu.solve(self.B @ g)

    def solve_point_source(self, y: RationalPoint) -> np.ndarray:
        """Discrete Green's function A u = e_y (source at nearest node)."""
        n = self.n
        i = int(round(float(y.coords[0]) * n))
        j = int(round(float(y.coords[1]) * n))
        k = self._idx_int[i, j]
        if k < 0:
            raise PointOnBoundary("source node is not interior")
        e = np.zeros(self.A.shape[0])
        e[k] = 1.0
        return self.lu.solve(e)

    def interior_value(self, u_int: np.ndarray, f, x: RationalPoint) -> float:
        c_int, c_bnd = self._interp(x)
        val = float(c_int @ u_int)
        if c_bnd.any():
            g = np.asarray(f(self.bnd_coords), dtype=np.float64)
            val += float(c_bnd @ g)
        return val


_SYSTEM_CACHE: dict[tuple[int, frozenset, int], GridSystem] = {}
_CACHE_LIMIT = 24


def grid_system(polygon: DyadicPolygon, rank: int) -> GridSystem:
    key = (polygon.rank, polygon.cells, rank)
    sys_ = _SYSTEM_CACHE.get(key)
    if sys_ is None:
        sys_ = GridSystem(polygon, rank)
        if len(_SYSTEM_CACHE) >= _CACHE_LIMIT:
            _SYSTEM_CACHE.pop(next(iter(_SYSTEM_CACHE)))
        _SYSTEM_CACHE[key] = sys_
    return sys_
