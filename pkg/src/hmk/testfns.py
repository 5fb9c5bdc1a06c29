"""Smooth subharmonic test functions and their constructive machinery.

Builds the function class the weak-measure interface integrates against:
positive C^2 subharmonic functions on [0,1]^2, bounded by 1 and
1-Lipschitz.  Provides mollification of Lipschitz data, the Green's
function of the square (theta-quotient form of the method of images,
exponentially convergent), the decomposition of a compactly supported C^2
function into a scaled difference of two such subharmonic functions, and a
finite net of the class used by greedy searches.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class QuadratureBudgetExceeded(RuntimeError):
    """Refining the quadrature did not reach the requested tolerance."""


class NotC2(ValueError):
    """Finite-difference Laplacian inconsistent across two grid scales."""


class CoincidentPoints(ValueError):
    """Green's function evaluated on the diagonal."""


class NetBudgetExceeded(RuntimeError):
    """Requested net index is beyond the configured desk-scale budget."""


NET_BUDGET = 4
TAU_SUB = 1e-8


def probe_grid(rank: int = 6, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    n = 2**rank
    xs = np.linspace(lo, hi, n + 1)
    return np.stack(np.meshgrid(xs, xs, indexing="ij"), axis=-1).reshape(-1, 2)


@dataclass
class TestFunction:
    """C^2 function with value/gradient/Laplacian evaluators and certificates.

    The evaluators are the analytic fields of the construction; quadrature
    noise in a constructed function is covered by `tolerance`, and the
    finite-difference consistency of the value field is covered by
    `curvature_budget` (|FD - gradient| <= curvature_budget * h).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    lip_bound: float
    sup_bound: float
    subharmonic: bool = False
    tau_sub: float = TAU_SUB
    tolerance: float = 0.0
    curvature_budget: float = 64.0
    name: str = ""
    params: dict = field(default_factory=dict)

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        return self.value(pts)

    def check_invariants(self, rank: int = 6) -> None:
        pts = probe_grid(rank)
        v = np.asarray(self.value(pts))
        g = np.asarray(self.gradient(pts))
        if self.subharmonic:
            lap = np.asarray(self.laplacian(pts))
            if lap.min() < -self.tau_sub:
                raise AssertionError(f"laplacian {lap.min():.3e} < -tau_sub")
        if np.abs(v).max() > self.sup_bound + 1e-9 + self.tolerance:
            raise AssertionError("sup bound violated on probe grid")
        norms = np.linalg.norm(g, axis=1)
        if norms.max() > self.lip_bound + 1e-9 + self.tolerance:
            raise AssertionError("gradient exceeds Lipschitz bound on probe grid")
        for h in (2.0**-5, 2.0**-6):
            inner = pts[
                (pts[:, 0] > h) & (pts[:, 0] < 1 - h) & (pts[:, 1] > h) & (pts[:, 1] < 1 - h)
            ]
            if len(inner) == 0:
                continue
            fd = _fd_gradient(self.value, inner, h)
            err = np.linalg.norm(fd - np.asarray(self.gradient(inner)), axis=1).max()
            if err > self.curvature_budget * h + 4 * self.tolerance / h:
                raise AssertionError(f"gradient/value FD mismatch {err:.3e} at h={h}")


def _fd_gradient(value, pts: np.ndarray, h: float) -> np.ndarray:
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    gx = (np.asarray(value(pts + ex)) - np.asarray(value(pts - ex))) / (2 * h)
    gy = (np.asarray(value(pts + ey)) - np.asarray(value(pts - ey))) / (2 * h)
    return np.stack([gx, gy], axis=1)


def discrete_laplacian(value, pts: np.ndarray, h: float) -> np.ndarray:
    """5-point Laplacian of the value field."""
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    return (
        np.asarray(value(pts + ex))
        + np.asarray(value(pts - ex))
        + np.asarray(value(pts + ey))
        + np.asarray(value(pts - ey))
        - 4.0 * np.asarray(value(pts))
    ) / (h * h)


# ---------------------------------------------------------------------------
# constant / bilinear / cone families (exact closed forms)


def constant_fn(c: float) -> TestFunction:
    return TestFunction(
        value=lambda p, c=c: np.full(len(p), c),
        gradient=lambda p: np.zeros((len(p), 2)),
        laplacian=lambda p: np.zeros(len(p)),
        lip_bound=0.0,
        sup_bound=abs(c),
        subharmonic=True,
        name="const",
        params={"c": c},
    )


def bilinear_fn(corners: Sequence[float]) -> TestFunction:
    """Bilinear interpolant of corner values (f00, f10, f01, f11): harmonic."""
    a, b, c, d = (float(v) for v in corners)

    def val(p):
        x, y = p[:, 0], p[:, 1]
        return a * (1 - x) * (1 - y) + b * x * (1 - y) + c * (1 - x) * y + d * x * y

    def grad(p):
        x, y = p[:, 0], p[:, 1]
        gx = (b - a) * (1 - y) + (d - c) * y
        gy = (c - a) * (1 - x) + (d - b) * x
        return np.stack([gx, gy], axis=1)

    # |grad|^2 is cornerwise maximal (convex in each variable separately)
    lip = max(
        math.hypot(b - a, c - a),
        math.hypot(b - a, d - b),
        math.hypot(d - c, c - a),
        math.hypot(d - c, d - b),
    )
    return TestFunction(
        value=val,
        gradient=grad,
        laplacian=lambda p: np.zeros(len(p)),
        lip_bound=lip,
        sup_bound=max(abs(v) for v in (a, b, c, d)),
        subharmonic=True,
        name="bilinear",
        params={"corners": [a, b, c, d]},
    )


def cone_fn(q: Sequence[float], s: float, scale: float = 1.0) -> TestFunction:
    """Smoothed distance cone scale*(sqrt(|x-q|^2+s^2)-s): subharmonic, <1-Lipschitz."""
    qx, qy = float(q[0]), float(q[1])
    s = float(s)

    def r2(p):
        return (p[:, 0] - qx) ** 2 + (p[:, 1] - qy) ** 2

    def val(p):
        return scale * (np.sqrt(r2(p) + s * s) - s)

    def grad(p):
        root = np.sqrt(r2(p) + s * s)
        return scale * (p - np.array([qx, qy])) / root[:, None]

    def lap(p):
        rr = r2(p)
        root = np.sqrt(rr + s * s)
        return scale * (rr + 2 * s * s) / root**3

    far = max(math.hypot(qx - cx, qy - cy) for cx in (0.0, 1.0) for cy in (0.0, 1.0))
    return TestFunction(
        value=val,
        gradient=grad,
        laplacian=lap,
        lip_bound=scale,
        sup_bound=scale * (math.hypot(far, s) - s),
        subharmonic=True,
        curvature_budget=max(64.0, 2.0 / s),
        name="cone",
        params={"q": [qx, qy], "s": s, "scale": scale},
    )


# ---------------------------------------------------------------------------
# mollification


_MOLL_C = 5.0 / math.pi  # unit mass of (1-r^2)^4 on the unit disk


def _kernel_nodes(m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Midpoint tensor nodes on [-1,1]^2 with value/gradient/laplacian weights."""
    step = 2.0 / m
    t = -1.0 + step * (np.arange(m) + 0.5)
    tx, ty = np.meshgrid(t, t, indexing="ij")
    nodes = np.stack([tx.ravel(), ty.ravel()], axis=1)
    rr = (nodes**2).sum(axis=1)
    inside = rr < 1.0
    base = np.where(inside, (1.0 - rr) ** 3, 0.0)
    w = _MOLL_C * np.where(inside, (1.0 - rr) ** 4, 0.0) * step * step
    w /= w.sum()  # exact unit mass: constants mollify to themselves
    gw = -8.0 * _MOLL_C * nodes * (base * step * step)[:, None]
    gw -= gw.mean(axis=0, keepdims=True)  # exact zero mean: grad of constants = 0
    lw = 16.0 * _MOLL_C * np.where(inside, (1 - rr) ** 2 * (4 * rr - 1), 0.0) * step * step
    lw -= lw.mean()
    return nodes, w, gw, lw


def mollify(g: Callable[[np.ndarray], np.ndarray], n: int, m: int = 24, lip: float = 1.0) -> TestFunction:
    """Smooth 2^-n-close approximation of a 1-Lipschitz g on [0,1]^2.

    Convolution with the mass-correct mollifier phi_s(x) = s^-2 phi(x/s),
    s = 2^-n, phi(x) = (5/pi)(1-|x|^2)^4 on the unit disk; g is extended
    constantly outside the box by coordinate clamping.
    """
    s = 2.0**-n
    nodes, w, gw, lw = _kernel_nodes(m)
    offsets = s * nodes

    def sample(pts: np.ndarray) -> np.ndarray:
        # (N, K) samples of g at x - s t_k, clamped into the box
        q = pts[:, None, :] - offsets[None, :, :]
        np.clip(q, 0.0, 1.0, out=q)
        flat = q.reshape(-1, 2)
        return np.asarray(g(flat), dtype=np.float64).reshape(len(pts), -1)

    def val(pts):
        return sample(pts) @ w

    def grad(pts):
        return (sample(pts)[:, None, :] @ gw[None, :, :]).reshape(len(pts), 2) / s

    def lap(pts):
        return (sample(pts) @ lw) / (s * s)

    # quadrature slack: midpoint rule on the kernel against Lipschitz data
    slack = 2.0 * lip * (2.0 / m)
    return TestFunction(
        value=val,
        gradient=grad,
        laplacian=lap,
        lip_bound=lip * (1.0 + slack),
        sup_bound=1.0 + lip * s,
        subharmonic=False,
        tolerance=lip * s * 0.0,
        curvature_budget=max(64.0, 4.0 * lip / s),
        name="mollified",
        params={"n": n, "m": m},
    )


# ---------------------------------------------------------------------------
# Green's function of the square via theta quotients

_Q_NOME = math.exp(-math.pi)  # aspect ratio 1 square
_THETA_TERMS = 6  # truncation below 1e-14 over the whole closed square


def _theta1_pair(
    E: np.ndarray, Ei: np.ndarray | None = None, terms: int = _THETA_TERMS
) -> tuple[np.ndarray, np.ndarray]:
    """(theta1, theta1') at u from E = exp(iu) (and optionally 1/E).

    sin(mu) = (E^m - E^-m)/2i and cos(mu) = (E^m + E^-m)/2, so each extra
    term costs two complex multiplies instead of a transcendental call.
    """
    if Ei is None:
        Ei = 1.0 / E
    P = E.copy()
    Q = Ei.copy()
    E2 = E * E
    Ei2 = Ei * Ei
    th = np.zeros_like(E)
    dth = np.zeros_like(E)
    tmp = np.empty_like(E)
    for k in range(terms):
        coef = (-1.0) ** k * _Q_NOME ** ((k + 0.5) ** 2)
        np.subtract(P, Q, out=tmp)
        tmp *= coef
        th += tmp
        np.add(P, Q, out=tmp)
        tmp *= coef * (2 * k + 1)
        dth += tmp
        if k + 1 < terms:
            P *= E2
            Q *= Ei2
    th *= -1j
    return th, dth


def _log_abs_theta(E: np.ndarray, Ei: np.ndarray, terms: int = 4) -> np.ndarray:
    """log|theta1(u)| from E = exp(iu), 1/E; in-place heavy path."""
    P = E.copy()
    Q = Ei.copy()
    E2 = E * E
    Ei2 = Ei * Ei
    th = np.zeros_like(E)
    tmp = np.empty_like(E)
    for k in range(terms):
        coef = (-1.0) ** k * _Q_NOME ** ((k + 0.5) ** 2)
        np.subtract(P, Q, out=tmp)
        tmp *= coef
        th += tmp
        if k + 1 < terms:
            P *= E2
            Q *= Ei2
    a = np.abs(th)
    with np.errstate(divide="ignore"):
        return np.log(a)


def _theta1(u: np.ndarray) -> np.ndarray:
    th, _ = _theta1_pair(np.exp(1j * np.asarray(u, dtype=np.complex128)))
    return th


def _theta1_dlog(u: np.ndarray) -> np.ndarray:
    th, dth = _theta1_pair(np.exp(1j * np.asarray(u, dtype=np.complex128)))
    return dth / th


_GREEN_SIDE = 4.0
_GREEN_A = math.pi / (2.0 * _GREEN_SIDE)


def green_cube_batch(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Green's function of (-2,2)^2 at row-wise pairs (x_i, y_i).

    Theta-quotient form of the reflected image sum; the q = e^-pi series
    truncation error is below 1e-15 everywhere in the square, certified by
    the alternating-term bound.
    """
    zx = np.asarray(x, dtype=np.float64) + 2.0
    zy = np.asarray(y, dtype=np.float64) + 2.0
    z = zx[..., 0] + 1j * zx[..., 1]
    w = zy[..., 0] + 1j * zy[..., 1]
    a = _GREEN_A
    num = np.abs(_theta1(a * (z - w))) * np.abs(_theta1(a * (z + w)))
    den = np.abs(_theta1(a * (z - np.conj(w)))) * np.abs(_theta1(a * (z + np.conj(w))))
    with np.errstate(divide="ignore"):
        return -np.log(num / den) / (2.0 * math.pi)


def green_cube(x, y, tol: float = 1e-12) -> float:
    """Green's function of the square (-2,2)^2; error certified < tol."""
    if tol < 1e-15:
        raise QuadratureBudgetExceeded("theta series floor is 1e-15")
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if np.max(np.abs(xv)) >= 2.0 or np.max(np.abs(yv)) >= 2.0:
        raise ValueError("points must lie in (-2,2)^2")
    if float(np.hypot(*(xv - yv))) < 1e-14:
        raise CoincidentPoints("Green's function diverges on the diagonal")
    return float(green_cube_batch(xv[None, :], yv[None, :])[0])


def green_cube_grad_x(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient in x of the square's Green's function, row-wise pairs."""
    zx = np.asarray(x, dtype=np.float64) + 2.0
    zy = np.asarray(y, dtype=np.float64) + 2.0
    z = zx[..., 0] + 1j * zx[..., 1]
    w = zy[..., 0] + 1j * zy[..., 1]
    a = _GREEN_A
    s = (
        _theta1_dlog(a * (z - w))
        + _theta1_dlog(a * (z + w))
        - _theta1_dlog(a * (z - np.conj(w)))
        - _theta1_dlog(a * (z + np.conj(w)))
    ) * a
    # grad log|f(z)| = (Re(f'/f), -Im(f'/f)) for analytic f
    gx = -np.real(s) / (2.0 * math.pi)
    gy = np.imag(s) / (2.0 * math.pi)
    return np.stack([gx, gy], axis=-1)


def _log_corner(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Antiderivative of log|.|: d2F/dXdY = log sqrt(X^2+Y^2), F(0,.)=F(.,0)=0.

    F = XY(log r - 3/2) + X^2/2 atan(Y/X) + Y^2/2 atan(X/Y), odd in each
    argument (plain arctan of the ratio, not atan2).
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    R2 = X * X + Y * Y
    nz = R2 > 0
    safe_r2 = np.where(nz, R2, 1.0)
    xnz = X != 0
    ynz = Y != 0
    out = X * Y * (0.5 * np.log(safe_r2) - 1.5)
    out = out + np.where(xnz, 0.5 * X * X * np.arctan(Y / np.where(xnz, X, 1.0)), 0.0)
    out = out + np.where(ynz, 0.5 * Y * Y * np.arctan(X / np.where(ynz, Y, 1.0)), 0.0)
    return np.where(nz, out, 0.0)


def _log_rect_integral(px: np.ndarray, py: np.ndarray, x0, x1, y0, y1) -> np.ndarray:
    """Exact integral of log|p - y| dy over the rectangle [x0,x1]x[y0,y1]."""
    return (
        _log_corner(x1 - px, y1 - py)
        - _log_corner(x0 - px, y1 - py)
        - _log_corner(x1 - px, y0 - py)
        + _log_corner(x0 - px, y0 - py)
    )


# ---------------------------------------------------------------------------
# cutoff collar and subharmonic decomposition

_COLLAR_IN = 1.5
_COLLAR_OUT = 1.9
_COLLAR_W = _COLLAR_OUT - _COLLAR_IN


def _plateau(t: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(sigma, sigma', sigma''): 1 on |t|<=1.5, 0 on |t|>=1.9, C^2 quintic."""
    a = np.abs(t)
    s = np.clip((a - _COLLAR_IN) / _COLLAR_W, 0.0, 1.0)
    val = 1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    ds = -(30.0 * s * s * (1.0 - s) ** 2) / _COLLAR_W
    dss = -(60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)) / (_COLLAR_W * _COLLAR_W)
    ramp = (a > _COLLAR_IN) & (a < _COLLAR_OUT)
    d1 = np.where(ramp, ds * np.sign(t), 0.0)
    d2 = np.where(ramp, dss, 0.0)
    return val, d1, d2


def with_cutoff_collar(f: TestFunction) -> TestFunction:
    """f multiplied by a smooth plateau: unchanged on [-1.5,1.5]^2, supported
    inside (-1.9,1.9)^2."""

    def val(p):
        sx, _, _ = _plateau(p[:, 0])
        sy, _, _ = _plateau(p[:, 1])
        return np.asarray(f.value(p)) * sx * sy

    def grad(p):
        sx, dx, _ = _plateau(p[:, 0])
        sy, dy, _ = _plateau(p[:, 1])
        fv = np.asarray(f.value(p))
        fg = np.asarray(f.gradient(p))
        gx = fg[:, 0] * sx * sy + fv * dx * sy
        gy = fg[:, 1] * sx * sy + fv * sx * dy
        return np.stack([gx, gy], axis=1)

    def lap(p):
        sx, dx, ddx = _plateau(p[:, 0])
        sy, dy, ddy = _plateau(p[:, 1])
        fv = np.asarray(f.value(p))
        fg = np.asarray(f.gradient(p))
        fl = np.asarray(f.laplacian(p))
        chi = sx * sy
        chi_x = dx * sy
        chi_y = sx * dy
        chi_lap = ddx * sy + sx * ddy
        return fl * chi + 2.0 * (fg[:, 0] * chi_x + fg[:, 1] * chi_y) + fv * chi_lap

    dmax = 30.0 / (16.0 * _COLLAR_W)  # max |sigma'| = 30/16 / width
    lip = f.lip_bound + f.sup_bound * 2.0 * dmax
    return TestFunction(
        value=val,
        gradient=grad,
        laplacian=lap,
        lip_bound=lip,
        sup_bound=f.sup_bound,
        subharmonic=False,
        tolerance=f.tolerance,
        curvature_budget=f.curvature_budget + 40.0 * f.sup_bound,
        name=f"collar({f.name})",
        params=dict(f.params),
    )


@dataclass
class SubharmonicPair:
    """S*(u - v) reconstructs the source; u, v positive subharmonic <=1."""

    u: TestFunction
    v: TestFunction
    scale: float
    reconstruction_error: float
    quad_rank: int


class _GreenPotentials:
    """Green potentials of several cell-weight fields, sharing the kernel pass.

    Evaluates x -> sum_c w[c] G(x, cell_c) hq^2 for each weight vector; the
    four theta factors are built from outer products of per-point and
    per-cell exponentials, so no transcendental is evaluated on the pair
    matrix.  Far cells take the midpoint value of G; cells within 1.5 hq of
    the point replace the log part by its exact cell integral.
    """

    def __init__(self, cells: np.ndarray, hq: float, weights: list[np.ndarray]):
        self.cells = cells
        self.hq = hq
        self.m = int(round(4.0 / hq))  # cells form the full m x m midpoint grid
        self.w_area = [np.asarray(w, dtype=np.float64) * hq * hq for w in weights]
        wz = (cells[:, 0] + 2.0) + 1j * (cells[:, 1] + 2.0)
        ew = np.exp(1j * _GREEN_A * wz)
        ewc = np.exp(1j * _GREEN_A * np.conj(wz))
        self._Ew = ew.astype(np.complex64)
        self._Ewc = ewc.astype(np.complex64)
        self._iEw = (1.0 / ew).astype(np.complex64)
        self._iEwc = (1.0 / ewc).astype(np.complex64)

    def _chunk(self) -> int:
        return max(32, (1 << 21) // max(1, len(self.cells)))

    def _exps(self, blk: np.ndarray):
        z = (blk[:, 0] + 2.0) + 1j * (blk[:, 1] + 2.0)
        Ez = np.exp(1j * _GREEN_A * z)[:, None]
        iEz = (1.0 / Ez.ravel())[:, None]
        # pair matrices are complex64: 1e-7 relative noise in log|theta|,
        # far below the quadrature tolerances; exact near-field is float64
        return Ez.astype(np.complex64), iEz.astype(np.complex64)

    def _near_pairs(self, blk: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(point row, cell column) index pairs within 1.5 hq (3x3 blocks)."""
        m, hq = self.m, self.hq
        ci = np.floor((blk[:, 0] + 2.0) / hq).astype(np.int64)
        cj = np.floor((blk[:, 1] + 2.0) / hq).astype(np.int64)
        rows, cols = [], []
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii = ci + di
                jj = cj + dj
                ok = (ii >= 0) & (ii < m) & (jj >= 0) & (jj < m)
                rows.append(np.flatnonzero(ok))
                cols.append(ii[ok] * m + jj[ok])
        return np.concatenate(rows), np.concatenate(cols)

    def _gmat(self, blk: np.ndarray) -> np.ndarray:
        Ez, iEz = self._exps(blk)
        g = _log_abs_theta(Ez * self._iEw[None, :], iEz * self._Ew[None, :])
        g += _log_abs_theta(Ez * self._Ew[None, :], iEz * self._iEw[None, :])
        g -= _log_abs_theta(Ez * self._iEwc[None, :], iEz * self._Ewc[None, :])
        g -= _log_abs_theta(Ez * self._Ewc[None, :], iEz * self._iEwc[None, :])
        g = g.astype(np.float64)
        g *= -1.0 / (2.0 * math.pi)
        bi, ci = self._near_pairs(blk)
        if len(bi):
            hq = self.hq
            px, py = blk[bi, 0], blk[bi, 1]
            cx, cy = self.cells[ci, 0], self.cells[ci, 1]
            exact_log = _log_rect_integral(
                px, py, cx - hq / 2, cx + hq / 2, cy - hq / 2, cy + hq / 2
            )
            # regular part h = G + log|.|/2pi at the midpoint; nudge points
            # off the diagonal (h is smooth there)
            r = np.hypot(px - cx, py - cy)
            pxs = np.where(r < hq * 1e-6, px + hq * 1e-6, px)
            r = np.hypot(pxs - cx, py - cy)
            g_mid = green_cube_batch(np.stack([pxs, py], axis=1), np.stack([cx, cy], axis=1))
            h_reg = g_mid + np.log(r) / (2.0 * math.pi)
            g[bi, ci] = (-exact_log / (2.0 * math.pi)) / (hq * hq) + h_reg
        return g

    def values(self, pts: np.ndarray) -> list[np.ndarray]:
        pts = np.asarray(pts, dtype=np.float64)
        key = (pts.shape, hash(pts.tobytes()))
        cached = getattr(self, "_val_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        outs = [np.empty(len(pts)) for _ in self.w_area]
        step = self._chunk()
        for lo in range(0, len(pts), step):
            blk = pts[lo : lo + step]
            g = self._gmat(blk)
            for out, w in zip(outs, self.w_area):
                out[lo : lo + len(blk)] = g @ w
        self._val_cache = (key, outs)
        return outs

    def gradients(self, pts: np.ndarray) -> list[np.ndarray]:
        pts = np.asarray(pts, dtype=np.float64)
        key = (pts.shape, hash(pts.tobytes()))
        cached = getattr(self, "_grad_cache", None)
        if cached is not None and cached[0] == key:
            return cached[1]
        outs = [np.empty((len(pts), 2)) for _ in self.w_area]
        step = self._chunk()
        for lo in range(0, len(pts), step):
            blk = pts[lo : lo + step]
            Ez, iEz = self._exps(blk)

            def dl(em, emi):
                th, dth = _theta1_pair(em, emi, terms=4)
                np.divide(dth, th, out=dth)
                return dth

            s = dl(Ez * self._iEw[None, :], iEz * self._Ew[None, :])
            s += dl(Ez * self._Ew[None, :], iEz * self._iEw[None, :])
            s -= dl(Ez * self._iEwc[None, :], iEz * self._Ewc[None, :])
            s -= dl(Ez * self._Ewc[None, :], iEz * self._iEwc[None, :])
            s = s.astype(np.complex128)
            s *= _GREEN_A
            gx = np.real(s).copy()
            gx *= -1.0 / (2.0 * math.pi)
            gy = np.imag(s).copy()
            gy *= 1.0 / (2.0 * math.pi)
            # own-cell midpoint term vanishes by odd symmetry of the kernel
            m, hq = self.m, self.hq
            ci = np.floor((blk[:, 0] + 2.0) / hq).astype(np.int64)
            cj = np.floor((blk[:, 1] + 2.0) / hq).astype(np.int64)
            ok = (ci >= 0) & (ci < m) & (cj >= 0) & (cj < m)
            rows = np.flatnonzero(ok)
            cols = ci[ok] * m + cj[ok]
            own = np.max(np.abs(blk[rows] - self.cells[cols]), axis=1) <= 0.5 * hq
            gx[rows[own], cols[own]] = 0.0
            gy[rows[own], cols[own]] = 0.0
            for out, w in zip(outs, self.w_area):
                out[lo : lo + len(blk), 0] = gx @ w
                out[lo : lo + len(blk), 1] = gy @ w
        self._grad_cache = (key, outs)
        return outs


def subharmonic_parts(
    f: TestFunction,
    tol: float,
    quad_rank: int = 5,
    probe_rank: int = 6,
    max_refine: int = 1,
) -> SubharmonicPair:
    """Split f (compactly supported in (-2,2)^2) as S*(u - v).

    u and v are the Green potentials of the positive and negative parts of
    the Laplacian of f, rescaled by S to be bounded by 1 and 1-Lipschitz;
    both are positive and subharmonic with Laplacians D+ and D-.  The
    reconstruction identity is checked on the rank-`probe_rank` grid of
    [0,1]^2 and must hold within tol.
    """
    # two-scale consistency of f's Laplacian field (C^2 sanity)
    probes = probe_grid(probe_rank)[::7]
    for h in (2.0**-5, 2.0**-6):
        fd = discrete_laplacian(f.value, probes, h)
        ana = np.asarray(f.laplacian(probes))
        if np.abs(fd - ana).max() > f.curvature_budget * (1.0 + 8 * h * f.curvature_budget):
            raise NotC2(f"Laplacian field inconsistent with values at h={h}")

    rank = quad_rank
    for attempt in range(max_refine + 1):
        hq = 2.0**-rank
        m = int(round(4.0 / hq))
        axis = -2.0 + hq * (np.arange(m) + 0.5)
        cx, cy = np.meshgrid(axis, axis, indexing="ij")
        cells = np.stack([cx.ravel(), cy.ravel()], axis=1)
        d_all = np.asarray(f.laplacian(cells), dtype=np.float64)
        dp = np.maximum(d_all, 0.0)
        dm = np.maximum(-d_all, 0.0)
        pots = _GreenPotentials(cells, hq, [dp, dm])
        rec = probe_grid(probe_rank)
        # the standard (positive) Green kernel gives Lap(potential) = -D,
        # so the subharmonic raw parts are the negated potentials
        u_rec, v_rec = pots.values(rec)
        err = float(np.abs(np.asarray(f.value(rec)) - (v_rec - u_rec)).max())
        if err <= tol or attempt == max_refine:
            break
        rank += 1
    if err > tol:
        raise QuadratureBudgetExceeded(
            f"reconstruction error {err:.3e} > tol {tol:.3e} at quad rank {rank}"
        )

    # shift into the positive cone (the raw parts are <= 0 by the maximum
    # principle), then rescale; both class certificates are probe-grid
    # properties throughout this module
    scan = probe_grid(5, -2.0, 2.0)
    dsup = float(max(dp.max(initial=0.0), dm.max(initial=0.0)))
    u_scan, v_scan = pots.values(scan)
    gu_scan, gv_scan = pots.gradients(scan)
    c_shift = float(max(0.0, u_scan.max(), v_scan.max(), u_rec.max(), v_rec.max())) * 1.0001
    S = max(
        1.0,
        1.02
        * float(
            max(
                c_shift,
                np.linalg.norm(gu_scan, axis=1).max(),
                np.linalg.norm(gv_scan, axis=1).max(),
            )
        ),
    )

    def scaled(which, grad=False):
        if grad:
            return lambda pts: -pots.gradients(pts)[which] / S
        return lambda pts: (c_shift - pots.values(pts)[which]) / S

    u_val = scaled(0)
    u_grad = scaled(0, grad=True)
    v_val = scaled(1)
    v_grad = scaled(1, grad=True)

    lap_u = lambda pts: np.maximum(np.asarray(f.laplacian(pts)), 0.0) / S
    lap_v = lambda pts: np.maximum(-np.asarray(f.laplacian(pts)), 0.0) / S
    u_tf = TestFunction(
        value=u_val,
        gradient=u_grad,
        laplacian=lap_u,
        lip_bound=1.0,
        sup_bound=1.0,
        subharmonic=True,
        tolerance=err / S + 1e-9,
        curvature_budget=max(64.0, 2.0 * dsup),
        name=f"green+({f.name})",
    )
    v_tf = TestFunction(
        value=v_val,
        gradient=v_grad,
        laplacian=lap_v,
        lip_bound=1.0,
        sup_bound=1.0,
        subharmonic=True,
        tolerance=err / S + 1e-9,
        curvature_budget=max(64.0, 2.0 * dsup),
        name=f"green-({f.name})",
    )
    return SubharmonicPair(u_tf, v_tf, S, err, rank)


# ---------------------------------------------------------------------------
# finite nets of the test class

CONE_REGION = (0.3125, 0.6875)  # centers whose farthest box corner is within 1


@dataclass
class SubharmonicNet:
    """Finite family of 1-Lipschitz subharmonic functions bounded by 1.

    `members` are the materialized functions (constants, smoothed cones,
    and a coarse slice of the bilinear-harmonic corner family).  The full
    quantized bilinear family is not materialized: `virtual_count` counts
    it, and `bilinear_gap` bounds sup_f |integral of f against mu1 - mu2|
    over every bilinear member at once from the four basis moments, which
    is how searches test the whole net cheaply.
    """

    n: int
    quantum: float
    cone_pitch: float
    members: list[TestFunction]
    virtual_count: int
    density_slack: float

    @property
    def size(self) -> int:
        return len(self.members) + self.virtual_count

    @staticmethod
    def basis_functions() -> list[TestFunction]:
        return [
            bilinear_fn(c)
            for c in ((1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1))
        ]

    @staticmethod
    def moments(weights: np.ndarray, nodes: np.ndarray) -> np.ndarray:
        """Four bilinear basis integrals of a discrete boundary measure."""
        x, y = nodes[:, 0], nodes[:, 1]
        basis = np.stack([(1 - x) * (1 - y), x * (1 - y), (1 - x) * y, x * y])
        return basis @ weights

    @staticmethod
    def bilinear_gap(m1: np.ndarray, m2: np.ndarray) -> float:
        """max over the bilinear family of the integral difference.

        Corner values live in [0,1]^4 and both measures are probability
        measures, so the linear maximum is half the l1 moment gap; this
        dominates the gradient-constrained quantized family.
        """
        return 0.5 * float(np.abs(np.asarray(m1) - np.asarray(m2)).sum())

    def manifest(self) -> str:
        rows = [
            {"kind": f.name, "params": f.params}
            for f in self.members
        ]
        return json.dumps(
            {
                "n": self.n,
                "quantum": self.quantum,
                "cone_pitch": self.cone_pitch,
                "virtual_count": self.virtual_count,
                "density_slack": self.density_slack,
                "members": rows,
            },
            indent=None,
            separators=(",", ":"),
            sort_keys=True,
        )


def _count_bilinear_family(levels: int) -> int:
    """Number of quantized corner tuples with cornerwise gradient <= 1."""
    vals = np.arange(levels) / (levels - 1)
    total = 0
    for ia, a in enumerate(vals):
        b = vals[None, :, None]  # axis 1
        c = vals[None, None, :]  # axis 2
        d = vals[:, None, None]  # axis 0
        p2 = (b - a) ** 2
        q2 = (c - a) ** 2
        r2 = (d - b) ** 2
        s2 = (d - c) ** 2
        ok = (np.maximum(p2, s2) + np.maximum(q2, r2)) <= 1.0 + 1e-12
        total += int(ok.sum())
    return total


def lipschitz_subharmonic_net(n: int, budget: int = NET_BUDGET) -> SubharmonicNet:
    """2^-n-2 net (on its construction lattice) of the subharmonic test class.

    Members are exact closed forms: constants on the value lattice, smoothed
    distance cones on the admissible center lattice, and bilinear-harmonic
    corner assignments.  Density against arbitrary class members holds up to
    the recorded lattice slack.
    """
    if n > budget:
        raise NetBudgetExceeded(f"net index {n} beyond configured budget {budget}")
    quantum = 2.0 ** -(n + 3)
    members: list[TestFunction] = []
    levels = 2 ** (n + 3) + 1
    for k in range(levels):
        members.append(constant_fn(k * quantum))
    if n == 0:
        # single-cell lattice: constants only
        return SubharmonicNet(n, quantum, math.inf, members, 0, 0.5 + quantum)
    pitch = 2.0 ** -min(n, 2)
    lo, hi = CONE_REGION
    s = 2.0 ** -(n + 2)
    centers = []
    k = 0
    while True:
        t = 0.0 + k * pitch
        if t > 1.0 + 1e-12:
            break
        if lo - 1e-12 <= t <= hi + 1e-12:
            centers.append(t)
        k += 1
    for cx in centers:
        for cy in centers:
            members.append(cone_fn((cx, cy), s))
    coarse = 5  # corner quantum 1/4 for the materialized bilinear slice
    vals = np.arange(coarse) / (coarse - 1)
    for a in vals:
        for b in vals:
            for c in vals:
                for d in vals:
                    if a == b == c == d:
                        continue
                    if max((b - a) ** 2, (d - c) ** 2) + max((c - a) ** 2, (d - b) ** 2) > 1 + 1e-12:
                        continue
                    members.append(bilinear_fn((a, b, c, d)))
    virtual = _count_bilinear_family(levels)
    slack = math.sqrt(2) / 2 * pitch
    return SubharmonicNet(n, quantum, pitch, members, virtual, slack)
