"""Closed-form harmonic-analysis oracles used for cross-validation.

These are independent of both solver engines: disk Poisson integrals by
periodic trapezoid quadrature (spectrally accurate for smooth data) and
positive harmonic probe functions built from Poisson kernels with poles
outside the region of interest.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def poisson_kernel_disk(x: np.ndarray, theta: np.ndarray, center=(0.0, 0.0), radius=1.0) -> np.ndarray:
    """Poisson kernel P(x, theta) of the disk, normalized to integrate to 1.

    x: (2,) point inside; theta: (M,) boundary angles.  Returns (M,).
    """
    cx, cy = center
    dx = x[0] - cx
    dy = x[1] - cy
    bx = radius * np.cos(theta)
    by = radius * np.sin(theta)
    num = radius**2 - (dx**2 + dy**2)
    den = (dx - bx) ** 2 + (dy - by) ** 2
    return num / (TWO_PI * den)


def poisson_disk_integral(x, f, center=(0.0, 0.0), radius=1.0, m: int = 4096) -> float:
    """Integral of f against the harmonic measure of the disk at x.

    f takes (M, 2) boundary points.  Trapezoid rule on the circle; for
    smooth f the error decays faster than any power of 1/m.
    """
    theta = np.arange(m) * (TWO_PI / m)
    pts = np.stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)], axis=1
    )
    ker = poisson_kernel_disk(np.asarray(x, dtype=float), theta, center, radius)
    vals = np.asarray(f(pts), dtype=np.float64)
    return float((ker * vals).mean() * TWO_PI)


def disk_arc_mass(x, a0: float, a1: float, center=(0.0, 0.0), radius=1.0) -> float:
    """Exact harmonic measure of the boundary arc [a0, a1] seen from x.

    Uses the closed-form conformal angle: for the unit disk the measure of
    an arc from z is the angle subtended after the Moebius map to 0.
    """
    cx, cy = center
    z = complex((x[0] - cx) / radius, (x[1] - cy) / radius)

    def angle_at(t: float) -> float:
        w = complex(math.cos(t), math.sin(t))
        # Moebius transform sending z to 0
        img = (w - z) / (1 - z.conjugate() * w)
        return math.atan2(img.imag, img.real)

    b0 = angle_at(a0)
    b1 = angle_at(a1)
    span = (b1 - b0) % TWO_PI
    return span / TWO_PI


def harmonic_probe(pole, scale=1.0):
    """Positive harmonic function on any region avoiding the pole.

    The planar Poisson-type kernel u(p) = scale / |p - pole|^2 is not
    harmonic; instead use u(p) = Re((R^2 - |p-c|^2) / |p - pole|^2) form of
    the disk kernel with the pole on a circle of radius R around c: positive
    and harmonic inside the circle.
    """
    pole = np.asarray(pole, dtype=float)
    c = np.zeros(2)
    R = float(np.linalg.norm(pole - c))

    def u(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        num = R**2 - (pts[:, 0] - c[0]) ** 2 - (pts[:, 1] - c[1]) ** 2
        den = (pts[:, 0] - pole[0]) ** 2 + (pts[:, 1] - pole[1]) ** 2
        return scale * num / den

    return u


def harmonic_probe_on_box(pole, center=(0.5, 0.5), margin=2.0):
    """Positive harmonic probe on [0,1]^2 with a pole outside the box.

    The Poisson kernel of the disk B(center, R) with boundary pole, R chosen
    so the box is strictly inside; harmonic everywhere except the pole, and
    positive inside the disk.
    """
    pole = np.asarray(pole, dtype=float)
    c = np.asarray(center, dtype=float)
    R = float(np.linalg.norm(pole - c))
    if R <= math.sqrt(0.5) + 1e-9:
        raise ValueError("pole too close: box not inside the probe disk")

    def u(pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        num = R**2 - np.sum((pts - c) ** 2, axis=1)
        den = np.sum((pts - pole) ** 2, axis=1)
        return num / den

    return u


def smoothstep(t: np.ndarray) -> np.ndarray:
    """C^2 monotone ramp: 0 at 0, 1 at 1 (quintic)."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
