"""Kernel point lattices on the unit sphere.

A kernel lattice is the fixed geometry a convolution layer correlates
neighbor offsets against: one point at the origin (the center slot)
plus count-1 points on the unit sphere.  The spiral construction in
``fibonacci_lattice`` spreads those points nearly uniformly, which is
what makes the correlation direction-selective without any training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import ContractError

GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


@dataclass(frozen=True)
class KernelLattice:
    """Kernel geometry: row 0 is the origin, rows 1..count-1 are unit vectors."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ContractError(f"lattice points must be (count>=2, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ContractError("lattice points must be finite")
        if pts[0].any():
            raise ContractError("lattice point 0 must be the origin")
        norms = np.linalg.norm(pts[1:], axis=1)
        if np.abs(norms - 1.0).max() > 1e-12:
            raise ContractError("sphere points must have unit norm within 1e-12")
        # pairwise distinct
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
        np.fill_diagonal(d, np.inf)
        if d.min() == 0.0:
            raise ContractError("lattice contains duplicate points")
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class LatticeStats:
    min_angle: float
    max_angle: float
    angle_std: float


def fibonacci_lattice(count: int) -> KernelLattice:
    """Origin plus a Fibonacci spiral of count-1 points on the sphere.

    For m = 0 .. count-2 the sphere point is placed at height
    z = 1 - (2m+1)/(count-1) and azimuth m times the golden angle
    pi*(3 - sqrt(5)), giving near-equal-area coverage.  Deterministic:
    equal counts always produce bit-identical lattices.
    """
    if count < 2:
        raise ContractError(f"lattice needs count >= 2, got {count}")
    pts = np.zeros((count, 3))
    m = np.arange(count - 1, dtype=np.float64)
    z = 1.0 - (2.0 * m + 1.0) / (count - 1)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = m * GOLDEN_ANGLE
    pts[1:, 0] = r * np.cos(theta)
    pts[1:, 1] = r * np.sin(theta)
    pts[1:, 2] = z
    return KernelLattice(pts)


def random_lattice(count: int, rng: np.random.Generator) -> KernelLattice:
    """Origin plus count-1 points drawn uniformly on the sphere."""
    if count < 2:
        raise ContractError(f"lattice needs count >= 2, got {count}")
    pts = np.zeros((count, 3))
    need = count - 1
    got = 0
    while got < need:
        v = rng.standard_normal((need - got, 3))
        n = np.linalg.norm(v, axis=1)
        ok = n > 1e-12
        v = v[ok] / n[ok, None]
        pts[1 + got:1 + got + v.shape[0]] = v
        got += v.shape[0]
    return KernelLattice(pts)


def uniformity_stats(lat: KernelLattice) -> LatticeStats:
    """Nearest-neighbor angle statistics over the sphere points.

    For each of the count-1 sphere points, take the angle to its closest
    other sphere point; report min, max, and population std of those
    angles.  A well-spread lattice has large min and small std.  Needs
    at least two sphere points (count >= 3).
    """
    if lat.count < 3:
        raise ContractError("uniformity_stats needs count >= 3")
    s = lat.points[1:]
    cosang = np.clip(s @ s.T, -1.0, 1.0)
    np.fill_diagonal(cosang, -np.inf)  # exclude self; arccos(-inf) unused
    nearest = np.arccos(cosang.max(axis=1))
    return LatticeStats(
        min_angle=float(nearest.min()),
        max_angle=float(nearest.max()),
        angle_std=float(nearest.std()),
    )
