"""Axis-aligned box arithmetic, rays, rigid transforms, and hull volume.

All values here are immutable after construction and every operation is
pure, so geometry objects can be shared freely across threads.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import EmptyInputError

# Absolute tolerance for exact-arithmetic style checks (orthonormality,
# boundary containment). Loosen only for data known to be lower precision.
GEOM_TOL = 1e-9


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def as_points(cloud) -> np.ndarray:
    """Coerce a PointCloud or array-like into an (n, 3) float array."""
    pts = getattr(cloud, "points", cloud)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    return pts


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points with optional per-point integer labels.

    Indices are stable: every downstream stage refers back to positions in
    this array, so points are never reordered in place.
    """

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(as_points(self.points)))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=int)
            if labels.shape != (len(self.points),):
                raise ValueError("labels must be one integer per point")
            labels.flags.writeable = False
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Aabb:
    """Axis-aligned box stored as componentwise extrema.

    The dual center/half-extent parameterization is exposed as properties
    and satisfies min = center - half_extents, max = center + half_extents
    exactly (both are derived from the stored extrema).
    """

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _freeze(np.asarray(self.min, dtype=float).reshape(3))
        hi = _freeze(np.asarray(self.max, dtype=float).reshape(3))
        if not np.all(lo <= hi):
            raise ValueError(f"Aabb min must be <= max componentwise: {lo} vs {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self) -> np.ndarray:
        return (self.min + self.max) / 2.0

    @property
    def half_extents(self) -> np.ndarray:
        return (self.max - self.min) / 2.0

    @property
    def edge_lengths(self) -> np.ndarray:
        return self.max - self.min

    def volume(self) -> float:
        l = self.edge_lengths
        return float(l[0] * l[1] * l[2])

    def surface_area(self) -> float:
        l = self.edge_lengths
        return float(2.0 * (l[0] * l[1] + l[1] * l[2] + l[2] * l[0]))

    def inflated(self, r: float) -> "Aabb":
        """Grow every half-extent by the scalar radius r (fingertip clearance)."""
        if r < 0:
            raise ValueError(f"inflation radius must be >= 0, got {r}")
        return Aabb(self.min - r, self.max + r)

    def overlaps(self, other: "Aabb") -> bool:
        """Closed-box overlap: touching faces count."""
        ca, cb = self.center, other.center
        ha, hb = self.half_extents, other.half_extents
        return bool(np.all(np.abs(ca - cb) <= ha + hb))

    def contains_points(self, points) -> np.ndarray:
        pts = as_points(points)
        return np.all((pts >= self.min) & (pts <= self.max), axis=1)

    def closest_points(self, points) -> np.ndarray:
        return np.clip(as_points(points), self.min, self.max)

    def distance_to_points(self, points) -> np.ndarray:
        pts = as_points(points)
        d = pts - self.closest_points(pts)
        return np.sqrt(np.einsum("ij,ij->i", d, d))

    def corners(self) -> np.ndarray:
        lo, hi = self.min, self.max
        return np.array(
            [
                [lo[0], lo[1], lo[2]],
                [hi[0], lo[1], lo[2]],
                [lo[0], hi[1], lo[2]],
                [hi[0], hi[1], lo[2]],
                [lo[0], lo[1], hi[2]],
                [hi[0], lo[1], hi[2]],
                [lo[0], hi[1], hi[2]],
                [hi[0], hi[1], hi[2]],
            ]
        )

    @staticmethod
    def from_center_half_extents(center, half_extents) -> "Aabb":
        c = np.asarray(center, dtype=float)
        h = np.asarray(half_extents, dtype=float)
        if np.any(h < 0):
            raise ValueError("half extents must be >= 0")
        return Aabb(c - h, c + h)


@dataclass(frozen=True, eq=False)
class Ray:
    """Parametric ray origin + t * direction; direction need not be unit."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _freeze(np.asarray(self.origin, dtype=float).reshape(3))
        d = _freeze(np.asarray(self.direction, dtype=float).reshape(3))
        if float(np.dot(d, d)) == 0.0:
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


class RayHit(NamedTuple):
    t_enter: float
    t_exit: float


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion: orthonormal rotation (det +1) plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _freeze(np.asarray(self.rotation, dtype=float).reshape(3, 3))
        t = _freeze(np.asarray(self.translation, dtype=float).reshape(3))
        if not np.allclose(R @ R.T, np.eye(3), atol=GEOM_TOL):
            raise ValueError("rotation is not orthonormal within tolerance")
        if abs(float(np.linalg.det(R)) - 1.0) > 1e-6:
            raise ValueError("rotation must have determinant +1 (no reflections)")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return cls(rotation_from_axis_angle(axis, angle), np.asarray(translation, dtype=float))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or many points (n, 3)."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = as_points(pts) @ self.rotation.T + self.translation
        return out[0] if single else out

    def rotate(self, vectors) -> np.ndarray:
        v = np.asarray(vectors, dtype=float)
        single = v.ndim == 1
        out = v.reshape(-1, 3) @ self.rotation.T
        return out[0] if single else out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self @ other).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))


def rotation_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(a)
    if n == 0:
        raise ValueError("rotation axis must be nonzero")
    a = a / n
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def axis_angle_from_rotation(R: np.ndarray) -> np.ndarray:
    """Rotation log map: returns angle * unit_axis, with angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    cos_a = (np.trace(R) - 1.0) / 2.0
    angle = float(np.arccos(np.clip(cos_a, -1.0, 1.0)))
    if angle < 1e-12:
        return np.zeros(3)
    if np.pi - angle < 1e-6:
        # Near pi the skew part vanishes; recover the axis from the symmetric part.
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        # Fix signs using the largest component as reference.
        k = int(np.argmax(axis))
        if axis[k] == 0:
            return np.zeros(3)
        for i in range(3):
            if i != k and B[k, i] < 0:
                axis[i] = -axis[i]
        axis = axis / np.linalg.norm(axis)
        return angle * axis
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle * v / (2.0 * np.sin(angle))


def rotation_geodesic_angle(R1: np.ndarray, R2: np.ndarray) -> float:
    """Angular distance between two rotations, arccos((trace(R1^T R2) - 1)/2)."""
    c = (np.trace(np.asarray(R1).T @ np.asarray(R2)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def aabb_from_points(cloud) -> Aabb:
    """Smallest axis-aligned box containing the cloud (coordinate-wise extrema)."""
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptyInputError("cannot bound an empty point cloud")
    return Aabb(pts.min(axis=0), pts.max(axis=0))


def center_half_extents(box: Aabb) -> tuple[np.ndarray, np.ndarray]:
    return box.center, box.half_extents


def volume(box: Aabb) -> float:
    return box.volume()


def surface_area(box: Aabb) -> float:
    return box.surface_area()


def edge_lengths(box: Aabb) -> np.ndarray:
    return box.edge_lengths


def inflate(box: Aabb, r: float) -> Aabb:
    return box.inflated(r)


def aabb_overlap(a: Aabb, b: Aabb) -> bool:
    return a.overlaps(b)


def convex_hull_volume(cloud) -> float:
    """Volume of the 3D convex hull; 0 for clouds of affine dimension < 3."""
    pts = as_points(cloud)
    if len(pts) == 0:
        raise EmptyInputError("cannot hull an empty point cloud")
    if len(pts) < 4:
        return 0.0
    try:
        return float(ConvexHull(pts).volume)
    except QhullError:
        # Coplanar / collinear / coincident input: degenerate hull.
        return 0.0


def empty_space_ratio(cloud, box: Aabb) -> float:
    """Tightness proxy 1 - V_hull / V_aabb, clamped to [0, 1].

    A zero-volume box is degenerate (planar or thinner cloud); the ratio is
    reported as 1.0 and a RuntimeWarning flags the case.
    """
    v_box = box.volume()
    if v_box == 0.0:
        warnings.warn("AABB volume is zero; empty-space ratio is degenerate",
                      RuntimeWarning, stacklevel=2)
        return 1.0
    eta = 1.0 - convex_hull_volume(cloud) / v_box
    return float(np.clip(eta, 0.0, 1.0))


def ray_aabb(ray: Ray, box: Aabb) -> RayHit | None:
    """Slab-method ray/box test.

    Returns entry and exit parameters when the per-axis slab intervals
    intersect with t_exit >= 0, else None. A zero direction component is a
    miss unless the origin lies inside that axis' slab, in which case the
    axis contributes (-inf, +inf).
    """
    o = ray.origin
    d = ray.direction
    t_lo, t_hi = -np.inf, np.inf
    for axis in range(3):
        if d[axis] == 0.0:
            if not (box.min[axis] <= o[axis] <= box.max[axis]):
                return None
            continue
        t1 = (box.min[axis] - o[axis]) / d[axis]
        t2 = (box.max[axis] - o[axis]) / d[axis]
        if t1 > t2:
            t1, t2 = t2, t1
        if t1 > t_lo:
            t_lo = t1
        if t2 < t_hi:
            t_hi = t2
    if t_lo <= t_hi and t_hi >= 0.0:
        return RayHit(float(t_lo), float(t_hi))
    return None


def transform_aabb(transform: RigidTransform, box: Aabb, mode: str = "corner_refit") -> Aabb:
    """Map a box through a rigid transform.

    corner_refit (default) re-fits the box of the 8 transformed corners and
    is conservative under rotation. extrema_only transforms only the min and
    max corners and re-sorts componentwise; it is cheaper but not guaranteed
    to contain the rotated box, and is kept for fidelity with extrinsic
    pipelines that transform extrema directly.
    """
    if mode == "corner_refit":
        return aabb_from_points(transform.apply(box.corners()))
    if mode == "extrema_only":
        p_min = transform.apply(box.min)
        p_max = transform.apply(box.max)
        return Aabb(np.minimum(p_min, p_max), np.maximum(p_min, p_max))
    raise ValueError(f"unknown transform_aabb mode: {mode!r}")
