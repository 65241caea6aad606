"""3D math primitives: vectors, unit quaternions, rigid transforms, planes.

Conventions used throughout the package:

- Right-handed world frame, +Y up, +Z forward. A user at the origin in the
  start pose faces -Z, so their right hand is on +X and their left on -X.
- Quaternions are stored as numpy arrays in (w, x, y, z) order and are kept
  unit-length. Serialization canonicalizes the sign so w >= 0, making traces
  byte-comparable across runs.
- Positions and translations are in meters, angles in radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UP = np.array([0.0, 1.0, 0.0])
RIGHT = np.array([1.0, 0.0, 0.0])
FORWARD = np.array([0.0, 0.0, 1.0])

# Vectors shorter than this are treated as directionless.
DEGENERATE_EPS = 1e-9


class DegenerateGeometryError(ValueError):
    """Raised when an operation receives geometrically meaningless input."""


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=np.float64)


def norm(v) -> float:
    return float(np.linalg.norm(v))


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n <= DEGENERATE_EPS:
        raise DegenerateGeometryError(f"cannot normalize near-zero vector {v!r}")
    return v / n


def angle_between(a, b) -> float:
    """Angle between two vectors in [0, pi], via atan2 of cross/dot.

    Stable for nearly parallel and nearly antiparallel inputs, unlike the
    plain acos-of-dot formulation. Scale invariant by construction.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if norm(a) <= DEGENERATE_EPS or norm(b) <= DEGENERATE_EPS:
        raise DegenerateGeometryError("angle_between requires nonzero vectors")
    cross = np.cross(a, b)
    return math.atan2(float(np.linalg.norm(cross)), float(np.dot(a, b)))


def rotation_between(a, b) -> np.ndarray:
    """Minimal rotation quaternion q with q * a/|a| = b/|b|.

    For antiparallel inputs (angle within 1e-6 of pi) the axis is ambiguous;
    the deterministic choice is normalize(a x UP), falling back to
    normalize(a x RIGHT) when a is vertical.
    """
    ah = normalize(a)
    bh = normalize(b)
    angle = angle_between(ah, bh)
    if angle > math.pi - 1e-6:
        axis = np.cross(ah, UP)
        if np.linalg.norm(axis) <= DEGENERATE_EPS:
            axis = np.cross(ah, RIGHT)
        return quat_from_axis_angle(axis, angle)
    xyz = np.cross(ah, bh)
    q = np.array([1.0 + float(np.dot(ah, bh)), xyz[0], xyz[1], xyz[2]])
    return quat_normalize(q)


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n <= DEGENERATE_EPS:
        raise DegenerateGeometryError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q) -> np.ndarray:
    """Flip sign so w >= 0 (and, at w == 0, the first nonzero of x,y,z > 0)."""
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


def quat_mul(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_inverse(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return quat_conjugate(q) / float(np.dot(q, q))


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector v by unit quaternion q."""
    qv = np.asarray(q[1:], dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    t = 2.0 * np.cross(qv, v)
    return v + q[0] * t + np.cross(qv, t)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = normalize(axis)
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_angle(q) -> float:
    """Rotation angle of q in [0, pi]; robust near identity."""
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), abs(float(q[0])))


def quat_angle_between(a, b) -> float:
    """Angular distance between two rotations in [0, pi]."""
    return quat_angle(quat_mul(quat_conjugate(a), b))


def quat_slerp(a, b, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation; extrapolates for t outside [0,1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - 1e-9:
        return quat_normalize(a + t * (b - a))
    theta = math.acos(min(1.0, d))
    s = math.sin(theta)
    return (math.sin((1.0 - t) * theta) / s) * a + (math.sin(t * theta) / s) * b


# ---------------------------------------------------------------------------
# Rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    """Rigid transform: rotation (unit quaternion) followed by translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))

    @classmethod
    def identity(cls) -> "Transform":
        return cls(quat_identity(), np.zeros(3))

    def __matmul__(self, other: "Transform") -> "Transform":
        """Composition: (self @ other)(p) = self(other(p))."""
        return Transform(
            quat_mul(self.rotation, other.rotation),
            self.translation + quat_rotate(self.rotation, other.translation),
        )

    def inverse(self) -> "Transform":
        rinv = quat_conjugate(self.rotation)
        return Transform(rinv, -quat_rotate(rinv, self.translation))

    def apply(self, p) -> np.ndarray:
        """Transform a point."""
        return quat_rotate(self.rotation, p) + self.translation

    def rotate(self, v) -> np.ndarray:
        """Rotate a direction (translation ignored)."""
        return quat_rotate(self.rotation, v)


# ---------------------------------------------------------------------------
# Plane fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Plane {p : dot(normal, p) == offset} with unit normal."""

    normal: np.ndarray
    offset: float

    def signed_distance(self, p) -> float:
        return float(np.dot(self.normal, p)) - self.offset

    def project(self, p) -> np.ndarray:
        return np.asarray(p, dtype=np.float64) - self.signed_distance(p) * self.normal


def fit_plane(points) -> Plane:
    """Total-least-squares plane through >= 3 points.

    The normal is the smallest eigenvector of the 3x3 covariance of the
    centered points. Its sign is fixed deterministically: positive dot with
    +Z, tie broken toward +X, then +Y.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise DegenerateGeometryError("fit_plane requires at least 3 points of dimension 3")
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    # eigh returns ascending eigenvalues; two near-zero ones mean the points
    # are collinear and the normal direction is not unique.
    if evals[1] < 1e-12:
        raise DegenerateGeometryError("plane fit is degenerate (collinear or coincident points)")
    normal = evecs[:, 0]
    for axis in (FORWARD, RIGHT, UP):
        d = float(np.dot(normal, axis))
        if abs(d) > 1e-12:
            if d < 0.0:
                normal = -normal
            break
    normal = normal / float(np.linalg.norm(normal))
    return Plane(normal, float(np.dot(normal, centroid)))
