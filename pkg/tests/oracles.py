"""Independent brute-force oracles shared by the unit and acceptance tests."""

import numpy as np

from avatarfit.fingers import CapsuleShape


def sample_capsule_surface(shape: CapsuleShape, n_axis: int, n_ring: int):
    """Dense point sampling of a capsule surface.

    Cylinder body sampled on an (n_axis x n_ring) grid, the two hemispherical
    caps on matching angular grids restricted to their outward halves.
    Returns (points, resolution) where resolution bounds the distance from
    any true surface point to its nearest sample.
    """
    axis = shape.end - shape.start
    length = float(np.linalg.norm(axis))
    u = axis / length
    seed = np.array([1.0, 0.0, 0.0])
    if abs(float(np.dot(seed, u))) > 0.9:
        seed = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, seed)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)

    angles = np.linspace(0, 2 * np.pi, n_ring, endpoint=False)
    ring = np.outer(np.cos(angles), e1) + np.outer(np.sin(angles), e2)

    points = [shape.start + t * axis + shape.radius * r
              for t in np.linspace(0, 1, n_axis) for r in ring]
    n_phi = max(8, n_ring // 4)
    for phi in np.linspace(0, np.pi / 2, n_phi):
        lateral = np.cos(phi)
        axial = np.sin(phi)
        for r in ring:
            d = lateral * r - axial * u
            points.append(shape.start + shape.radius * d)
            points.append(shape.end + shape.radius * (lateral * r + axial * u))

    arc = 2 * np.pi * shape.radius / n_ring
    axial_step = max(length / (n_axis - 1), shape.radius * (np.pi / 2) / (n_phi - 1))
    resolution = float(np.hypot(arc, axial_step))
    return np.asarray(points), resolution
