"""Procedural meshes and deformations used for toy datasets and tests."""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import Mesh


def icosahedron() -> Mesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    return Mesh(verts, faces)


def icosphere(subdivisions: int = 3) -> Mesh:
    """Unit icosphere; ``10 * 4**s + 2`` vertices (642 for s=3)."""
    mesh = icosahedron()
    verts = [tuple(p) for p in mesh.positions]
    faces = mesh.faces.tolist()
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                p = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2.0
                verts.append(tuple(p / np.linalg.norm(p)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new
    return Mesh(np.array(verts), np.array(faces))


def fibonacci_sphere(n: int, radii=(1.0, 0.8, 0.6), bumps: float = 0.05) -> Mesh:
    """Closed genus-0 mesh with exactly ``n`` vertices on a bumpy ellipsoid."""
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5 ** 0.5) * k
    unit = np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    hull = ConvexHull(unit)
    faces = hull.simplices.copy()
    # orient outward
    centers = unit[faces].mean(axis=1)
    normals = np.cross(unit[faces[:, 1]] - unit[faces[:, 0]], unit[faces[:, 2]] - unit[faces[:, 0]])
    flip = (normals * centers).sum(axis=1) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    r = 1.0 + bumps * np.sin(5 * theta) * np.sin(3 * phi)
    return Mesh(unit * r[:, None] * np.asarray(radii), faces)


def grid(xs, ys, z=None) -> Mesh:
    """Triangulated planar grid over coordinate vectors ``xs`` and ``ys``."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    Z = np.zeros_like(X) if z is None else z(X, Y)
    pos = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])
    faces = []
    for r in range(ny - 1):
        for c in range(nx - 1):
            a = r * nx + c
            b, d, e = a + 1, a + nx, a + nx + 1
            if (r + c) % 2 == 0:
                faces += [[a, b, e], [a, e, d]]
            else:
                faces += [[a, b, d], [b, e, d]]
    return Mesh(pos, np.array(faces))


def graded_grid(n: int = 12, ratio: float = 10.0) -> Mesh:
    """Planar grid whose x-spacing grows geometrically by ``ratio`` overall."""
    steps = ratio ** (np.arange(n - 1) / (n - 2))
    xs = np.concatenate([[0.0], np.cumsum(steps)])
    xs /= xs[-1]
    ys = np.linspace(0.0, 1.0, n)
    return grid(xs, ys)


def cylinder(rings: int = 20, segments: int = 25, radius: float = 0.25, height: float = 2.0) -> Mesh:
    """Open tube along +z with ``rings * segments`` vertices."""
    ang = 2 * np.pi * np.arange(segments) / segments
    zs = np.linspace(0.0, height, rings)
    pos = np.array([[radius * np.cos(a), radius * np.sin(a), z] for z in zs for a in ang])
    faces = []
    for r in range(rings - 1):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            c, d = a + segments, b + segments
            faces += [[a, b, d], [a, d, c]]
    return Mesh(pos, np.array(faces))


def bend(points, angle: float, height: float = 2.0, azimuth: float = 0.0) -> np.ndarray:
    """Bend points along z by ``angle`` radians in the plane at ``azimuth``.

    The z-axis segment [0, height] is mapped isometrically onto a circular arc.
    """
    p = np.asarray(points, float)
    if abs(angle) < 1e-12:
        return p.copy()
    c, s = np.cos(azimuth), np.sin(azimuth)
    u = p[:, 0] * c + p[:, 1] * s
    w = -p[:, 0] * s + p[:, 1] * c
    R = height / angle
    t = p[:, 2] / R
    u2 = R - (R - u) * np.cos(t)
    z2 = (R - u) * np.sin(t)
    return np.column_stack([u2 * c - w * s, u2 * s + w * c, z2])


def bend_region(points, angle: float, z0: float, z1: float, azimuth: float = 0.0,
                samples: int = 4001) -> np.ndarray:
    """Bend only the slab ``z0 <= z <= z1``; the ends move rigidly.

    The bend angle ramps in with a smoothstep profile, so curvature is
    smooth along the axis and zero outside the slab.
    """
    p = np.asarray(points, float)
    c, s = np.cos(azimuth), np.sin(azimuth)
    u = p[:, 0] * c + p[:, 1] * s
    w = -p[:, 0] * s + p[:, 1] * c
    lo = min(z0, p[:, 2].min())
    hi = max(z1, p[:, 2].max())
    grid_s = np.linspace(lo, hi, samples)
    t = np.clip((grid_s - z0) / (z1 - z0), 0.0, 1.0)
    phi = angle * t * t * (3.0 - 2.0 * t)
    tu, tz = np.sin(phi), np.cos(phi)
    ds = np.diff(grid_s)
    cu = np.concatenate([[0.0], np.cumsum(0.5 * (tu[1:] + tu[:-1]) * ds)])
    cz = lo + np.concatenate([[0.0], np.cumsum(0.5 * (tz[1:] + tz[:-1]) * ds)])
    sz = p[:, 2]
    ph = np.interp(sz, grid_s, phi)
    u2 = np.interp(sz, grid_s, cu) + u * np.cos(ph)
    z2 = np.interp(sz, grid_s, cz) - u * np.sin(ph)
    return np.column_stack([u2 * c - w * s, u2 * s + w * c, z2])


def twist(points, angle: float, height: float = 2.0) -> np.ndarray:
    p = np.asarray(points, float)
    t = angle * p[:, 2] / height
    c, s = np.cos(t), np.sin(t)
    return np.column_stack([c * p[:, 0] - s * p[:, 1], s * p[:, 0] + c * p[:, 1], p[:, 2]])


def taper(points, factor: float, height: float = 2.0) -> np.ndarray:
    p = np.asarray(points, float)
    k = 1.0 + (factor - 1.0) * p[:, 2] / height
    return np.column_stack([p[:, 0] * k, p[:, 1] * k, p[:, 2]])


def rotation_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K
