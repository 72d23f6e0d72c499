"""Shared analytic fields, reference meshes, and brute-force oracles."""

import numpy as np
import pytest

from nestedsurf.grid import REAL_FIELD, VoxelGrid
from nestedsurf.mesher import TriangleMesh
from nestedsurf.sdf import SdfVolume


def sphere_field(dims, spacing, radius, center=None, origin=(0.0, 0.0, 0.0)):
    """Exact sphere SDF sampled at voxel centers."""
    dims = tuple(dims)
    spacing = tuple(float(s) for s in spacing)
    origin = tuple(float(o) for o in origin)
    if center is None:
        center = tuple(o + (d - 1) / 2.0 * s
                       for o, d, s in zip(origin, dims, spacing))
    axes = [o + np.arange(d, dtype=np.float64) * s
            for o, d, s in zip(origin, dims, spacing)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    phi = np.sqrt((x - center[0]) ** 2 + (y - center[1]) ** 2
                  + (z - center[2]) ** 2) - radius
    return SdfVolume(VoxelGrid(dims, spacing, origin, phi, REAL_FIELD))


def torus_field(dims, spacing, ring, tube):
    """Exact torus SDF (ring in the xy plane) centered on the grid."""
    dims = tuple(dims)
    spacing = tuple(float(s) for s in spacing)
    center = tuple((d - 1) / 2.0 * s for d, s in zip(dims, spacing))
    axes = [np.arange(d, dtype=np.float64) * s for d, s in zip(dims, spacing)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    phi = np.hypot(np.hypot(x - center[0], y - center[1]) - ring,
                   z - center[2]) - tube
    return SdfVolume(VoxelGrid(dims, spacing, (0.0, 0.0, 0.0), phi, REAL_FIELD))


def brute_force_edt_squared(fg, spacing):
    """Nearest-opposite-center squared distances by exhaustive search.

    With dyadic spacing components and grids up to 16 voxels per axis
    every intermediate product is exactly representable, so the result
    is exact arithmetic, not an approximation.
    """
    dims = fg.shape
    axes = [np.arange(d, dtype=np.float64) * s for d, s in zip(dims, spacing)]
    grids = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([g.ravel() for g in grids], axis=1)
    flat = fg.ravel()

    def min_sq(sites):
        out = np.empty(len(centers))
        for start in range(0, len(centers), 512):
            d = centers[start:start + 512, None, :] - sites[None, :, :]
            out[start:start + 512] = (d * d).sum(axis=2).min(axis=1)
        return out.reshape(dims)

    return min_sq(centers[flat]), min_sq(centers[~flat])


def random_spacing(rng):
    """Dyadic spacing triple so squared distances stay exact in floats."""
    return tuple(float(v) for v in rng.integers(1, 9, size=3) * 0.25)


def random_two_phase_mask(rng, max_side=16):
    """Random binary mask with both phases present."""
    dims = tuple(int(v) for v in rng.integers(2, max_side + 1, size=3))
    while True:
        mask = (rng.random(dims) < rng.uniform(0.15, 0.85)).astype(np.uint8)
        if 0 < mask.sum() < mask.size:
            return mask


_CUBE_TRIANGLES = (
    (0, 2, 3), (0, 3, 1), (4, 5, 7), (4, 7, 6),
    (0, 1, 5), (0, 5, 4), (2, 7, 3), (2, 6, 7),
    (0, 4, 6), (0, 6, 2), (1, 3, 7), (1, 7, 5),
)


def unit_cube_mesh(offset=(0.0, 0.0, 0.0)):
    """Axis-aligned unit cube as 12 outward-oriented triangles."""
    corners = np.array([[(i >> a) & 1 for a in range(3)] for i in range(8)],
                       dtype=np.float64)
    return TriangleMesh(corners + np.asarray(offset, dtype=np.float64),
                        np.array(_CUBE_TRIANGLES, dtype=np.int64))


_ICO_FACES = (
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
)


def icosahedron_mesh():
    """Regular icosahedron, edge length 2."""
    g = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0),
        (0, -1, g), (0, 1, g), (0, -1, -g), (0, 1, -g),
        (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1),
    ], dtype=np.float64)
    return TriangleMesh(verts, np.array(_ICO_FACES, dtype=np.int64))


def rigid_motion(rng):
    """Random proper rotation plus translation."""
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q, rng.uniform(-50.0, 50.0, size=3)


@pytest.fixture
def philox():
    def make(seed):
        return np.random.Generator(np.random.Philox(seed))
    return make
