"""Isosurface triangulation of signed distance volumes.

Cells whose corner values straddle the iso level are triangulated with
vertices linearly interpolated onto cell edges.  Ambiguous faces are
split by the sign of the bilinear saddle value so neighboring cells
always agree, which keeps the mesh crack-free; interior two-diagonal
configurations get a trilinear interior test and, when connected, a
tunnel band instead of separated caps.  Triangles wind so right-hand
normals point toward increasing field values.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .sdf import SdfVolume


class MeshFormatError(ValueError):
    """Raised when a mesh file does not parse."""


@dataclass(frozen=True)
class TriangleMesh:
    """Triangle surface in world mm with outward-oriented winding."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be an (m, 3) array")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if t.size and ((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2])
                       | (t[:, 2] == t[:, 0])).any():
            raise ValueError("degenerate triangle with repeated vertex")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


@dataclass(frozen=True)
class MeshDiagnostics:
    vertex_count: int
    edge_count: int
    triangle_count: int
    euler_characteristic: int
    boundary_edge_count: int
    nonmanifold_edge_count: int
    min_triangle_area: float

    @property
    def watertight(self) -> bool:
        return self.boundary_edge_count == 0 and self.nonmanifold_edge_count == 0


def marching_cubes(field: SdfVolume, iso: float = 0.0) -> TriangleMesh:
    """Extract the iso level of the field as a welded triangle mesh.

    Vertices land on cell edges at the linear crossing
    t = (iso - a) / (b - a) and are indexed by a global edge key, then
    renumbered in sorted key order, so the output is identical for any
    cell visit order.  Corner values exactly on iso are nudged up by
    1e-6 of the finest spacing step first; a zero-measure tie otherwise
    needs tabulated degenerate cases.
    """
    values = np.asarray(field.values, dtype=np.float64)
    if not np.isfinite(values).all():
        raise ValueError("field contains non-finite values")
    lo, hi = float(values.min()), float(values.max())
    if not (lo < iso < hi):
        raise ValueError(
            f"iso level {iso} outside the open value range ({lo}, {hi})")
    w = values - iso
    w[w == 0.0] = 1e-6 * min(field.spacing)
    segs = _kernels.marching_cells(np.ascontiguousarray(w), field.spacing)
    if len(segs) == 0:
        return TriangleMesh(np.empty((0, 3)), np.empty((0, 3), dtype=np.int64))
    edge_ids, inverse = np.unique(segs.ravel(), return_inverse=True)
    triangles = inverse.reshape(-1, 3).astype(np.int64)
    nx, ny, nz = field.grid.dims
    axis = (edge_ids % 3).astype(np.int64)
    lin = edge_ids // 3
    z = lin % nz
    y = (lin // nz) % ny
    x = lin // (nz * ny)
    wa = w[x, y, z]
    step = np.eye(3, dtype=np.int64)[axis]
    wb = w[x + step[:, 0], y + step[:, 1], z + step[:, 2]]
    t = wa / (wa - wb)
    frac = np.stack([x, y, z], axis=1).astype(np.float64)
    frac[np.arange(len(axis)), axis] += t
    vertices = np.asarray(field.grid.origin) + frac * np.asarray(field.spacing)
    return TriangleMesh(vertices, triangles)


def mesh_diagnostics(mesh: TriangleMesh) -> MeshDiagnostics:
    """Combinatorial counts plus the smallest triangle area."""
    v_count = mesh.vertex_count
    tris = mesh.triangles
    if len(tris) == 0:
        return MeshDiagnostics(v_count, 0, 0, v_count, 0, 0, 0.0)
    halves = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    lo = halves.min(axis=1).astype(np.int64)
    hi = halves.max(axis=1).astype(np.int64)
    keys, counts = np.unique(lo * v_count + hi, return_counts=True)
    a = mesh.vertices[tris[:, 0]]
    cross = np.cross(mesh.vertices[tris[:, 1]] - a, mesh.vertices[tris[:, 2]] - a)
    areas = 0.5 * np.sqrt((cross * cross).sum(axis=1))
    return MeshDiagnostics(
        vertex_count=v_count,
        edge_count=len(keys),
        triangle_count=len(tris),
        euler_characteristic=v_count - len(keys) + len(tris),
        boundary_edge_count=int((counts == 1).sum()),
        nonmanifold_edge_count=int((counts > 2).sum()),
        min_triangle_area=float(areas.min()),
    )


# ---------------------------------------------------------------------------
# mesh file formats

def _write_obj(mesh: TriangleMesh, path: str) -> None:
    with open(path, "w") as fh:
        for vx, vy, vz in mesh.vertices:
            fh.write(f"v {float(vx)!r} {float(vy)!r} {float(vz)!r}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def _read_obj(path: str) -> TriangleMesh:
    verts = []
    faces = []
    with open(path) as fh:
        for raw in fh:
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"short vertex line: {raw.rstrip()!r}")
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshFormatError("only triangle faces are supported")
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if min(idx) < 1:
                    raise MeshFormatError("face indices must be positive")
                faces.append([i - 1 for i in idx])
            # other OBJ record types carry no geometry we use
    return TriangleMesh(
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
    )


_PLY_HEADER = (
    "ply\n"
    "format binary_little_endian 1.0\n"
    "element vertex {nv}\n"
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "element face {nf}\n"
    "property list uchar int vertex_indices\n"
    "end_header\n"
)


# packed 13-byte face record: uchar count then three int32 indices
_PLY_FACE = np.dtype([("count", "u1"), ("index", "<3i4")])


def _write_ply(mesh: TriangleMesh, path: str) -> None:
    header = _PLY_HEADER.format(nv=mesh.vertex_count, nf=mesh.triangle_count)
    faces = np.empty(mesh.triangle_count, dtype=_PLY_FACE)
    faces["count"] = 3
    faces["index"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(mesh.vertices.astype("<f4").tobytes())
        fh.write(faces.tobytes())


def _read_ply(path: str) -> TriangleMesh:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise MeshFormatError("not a ply file")
    header = blob[:end].decode("ascii").splitlines()
    nv = nf = None
    for line in header:
        parts = line.split()
        if parts[:2] == ["format", "binary_little_endian"]:
            pass
        elif parts[0] == "format":
            raise MeshFormatError("only binary little-endian ply is supported")
        if parts[:2] == ["element", "vertex"]:
            nv = int(parts[2])
        elif parts[:2] == ["element", "face"]:
            nf = int(parts[2])
    if nv is None or nf is None:
        raise MeshFormatError("ply header missing vertex or face element")
    body = blob[end + len(b"end_header\n"):]
    vbytes = nv * 12
    fbytes = nf * 13
    if len(body) != vbytes + fbytes:
        raise MeshFormatError("ply payload size does not match header")
    verts = np.frombuffer(body[:vbytes], dtype="<f4").reshape(nv, 3)
    records = np.frombuffer(body[vbytes:], dtype=_PLY_FACE)
    if nf and (records["count"] != 3).any():
        raise MeshFormatError("only triangle faces are supported")
    return TriangleMesh(verts.astype(np.float64),
                        records["index"].astype(np.int64))


def write_mesh(mesh: TriangleMesh, path: str) -> str:
    """Write OBJ (ascii) or PLY (binary little-endian) by file suffix."""
    if path.endswith(".obj"):
        _write_obj(mesh, path)
    elif path.endswith(".ply"):
        _write_ply(mesh, path)
    else:
        raise MeshFormatError(f"unsupported mesh suffix: {path}")
    return path


def read_mesh(path: str) -> TriangleMesh:
    if path.endswith(".obj"):
        return _read_obj(path)
    if path.endswith(".ply"):
        return _read_ply(path)
    raise MeshFormatError(f"unsupported mesh suffix: {path}")
