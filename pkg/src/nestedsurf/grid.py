"""Regular voxel grids and MetaImage-compatible volume files.

A grid couples a scalar array with its physical placement: per-axis voxel
spacing in mm and the world coordinate of voxel (0, 0, 0).  Data is stored
x-fastest on disk (flat index = x + nx * (y + ny * z)); in memory we keep a
(nx, ny, nz) array indexed as data[x, y, z].
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

BINARY_MASK = "binary_mask"
REAL_FIELD = "real_field"

_ELEMENT_TYPES = {BINARY_MASK: "MET_UCHAR", REAL_FIELD: "MET_FLOAT"}
_ELEMENT_KINDS = {v: k for k, v in _ELEMENT_TYPES.items()}
_DTYPES = {BINARY_MASK: np.dtype("<u1"), REAL_FIELD: np.dtype("<f4")}


class VolumeFormatError(ValueError):
    """Raised for unreadable or inconsistent volume files."""


@dataclass(frozen=True)
class VoxelGrid:
    """Immutable scalar volume with physical geometry.

    dims:     (nx, ny, nz) voxel counts
    spacing:  per-axis voxel size in mm, all positive
    origin:   world coordinate of the center of voxel (0, 0, 0), in mm
    data:     (nx, ny, nz) array, data[x, y, z]
    kind:     BINARY_MASK (values 0/1) or REAL_FIELD
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray = field(repr=False)
    kind: str = REAL_FIELD

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        # Canonical C layout: the compute kernels take contiguous views,
        # and file readers hand over transposed buffers otherwise.
        object.__setattr__(self, "data", np.ascontiguousarray(self.data))
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"grid dims must be three positive integers, got {dims}")
        if len(spacing) != 3 or any(not s > 0 for s in spacing):
            raise ValueError(f"grid spacing must be positive, got {spacing}")
        if self.kind not in _ELEMENT_TYPES:
            raise ValueError(f"unknown element kind {self.kind!r}")
        if self.data.shape != dims:
            raise ValueError(f"data shape {self.data.shape} does not match dims {dims}")
        if self.kind == BINARY_MASK:
            vals = np.unique(self.data)
            if not np.isin(vals, (0, 1)).all():
                raise ValueError("binary mask contains values other than 0 and 1")
        self.data.setflags(write=False)

    @property
    def voxel_count(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def same_geometry(self, other: "VoxelGrid") -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def with_data(self, data: np.ndarray, kind: str | None = None) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.spacing, self.origin, data, kind or self.kind)


def world_of_voxel(grid: VoxelGrid, index) -> np.ndarray:
    """World coordinate (mm) of a voxel center."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (3,):
        raise ValueError(f"voxel index must have three components, got {index!r}")
    if (idx < 0).any() or (idx >= np.asarray(grid.dims)).any():
        raise IndexError(f"voxel index {tuple(idx)} outside grid dims {grid.dims}")
    return np.asarray(grid.origin) + idx * np.asarray(grid.spacing)


def voxel_of_world(grid: VoxelGrid, xyz) -> tuple[int, int, int]:
    """Nearest voxel index for a world coordinate (mm)."""
    rel = (np.asarray(xyz, dtype=np.float64) - np.asarray(grid.origin)) / np.asarray(
        grid.spacing
    )
    idx = np.rint(rel).astype(np.int64)
    if (idx < 0).any() or (idx >= np.asarray(grid.dims)).any():
        raise IndexError(f"world point {tuple(xyz)} falls outside the grid")
    return int(idx[0]), int(idx[1]), int(idx[2])


def voxel_center_arrays(grid: VoxelGrid):
    """Broadcastable world-coordinate arrays (x, y, z) of all voxel centers."""
    nx, ny, nz = grid.dims
    sx, sy, sz = grid.spacing
    ox, oy, oz = grid.origin
    x = (ox + sx * np.arange(nx, dtype=np.float64))[:, None, None]
    y = (oy + sy * np.arange(ny, dtype=np.float64))[None, :, None]
    z = (oz + sz * np.arange(nz, dtype=np.float64))[None, None, :]
    return x, y, z


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_volume(grid: VoxelGrid, path: str) -> str:
    """Write a grid as a MetaImage header (.mhd) plus raw little-endian data.

    The raw file sits next to the header with the same stem.  Returns the
    header path.
    """
    if not path.endswith(".mhd"):
        raise ValueError(f"volume header path must end in .mhd, got {path!r}")
    raw_name = os.path.basename(path)[:-4] + ".raw"
    raw_path = os.path.join(os.path.dirname(path), raw_name)
    dtype = _DTYPES[grid.kind]
    flat = np.ascontiguousarray(grid.data.astype(dtype, copy=False).ravel(order="F"))
    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        f"DimSize = {grid.dims[0]} {grid.dims[1]} {grid.dims[2]}\n"
        f"ElementSpacing = {_format_floats(grid.spacing)}\n"
        f"Offset = {_format_floats(grid.origin)}\n"
        f"ElementType = {_ELEMENT_TYPES[grid.kind]}\n"
        f"ElementDataFile = {raw_name}\n"
    )
    with open(path, "w") as fh:
        fh.write(header)
    with open(raw_path, "wb") as fh:
        fh.write(flat.tobytes())
    return path


def _parse_header(path: str) -> dict[str, str]:
    fields = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise VolumeFormatError(f"{path}:{lineno}: expected 'Key = value'")
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
    return fields


def read_volume(path: str) -> VoxelGrid:
    """Read a MetaImage volume written by write_volume.

    Unknown header fields are ignored; missing or malformed required fields
    raise VolumeFormatError, as does a raw file whose size disagrees with
    DimSize.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"no such volume header: {path}")
    fields = _parse_header(path)
    if fields.get("NDims", "3") != "3":
        raise VolumeFormatError(f"{path}: only 3-D volumes are supported")
    for key in ("DimSize", "ElementSpacing", "ElementType", "ElementDataFile"):
        if key not in fields:
            raise VolumeFormatError(f"{path}: missing header field {key}")
    try:
        dims = tuple(int(v) for v in fields["DimSize"].split())
        spacing = tuple(float(v) for v in fields["ElementSpacing"].split())
        origin = tuple(float(v) for v in fields.get("Offset", "0 0 0").split())
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: malformed header field ({exc})") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise VolumeFormatError(f"{path}: header fields must have three components")
    element_type = fields["ElementType"]
    if element_type not in _ELEMENT_KINDS:
        raise VolumeFormatError(f"{path}: unsupported ElementType {element_type}")
    kind = _ELEMENT_KINDS[element_type]
    raw_path = os.path.join(os.path.dirname(path), fields["ElementDataFile"])
    if not os.path.exists(raw_path):
        raise VolumeFormatError(f"{path}: data file {raw_path} not found")
    dtype = _DTYPES[kind]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    with open(raw_path, "rb") as fh:
        raw = fh.read()
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{raw_path}: expected {expected} bytes for dims {dims}, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    try:
        return VoxelGrid(dims, spacing, origin, data, kind)
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: {exc}") from exc
