"""Signed distance fields for nested meningeal layers.

A layer surface is carried implicitly as its signed distance field,
sampled at voxel centers, in mm, negative inside the enclosed region.
Three layers (pia, arachnoid, epidural) form a nested set when the pia
field dominates the arachnoid field, which dominates the epidural field,
at every voxel.  Enforcement clamps the inner fields downward so the
ordering holds exactly; the pia field is the trusted reference and is
never touched.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grid import (
    BINARY_MASK,
    REAL_FIELD,
    VoxelGrid,
    read_volume,
    write_volume,
)

LAYER_NAMES = ("pia", "arachnoid", "epidural")


@dataclass(frozen=True)
class SdfVolume:
    """A signed distance field on a voxel grid (mm, negative inside)."""

    grid: VoxelGrid

    def __post_init__(self):
        if self.grid.kind != REAL_FIELD:
            raise ValueError("signed distance volume requires a real-valued grid")

    @property
    def values(self) -> np.ndarray:
        return self.grid.data

    @property
    def spacing(self):
        return self.grid.spacing

    def with_values(self, values: np.ndarray) -> "SdfVolume":
        return SdfVolume(self.grid.with_data(values))

    def same_geometry(self, other: "SdfVolume") -> bool:
        return self.grid.same_geometry(other.grid)


@dataclass(frozen=True)
class NestedSdfSet:
    """Pia, arachnoid and epidural fields on one shared grid geometry.

    The constructor checks only the shared geometry.  The nesting order
    itself is established by enforce_nesting and audited by
    check_nesting, so that a violating set can still be loaded and
    inspected.
    """

    pia: SdfVolume
    arachnoid: SdfVolume
    epidural: SdfVolume

    def __post_init__(self):
        if not (self.pia.same_geometry(self.arachnoid)
                and self.pia.same_geometry(self.epidural)):
            raise ValueError("layer volumes must share one grid geometry")

    def layers(self):
        return (self.pia, self.arachnoid, self.epidural)


@dataclass(frozen=True)
class NestingReport:
    """Worst ordering violation and violating-voxel count per layer pair.

    An excess is how far a layer's field rises above the field it must
    stay below (arachnoid above pia, epidural above arachnoid); the max
    is signed, so a clean set reports a non-positive excess and zero
    counts.
    """

    arachnoid_max_excess: float
    arachnoid_violations: int
    epidural_max_excess: float
    epidural_violations: int

    @property
    def clean(self) -> bool:
        return self.arachnoid_violations == 0 and self.epidural_violations == 0


def signed_distance_from_mask(mask: VoxelGrid) -> SdfVolume:
    """Exact signed Euclidean distance to the mask boundary.

    The value at a voxel center is the distance to the nearest
    background center minus the distance to the nearest foreground
    center, so foreground voxels are negative and the zero crossing sits
    midway along every foreground/background grid edge.  Distances
    respect anisotropic spacing and are exact, not chamfer
    approximations.
    """
    if mask.kind != BINARY_MASK:
        raise ValueError("signed distance input must be a binary mask")
    fg = mask.data != 0
    if fg.all():
        raise ValueError("mask has no background voxels")
    if not fg.any():
        raise ValueError("mask has no foreground voxels")
    to_fg = _kernels.edt_squared(np.where(fg, 0.0, np.inf), mask.spacing)
    to_bg = _kernels.edt_squared(np.where(fg, np.inf, 0.0), mask.spacing)
    phi = np.sqrt(to_fg) - np.sqrt(to_bg)
    return SdfVolume(mask.with_data(phi, kind=REAL_FIELD))


def enforce_nesting(pia: SdfVolume, arachnoid: SdfVolume,
                    epidural: SdfVolume) -> NestedSdfSet:
    """Clamp the outer fields so the layer ordering holds exactly.

    The arachnoid field is pulled down to the pia field wherever it
    rises above it, and the epidural field is pulled down to the already
    clamped arachnoid field.  A pointwise minimum realizes the clamp, so
    voxels that were ordered to begin with come through bit-identical
    and no value ever increases.  The pia field passes through
    untouched.
    """
    if not (pia.same_geometry(arachnoid) and pia.same_geometry(epidural)):
        raise ValueError("layer volumes must share one grid geometry")
    ara = np.minimum(pia.values, arachnoid.values)
    epi = np.minimum(ara, epidural.values)
    return NestedSdfSet(pia, arachnoid.with_values(ara), epidural.with_values(epi))


def check_nesting(layers: NestedSdfSet) -> NestingReport:
    """Audit the layer ordering voxel by voxel."""
    ara_diff = layers.arachnoid.values - layers.pia.values
    epi_diff = layers.epidural.values - layers.arachnoid.values
    return NestingReport(
        arachnoid_max_excess=float(ara_diff.max()),
        arachnoid_violations=int(np.count_nonzero(ara_diff > 0.0)),
        epidural_max_excess=float(epi_diff.max()),
        epidural_violations=int(np.count_nonzero(epi_diff > 0.0)),
    )


def lipschitz_excess(field: SdfVolume) -> float:
    """Worst value jump between adjacent voxels beyond their distance.

    A clean distance field changes by at most the center-to-center
    distance between 6-neighbors; clamping can break that, fresh fields
    must not exceed it by more than one spacing step.
    """
    phi = field.values
    worst = -np.inf
    for axis, h in enumerate(field.spacing):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        jump = np.abs(phi[tuple(hi)] - phi[tuple(lo)]) - h
        if jump.size:
            worst = max(worst, float(jump.max()))
    return worst


def _interface_seeds(phi: np.ndarray, spacing):
    """Interface-adjacent voxels and their interpolated distances.

    Along each axis a sign change between neighbors puts the surface at
    the linear-interpolation crossing; each voxel keeps its nearest
    crossing distance per axis, and the axes combine as an
    inverse-square sum, which is exact for planar interfaces.  A voxel
    whose only crossings run oblique to the surface normal overestimates
    that way, so the gradient-normalized first-order estimate
    |phi| / |grad phi| caps the result; both estimates are invariant to
    rescaling phi.
    """
    inside = phi < 0.0
    inv_sq = np.zeros(phi.shape)
    seed = np.zeros(phi.shape, dtype=bool)
    for axis, h in enumerate(spacing):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        a, b = phi[lo], phi[hi]
        cross = inside[lo] != inside[hi]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(cross, a / (a - b), np.inf)
        d_lo = np.abs(t) * h
        d_hi = np.abs(1.0 - t) * h
        # nearest crossing along this axis, looking both ways
        near_lo = np.full(phi.shape, np.inf)
        near_hi = np.full(phi.shape, np.inf)
        near_lo[lo] = np.where(cross, d_lo, np.inf)
        near_hi[hi] = np.where(cross, d_hi, np.inf)
        near = np.minimum(near_lo, near_hi)
        hit = np.isfinite(near)
        seed |= hit
        with np.errstate(divide="ignore"):
            inv_sq[hit] += 1.0 / near[hit] ** 2
    with np.errstate(divide="ignore"):
        dist = np.where(seed, 1.0 / np.sqrt(inv_sq), np.inf)
    grads = np.gradient(phi, *spacing)
    norm = np.sqrt(sum(g * g for g in grads))
    with np.errstate(divide="ignore", invalid="ignore"):
        newton = np.where(norm > 0.0, np.abs(phi) / norm, np.inf)
    return seed, np.minimum(dist, newton)


def reinitialize_sdf(field: SdfVolume) -> SdfVolume:
    """Rebuild unit-gradient distances without moving the zero level.

    Voxels adjacent to a sign change are frozen at their interpolated
    interface distance, then the eikonal equation is solved outward by
    Gauss-Seidel fast sweeping.  The sign pattern of the input is kept.
    """
    phi = np.asarray(field.values, dtype=np.float64)
    inside = phi < 0.0
    if inside.all() or not inside.any():
        raise ValueError("field has no sign change to reinitialize from")
    seed, dist = _interface_seeds(phi, field.spacing)
    u = np.ascontiguousarray(np.where(seed, dist, np.inf))
    frozen = np.ascontiguousarray(seed.astype(np.uint8))
    side = np.ascontiguousarray(inside.astype(np.uint8))
    _kernels.fast_sweep(u, frozen, field.spacing, side)
    return field.with_values(np.where(inside, -u, u))


def write_layer_set(layers: NestedSdfSet, manifest_path: str) -> str:
    """Write three volumes plus a key=value manifest naming them.

    Volume files sit next to the manifest and are referenced by
    relative name, so the whole set moves as a unit.
    """
    base = os.path.splitext(os.path.basename(manifest_path))[0]
    out_dir = os.path.dirname(os.path.abspath(manifest_path))
    lines = []
    for name, layer in zip(LAYER_NAMES, layers.layers()):
        fname = f"{base}_{name}.mhd"
        write_volume(layer.grid, os.path.join(out_dir, fname))
        lines.append(f"{name}={fname}")
    with open(manifest_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest_path


def read_layer_set(manifest_path: str) -> NestedSdfSet:
    """Load a manifest written by write_layer_set."""
    entries = {}
    with open(manifest_path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed manifest line: {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in LAYER_NAMES:
                raise ValueError(f"unknown layer name in manifest: {key!r}")
            entries[key] = value.strip()
    missing = [n for n in LAYER_NAMES if n not in entries]
    if missing:
        raise ValueError(f"manifest missing layers: {', '.join(missing)}")
    out_dir = os.path.dirname(os.path.abspath(manifest_path))
    vols = [SdfVolume(read_volume(os.path.join(out_dir, entries[n])))
            for n in LAYER_NAMES]
    return NestedSdfSet(*vols)
