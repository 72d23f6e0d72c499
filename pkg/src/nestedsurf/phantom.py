"""Analytic signed-distance phantoms and controlled corruptions.

Sphere, ellipsoid and torus fields sampled exactly at voxel centers
give downstream oracles a ground truth whose own error is negligible:
sphere and torus distances are closed form, and the ellipsoid distance
comes from the normal-foot root equation bisected well below 1e-9 mm,
with the symmetry-plane branch feet enumerated explicitly.
Corruptions (uniform noise, gradient rescaling, seeded ordering
violations) are layered on after sampling to exercise repair paths.
"""

from dataclasses import dataclass

import numpy as np

from .grid import REAL_FIELD, VoxelGrid
from .sdf import NestedSdfSet, SdfVolume, check_nesting

PHANTOM_KINDS = ("sphere", "ellipsoid", "torus")


@dataclass(frozen=True)
class Corruption:
    """Optional distortions, applied in order: scale, noise, violations.

    slope_scale multiplies the field, which keeps the zero set but
    pulls the gradient away from unit length; noise adds i.i.d.
    uniform [-noise, +noise] mm per voxel from a counter-based stream
    keyed by (seed, layer index); violations are injected last and
    need the noisy set to still nest, so their count stays exact.
    """

    noise: float = 0.0
    violations: int = 0
    violation_magnitude: float = 0.0
    slope_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.noise < 0.0:
            raise ValueError("noise amplitude must be nonnegative")
        if int(self.violations) != self.violations or self.violations < 0:
            raise ValueError("violation count must be a nonnegative integer")
        if self.violations and self.violation_magnitude <= 0.0:
            raise ValueError("violation magnitude must be positive")
        if self.slope_scale <= 0.0:
            raise ValueError("slope scale must be positive")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")


@dataclass(frozen=True)
class PhantomSpec:
    """Grid geometry plus per-kind layer parameters, all mm.

    layers holds (r_pia, r_ara, r_epi) for sphere, three (a, b, c)
    semi-axis triples for ellipsoid, and (ring_radius, tube_radius)
    for torus.  Multi-layer extents must grow strictly outward and
    every surface must clear the grid boundary by two voxels.
    """

    kind: str
    dims: tuple
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    layers: tuple = ()
    corruption: Corruption | None = None

    def __post_init__(self):
        if self.kind not in PHANTOM_KINDS:
            raise ValueError(f"kind must be one of {PHANTOM_KINDS}")
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError("dims must be three positive integers")
        if len(spacing) != 3 or any(not s > 0.0 for s in spacing):
            raise ValueError("spacing must be positive")
        if len(origin) != 3:
            raise ValueError("origin must have three components")
        half = tuple((d - 1) / 2.0 * s for d, s in zip(dims, spacing))
        if self.kind == "sphere":
            layers = tuple(float(r) for r in self.layers)
            if len(layers) != 3 or any(r <= 0.0 for r in layers):
                raise ValueError("sphere needs three positive radii")
            if not (layers[0] < layers[1] < layers[2]):
                raise ValueError("layer radii must increase strictly outward")
            reach = (layers[2],) * 3
        elif self.kind == "ellipsoid":
            layers = tuple(tuple(float(a) for a in ax) for ax in self.layers)
            if len(layers) != 3 or any(len(ax) != 3 for ax in layers):
                raise ValueError("ellipsoid needs three semi-axis triples")
            if any(a <= 0.0 for ax in layers for a in ax):
                raise ValueError("semi-axes must be positive")
            for inner, outer in zip(layers, layers[1:]):
                if not all(i < o for i, o in zip(inner, outer)):
                    raise ValueError("semi-axes must increase strictly outward")
            reach = layers[2]
        else:
            layers = tuple(float(v) for v in self.layers)
            if len(layers) != 2 or any(v <= 0.0 for v in layers):
                raise ValueError("torus needs a positive ring and tube radius")
            if layers[1] >= layers[0]:
                raise ValueError("tube radius must stay below the ring radius")
            reach = (layers[0] + layers[1], layers[0] + layers[1], layers[1])
            if self.corruption is not None and self.corruption.violations:
                raise ValueError("ordering violations need a nested set, "
                                 "not a torus")
        for r, h, s in zip(reach, half, spacing):
            if r + 2.0 * s > h:
                raise ValueError("surface too close to the grid boundary")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "layers", layers)


_CHUNK = 1 << 18


def _ellipsoid_chunk(pts, a):
    # Fold into the nonnegative octant; the distance is symmetric.
    q = np.abs(pts)
    a2 = a * a
    lev = ((q / a) ** 2).sum(1)
    nz = q > 0.0
    aq2 = (a * q) ** 2
    dist = np.full(len(q), np.inf)

    # Normal-foot root: F(t) = sum (a_i q_i)^2 / (t + a_i^2)^2 = 1 on
    # (-min a_i^2 over nonzero components, |a q|], where F decreases
    # from +inf to below 1.  The foot keeps every zero component at 0.
    live = np.flatnonzero(nz.any(1))
    if len(live):
        ql, nzl, aq2l = q[live], nz[live], aq2[live]
        lo = -np.where(nzl, a2, np.inf).min(1)
        hi = np.sqrt(aq2l.sum(1))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            den = (mid[:, None] + a2) ** 2
            f = (aq2l / np.where(den > 0.0, den, 1.0)).sum(1)
            high = f > 1.0
            lo = np.where(high, mid, lo)
            hi = np.where(high, hi, mid)
        t = 0.5 * (lo + hi)
        den = t[:, None] + a2
        term = np.where(nzl, t[:, None] * ql / np.where(den != 0.0, den, 1.0),
                        0.0)
        dist[live] = np.sqrt((term ** 2).sum(1))

    # A point on symmetry plane j may be closer to a foot that leaves
    # the plane (t = -a_j^2).  Valid only when every nonzero component
    # sits on a strictly longer axis and the residual stays positive.
    for j in range(3):
        rows = np.flatnonzero(~nz[:, j])
        if not len(rows):
            continue
        qj = q[rows]
        ok = np.ones(len(rows), dtype=bool)
        s = np.ones(len(rows))
        gap = np.zeros(len(rows))
        for i in range(3):
            if i == j:
                continue
            dji = a2[i] - a2[j]
            if dji <= 0.0:
                ok &= ~(qj[:, i] > 0.0)
                continue
            s = s - (a[i] * qj[:, i] / dji) ** 2
            gap = gap + (qj[:, i] - a2[i] * qj[:, i] / dji) ** 2
        ok &= s > 0.0
        d = np.sqrt(gap + a2[j] * np.where(ok, s, 0.0))
        dist[rows] = np.where(ok, np.minimum(dist[rows], d), dist[rows])

    return np.where(lev < 1.0, -dist, dist)


def _ellipsoid_signed(points, axes):
    out = np.empty(len(points))
    for start in range(0, len(points), _CHUNK):
        stop = start + _CHUNK
        out[start:stop] = _ellipsoid_chunk(points[start:stop], axes)
    return out


def generate(spec: PhantomSpec):
    """Sample the phantom at voxel centers, centered in the grid.

    Returns a NestedSdfSet for sphere and ellipsoid, a single
    SdfVolume for torus.  Output is a pure function of the spec,
    corruption seed included.
    """
    center = tuple(o + (d - 1) / 2.0 * s
                   for o, d, s in zip(spec.origin, spec.dims, spec.spacing))
    ax, ay, az = (np.arange(d) * s + o - c for d, s, o, c in
                  zip(spec.dims, spec.spacing, spec.origin, center))
    if spec.kind == "sphere":
        rad = np.sqrt(ax[:, None, None] ** 2 + ay[None, :, None] ** 2
                      + az[None, None, :] ** 2)
        fields = [rad - r for r in spec.layers]
    elif spec.kind == "ellipsoid":
        pts = np.stack(np.meshgrid(ax, ay, az, indexing="ij"),
                       axis=-1).reshape(-1, 3)
        fields = [_ellipsoid_signed(pts, np.asarray(axes)).reshape(spec.dims)
                  for axes in spec.layers]
    else:
        ring, tube = spec.layers
        rxy = np.hypot(ax[:, None, None], ay[None, :, None])
        fields = [np.hypot(rxy - ring, az[None, None, :]) - tube]

    cor = spec.corruption
    if cor is not None:
        for k, f in enumerate(fields):
            if cor.slope_scale != 1.0:
                f = f * cor.slope_scale
            if cor.noise > 0.0:
                rng = np.random.Generator(np.random.Philox(key=[cor.seed, k]))
                f = f + rng.uniform(-cor.noise, cor.noise, f.shape)
            fields[k] = f

    vols = [SdfVolume(VoxelGrid(spec.dims, spec.spacing, spec.origin,
                                np.ascontiguousarray(f), REAL_FIELD))
            for f in fields]
    if spec.kind == "torus":
        return vols[0]
    layers = NestedSdfSet(*vols)
    if cor is not None and cor.violations:
        layers = inject_violations(layers, cor.violations,
                                   cor.violation_magnitude, cor.seed)
    return layers


def inject_violations(layers: NestedSdfSet, count: int, magnitude: float,
                      seed: int) -> NestedSdfSet:
    """Lift an outer layer above its inner neighbor at seeded voxels.

    Each chosen voxel receives exactly one ordering violation of
    exactly `magnitude`: either the arachnoid raised over the pia or
    the epidural over the arachnoid, the pair drawn per voxel.  The
    input must nest cleanly so the result has exactly `count`
    violating voxels; a zero count returns the set untouched.
    """
    count = int(count)
    if count < 0:
        raise ValueError("violation count must be nonnegative")
    if count == 0:
        return layers
    if magnitude <= 0.0:
        raise ValueError("violation magnitude must be positive")
    nvox = layers.pia.grid.voxel_count
    if count > nvox:
        raise ValueError(f"violation count {count} exceeds {nvox} voxels")
    if not check_nesting(layers).clean:
        raise ValueError("set already violates nesting")
    rng = np.random.Generator(np.random.Philox(int(seed)))
    idx = rng.choice(nvox, size=count, replace=False)
    lift_ara = rng.integers(0, 2, size=count) == 0
    pia = layers.pia.values.reshape(-1)
    ara = layers.arachnoid.values.copy()
    epi = layers.epidural.values.copy()
    ara_f, epi_f = ara.reshape(-1), epi.reshape(-1)
    ara_f[idx[lift_ara]] = pia[idx[lift_ara]] + magnitude
    epi_f[idx[~lift_ara]] = ara_f[idx[~lift_ara]] + magnitude
    return NestedSdfSet(pia=layers.pia,
                        arachnoid=layers.arachnoid.with_values(ara),
                        epidural=layers.epidural.with_values(epi))


_SCALAR_KEYS = {"noise": float, "violations": int,
                "violation_magnitude": float, "slope_scale": float,
                "seed": int}


def _parse_floats(text, what):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ValueError(f"malformed {what}: {text!r}") from None


def read_phantom_spec(path: str) -> PhantomSpec:
    """Parse a line-based key=value phantom description.

    Geometry keys: kind, dims, spacing, origin (optional).  Layer keys
    by kind: radii (sphere), semi_axes with semicolon-separated triples
    (ellipsoid), ring_radius and tube_radius (torus).  Corruption keys
    are optional: noise, violations, violation_magnitude, slope_scale,
    seed.  Unknown or duplicate keys are errors.
    """
    pairs = {}
    with open(path, "r") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"malformed spec line: {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in pairs:
                raise ValueError(f"duplicate key {key!r}")
            pairs[key] = value

    def take(key, required=False):
        if required and key not in pairs:
            raise ValueError(f"spec file must set {key!r}")
        return pairs.pop(key, None)

    kind = take("kind", required=True)
    dims = _parse_floats(take("dims", required=True), "dims")
    spacing = _parse_floats(take("spacing", required=True), "spacing")
    origin = pairs.pop("origin", None)
    origin = _parse_floats(origin, "origin") if origin else (0.0, 0.0, 0.0)
    if kind == "sphere":
        layers = _parse_floats(take("radii", required=True), "radii")
    elif kind == "ellipsoid":
        layers = tuple(_parse_floats(part, "semi_axes") for part in
                       take("semi_axes", required=True).split(";"))
    elif kind == "torus":
        layers = (_parse_floats(take("ring_radius", required=True),
                                "ring_radius")[0],
                  _parse_floats(take("tube_radius", required=True),
                                "tube_radius")[0])
    else:
        raise ValueError(f"kind must be one of {PHANTOM_KINDS}")
    corruption = None
    if any(key in pairs for key in _SCALAR_KEYS):
        fields = {key: conv(pairs.pop(key)) for key, conv in
                  _SCALAR_KEYS.items() if key in pairs}
        corruption = Corruption(**fields)
    if pairs:
        raise ValueError(f"unknown keys: {', '.join(sorted(pairs))}")
    return PhantomSpec(kind=kind, dims=dims, spacing=spacing, origin=origin,
                       layers=layers, corruption=corruption)
