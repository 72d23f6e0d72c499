"""Pure-Python grid kernels.

Reference implementations of the three hot loops: exact squared Euclidean
distance transform, isosurface cell extraction, and fast-sweeping eikonal
updates.  The compiled extension mirrors these routines operation for
operation so both backends produce identical bytes; keep any change here in
lockstep with _compiled.pyx.
"""

from __future__ import annotations

import math

import numpy as np

INF = float("inf")

# Cell corners are numbered c = dx + 2*dy + 4*dz.  The twelve cell edges are
# listed as (base corner offset, axis); edge L spans EDGE_CORNERS[L].
EDGE_BASE = (
    (0, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 1, 1, 0),
    (0, 0, 0, 1), (1, 0, 0, 1), (0, 0, 1, 1), (1, 0, 1, 1),
    (0, 0, 0, 2), (1, 0, 0, 2), (0, 1, 0, 2), (1, 1, 0, 2),
)
EDGE_CORNERS = (
    (0, 1), (2, 3), (4, 5), (6, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
)

# Faces carry their four corners in cyclic order, right-handed about the
# outward normal, and the cell edge on each corner-to-corner step.
FACE_CORNERS = (
    (0, 4, 6, 2), (1, 3, 7, 5), (0, 1, 5, 4),
    (2, 6, 7, 3), (0, 2, 3, 1), (4, 5, 7, 6),
)
FACE_EDGES = (
    (8, 6, 10, 4), (5, 11, 7, 9), (0, 9, 2, 8),
    (10, 3, 11, 1), (4, 1, 5, 0), (2, 7, 3, 6),
)

_CORNER_XYZ = tuple((c & 1, (c >> 1) & 1, (c >> 2) & 1) for c in range(8))


# ---------------------------------------------------------------------------
# exact squared Euclidean distance transform

def _edt_line(f, n, w2, d, v, z):
    """One lower-envelope pass over a line of squared distances.

    Entries at +inf never enter the envelope, so lines may mix finite values
    with +inf from earlier passes.  Assumes at least one finite entry.
    """
    k = -1
    s = 0.0
    for q in range(n):
        if f[q] == INF:
            continue
        fq = f[q] + w2 * q * q
        while k >= 0:
            p = v[k]
            s = (fq - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p))
            if s <= z[k]:
                k -= 1
            else:
                break
        k += 1
        v[k] = q
        z[k] = -INF if k == 0 else s
        z[k + 1] = INF
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        dq = q - p
        d[q] = f[p] + w2 * dq * dq


def edt_squared(f: np.ndarray, spacing) -> np.ndarray:
    """In-place exact squared EDT of a seed array (0 at sites, +inf elsewhere).

    Three separable lower-envelope passes, one per axis, with anisotropic
    voxel spacing in mm.  Lines without any finite value are left at +inf
    for later passes to fill.
    """
    nx, ny, nz = f.shape
    sx, sy, sz = (float(s) for s in spacing)
    for axis, (n, w) in enumerate(((nx, sx), (ny, sy), (nz, sz))):
        if n == 1:
            continue
        w2 = w * w
        d = np.empty(n, dtype=np.float64)
        v = np.empty(n, dtype=np.int64)
        z = np.empty(n + 1, dtype=np.float64)
        moved = np.moveaxis(f, axis, 0)
        work = np.ascontiguousarray(moved)
        flat = work.reshape(n, -1)
        for j in range(flat.shape[1]):
            line = flat[:, j]
            if not np.isfinite(line).any():
                continue
            _edt_line(line, n, w2, d, v, z)
            line[:] = d
        moved[...] = work
    return f


# ---------------------------------------------------------------------------
# isosurface cell extraction

def _cell_polygons(w8):
    """Contour polygons of one cell as tuples of local edge indices.

    Corner values w8 are iso-relative and nonzero.  Segments on each face
    are oriented so right-hand-rule triangle normals point toward positive
    values; ambiguous faces are split by the sign of the bilinear saddle
    value.  Every cut edge gets exactly one incoming and one outgoing
    segment, so the walk below always closes.
    """
    # bool(): numpy scalars would turn the ncut sum below into a logical or
    inside = [bool(w8[c] < 0.0) for c in range(8)]
    nxt = [-1] * 12
    for f in range(6):
        cs = FACE_CORNERS[f]
        es = FACE_EDGES[f]
        flags = (inside[cs[0]], inside[cs[1]], inside[cs[2]], inside[cs[3]])
        ncut = (
            (flags[0] != flags[1])
            + (flags[1] != flags[2])
            + (flags[2] != flags[3])
            + (flags[3] != flags[0])
        )
        if ncut == 0:
            continue
        if ncut == 2:
            start = end = 0
            for a in range(4):
                b = (a + 1) & 3
                if flags[a] != flags[b]:
                    if flags[b]:
                        start = a
                    else:
                        end = a
            nxt[es[start]] = es[end]
        else:
            w0, w1, w2, w3 = (w8[c] for c in cs)
            saddle = (w0 * w2 - w1 * w3) / (w0 + w2 - w1 - w3)
            for a in range(4):
                b = (a + 1) & 3
                if (not flags[a]) and flags[b]:
                    if saddle < 0.0:
                        nxt[es[a]] = es[(a + 3) & 3]
                    else:
                        nxt[es[a]] = es[b]
    polys = []
    visited = [False] * 12
    for e0 in range(12):
        if nxt[e0] < 0 or visited[e0]:
            continue
        poly = []
        e = e0
        while not visited[e]:
            visited[e] = True
            poly.append(e)
            e = nxt[e]
        polys.append(tuple(poly))
    return polys


def _diagonal_interior_value(w8, p, q, want_max):
    """Extreme of the trilinear interpolant along the body diagonal p -> q."""
    a = w8[p]
    d3 = w8[q]
    b = w8[p ^ 1] + w8[p ^ 2] + w8[p ^ 4]
    c = w8[q ^ 1] + w8[q ^ 2] + w8[q ^ 4]
    # f(t) = a(1-t)^3 + b t(1-t)^2 + c t^2(1-t) + d3 t^3
    c0 = a
    c1 = b - 3.0 * a
    c2 = 3.0 * a - 2.0 * b + c
    c3 = -a + b - c + d3
    best = a if (a > d3) == want_max else d3
    qa = 3.0 * c3
    qb = 2.0 * c2
    qc = c1
    t1 = -1.0
    t2 = -1.0
    if qa == 0.0:
        if qb != 0.0:
            t1 = -qc / qb
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            r = math.sqrt(disc)
            t1 = (-qb + r) / (2.0 * qa)
            t2 = (-qb - r) / (2.0 * qa)
    for t in (t1, t2):
        if 0.0 < t < 1.0:
            val = c0 + t * (c1 + t * (c2 + t * c3))
            if (val > best) == want_max:
                best = val
    return best


def _edge_point(w8, e, spacing):
    ca, cb = EDGE_CORNERS[e]
    t = w8[ca] / (w8[ca] - w8[cb])
    x, y, z = _CORNER_XYZ[ca]
    pos = [x * spacing[0], y * spacing[1], z * spacing[2]]
    axis = EDGE_BASE[e][3]
    pos[axis] += t * spacing[axis]
    return pos


def _tunnel_band(w8, polys, p, q, spacing):
    """Six-triangle band joining the two corner loops of a diagonal cell.

    Returns None when the loop geometry does not interleave around the
    diagonal, in which case the caller keeps the separating caps (still
    watertight, only the in-cell topology differs).
    """
    if len(polys) != 2 or len(polys[0]) != 3 or len(polys[1]) != 3:
        return None
    loop_a, loop_b = polys
    if p not in EDGE_CORNERS[loop_a[0]]:
        loop_a, loop_b = loop_b, loop_a
    if any(p not in EDGE_CORNERS[e] for e in loop_a):
        return None
    if any(q not in EDGE_CORNERS[e] for e in loop_b):
        return None
    px, py, pz = _CORNER_XYZ[p]
    qx, qy, qz = _CORNER_XYZ[q]
    ux = (qx - px) * spacing[0]
    uy = (qy - py) * spacing[1]
    uz = (qz - pz) * spacing[2]
    un = math.sqrt(ux * ux + uy * uy + uz * uz)
    ux, uy, uz = ux / un, uy / un, uz / un
    # reference frame: u is a body diagonal, never parallel to the x axis
    r0y, r0z = uz, -uy
    rn = math.sqrt(r0y * r0y + r0z * r0z)
    r0y, r0z = r0y / rn, r0z / rn
    r1x = uy * r0z - uz * r0y
    r1y = -ux * r0z
    r1z = ux * r0y
    mx = 0.5 * (px + qx) * spacing[0]
    my = 0.5 * (py + qy) * spacing[1]
    mz = 0.5 * (pz + qz) * spacing[2]
    angle = {}
    for e in loop_a + loop_b:
        wx, wy, wz = _edge_point(w8, e, spacing)
        dx, dy, dz = wx - mx, wy - my, wz - mz
        angle[e] = math.atan2(
            dx * r1x + dy * r1y + dz * r1z, dy * r0y + dz * r0z
        )
    hexagon = sorted(angle, key=lambda e: (angle[e], e))
    in_a = [e in loop_a for e in hexagon]
    if any(in_a[i] == in_a[(i + 1) % 6] for i in range(6)):
        return None
    slot = {e: i for i, e in enumerate(hexagon)}
    tris = []
    for loop in (loop_a, loop_b):
        for i in range(3):
            a = loop[i]
            b = loop[(i + 1) % 3]
            sa, sb = slot[a], slot[b]
            if (sa + 2) % 6 == sb:
                mid = hexagon[(sa + 1) % 6]
            elif (sa - 2) % 6 == sb:
                mid = hexagon[(sa - 1) % 6]
            else:
                return None
            tris.append((a, b, mid))
    return tris


def _cell_triangles(w8, spacing):
    """Triangles of one cell as local edge index triples."""
    polys = _cell_polygons(w8)
    if not polys:
        return []
    mask = 0
    for c in range(8):
        if w8[c] < 0.0:
            mask |= 1 << c
    bits = mask.bit_count()
    if bits == 2 or bits == 6:
        want = mask if bits == 2 else mask ^ 255
        for p in range(8):
            if want == (1 << p) | (1 << (p ^ 7)):
                q = p ^ 7
                if bits == 2:
                    connected = _diagonal_interior_value(w8, p, q, True) < 0.0
                else:
                    connected = _diagonal_interior_value(w8, p, q, False) > 0.0
                if connected:
                    band = _tunnel_band(w8, polys, p, q, spacing)
                    if band is not None:
                        return band
                break
    tris = []
    for poly in polys:
        for i in range(1, len(poly) - 1):
            tris.append((poly[0], poly[i], poly[i + 1]))
    return tris


def marching_cells(w: np.ndarray, spacing) -> np.ndarray:
    """Extract isosurface triangles as global edge ids, cell by cell.

    w holds iso-relative corner values with zeros already nudged away.  The
    global id of the edge leaving voxel (x, y, z) along `axis` is
    ((x*ny + y)*nz + z)*3 + axis; both cells sharing an edge derive the
    same id, which is what stitches the sheet together across cells.
    """
    nx, ny, nz = w.shape
    spacing = tuple(float(s) for s in spacing)
    inside = w < 0.0
    occ = inside[:-1, :-1, :-1].astype(np.uint8)
    for dx, dy, dz in _CORNER_XYZ[1:]:
        occ += inside[dx : nx - 1 + dx, dy : ny - 1 + dy, dz : nz - 1 + dz]
    cells = np.argwhere((occ > 0) & (occ < 8))
    out = []
    for ix, iy, iz in cells:
        w8 = (
            w[ix, iy, iz], w[ix + 1, iy, iz], w[ix, iy + 1, iz], w[ix + 1, iy + 1, iz],
            w[ix, iy, iz + 1], w[ix + 1, iy, iz + 1], w[ix, iy + 1, iz + 1],
            w[ix + 1, iy + 1, iz + 1],
        )
        for tri in _cell_triangles(w8, spacing):
            ids = []
            for e in tri:
                bx, by, bz, axis = EDGE_BASE[e]
                ids.append((((ix + bx) * ny + (iy + by)) * nz + (iz + bz)) * 3 + axis)
            out.append(ids)
    if not out:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# fast sweeping eikonal updates

def _eikonal_update(v1, h1, v2, h2, v3, h3):
    """Godunov update from up to three upwind neighbor values."""
    if v2 < v1:
        v1, v2 = v2, v1
        h1, h2 = h2, h1
    if v3 < v2:
        v2, v3 = v3, v2
        h2, h3 = h3, h2
        if v2 < v1:
            v1, v2 = v2, v1
            h1, h2 = h2, h1
    if v1 == INF:
        return INF
    t = v1 + h1
    if t <= v2:
        return t
    a = 1.0 / (h1 * h1) + 1.0 / (h2 * h2)
    b = v1 / (h1 * h1) + v2 / (h2 * h2)
    c = (v1 * v1) / (h1 * h1) + (v2 * v2) / (h2 * h2) - 1.0
    disc = b * b - a * c
    if disc > 0.0:
        t = (b + math.sqrt(disc)) / a
    if t <= v3:
        return t
    a += 1.0 / (h3 * h3)
    b += v3 / (h3 * h3)
    c += (v3 * v3) / (h3 * h3)
    disc = b * b - a * c
    if disc > 0.0:
        t = (b + math.sqrt(disc)) / a
    return t


def _axis_stencil(u, side, i, j, k, axis, n, h):
    """Upwind value and effective step along one axis.

    Takes the smaller of the two neighbors; when the next voxel out on
    that side is causally ordered (no larger) and lies on the same side
    of the interface, a one-sided second-order difference replaces the
    first-order one, encoded as a virtual value at step 2h/3.
    """
    if axis == 0:
        lo = u[i - 1, j, k] if i > 0 else INF
        hi = u[i + 1, j, k] if i < n - 1 else INF
        pos = i
    elif axis == 1:
        lo = u[i, j - 1, k] if j > 0 else INF
        hi = u[i, j + 1, k] if j < n - 1 else INF
        pos = j
    else:
        lo = u[i, j, k - 1] if k > 0 else INF
        hi = u[i, j, k + 1] if k < n - 1 else INF
        pos = k
    if lo <= hi:
        u1, step, room = lo, -1, pos > 1
    else:
        u1, step, room = hi, 1, pos < n - 2
    if u1 == INF or not room:
        return u1, h
    if axis == 0:
        u2 = u[i + 2 * step, j, k]
        same = side is None or side[i + 2 * step, j, k] == side[i, j, k]
    elif axis == 1:
        u2 = u[i, j + 2 * step, k]
        same = side is None or side[i, j + 2 * step, k] == side[i, j, k]
    else:
        u2 = u[i, j, k + 2 * step]
        same = side is None or side[i, j, k + 2 * step] == side[i, j, k]
    if same and u2 <= u1:
        return (4.0 * u1 - u2) / 3.0, 2.0 * h / 3.0
    return u1, h


def fast_sweep(
    u: np.ndarray,
    frozen: np.ndarray,
    spacing,
    side: np.ndarray | None = None,
    tol: float = 1e-9,
    max_rounds: int = 12,
) -> int:
    """Solve |grad u| = 1 in place by Gauss-Seidel sweeps over 8 orderings.

    u starts at +inf away from frozen seed voxels.  side, when given,
    marks which side of the interface each voxel is on (any two distinct
    codes); second-order stencils never reach across it.  Returns the
    number of full 8-sweep rounds executed; convergence is declared once
    the largest single-voxel update in a round drops below tol.
    """
    nx, ny, nz = u.shape
    hx, hy, hz = (float(s) for s in spacing)
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        round_change = 0.0
        for sweep in range(8):
            xs = range(nx) if not sweep & 1 else range(nx - 1, -1, -1)
            ys = range(ny) if not sweep & 2 else range(ny - 1, -1, -1)
            zs = range(nz) if not sweep & 4 else range(nz - 1, -1, -1)
            for i in xs:
                for j in ys:
                    for k in zs:
                        if frozen[i, j, k]:
                            continue
                        vx, ex = _axis_stencil(u, side, i, j, k, 0, nx, hx)
                        vy, ey = _axis_stencil(u, side, i, j, k, 1, ny, hy)
                        vz, ez = _axis_stencil(u, side, i, j, k, 2, nz, hz)
                        t = _eikonal_update(vx, ex, vy, ey, vz, ez)
                        old = u[i, j, k]
                        if t < old:
                            u[i, j, k] = t
                            change = old - t
                            if change > round_change:
                                round_change = change
        if round_change < tol:
            break
    return rounds
