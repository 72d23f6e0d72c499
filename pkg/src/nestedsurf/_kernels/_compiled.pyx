# distutils: language = c++
# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled grid kernels.

Port of pyfallback.py with identical arithmetic, operation for operation:
both backends must produce byte-identical arrays.  Any change here needs the
same change there.
"""

from libc.math cimport INFINITY, atan2, sqrt
from libc.stdlib cimport free, malloc
from libcpp.vector cimport vector

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef int EDGE_BASE_C[12][4]
cdef int EDGE_CORNERS_C[12][2]
cdef int FACE_CORNERS_C[6][4]
cdef int FACE_EDGES_C[6][4]
cdef int CORNER_XYZ_C[8][3]

_EDGE_BASE = (
    (0, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 1, 1, 0),
    (0, 0, 0, 1), (1, 0, 0, 1), (0, 0, 1, 1), (1, 0, 1, 1),
    (0, 0, 0, 2), (1, 0, 0, 2), (0, 1, 0, 2), (1, 1, 0, 2),
)
_EDGE_CORNERS = (
    (0, 1), (2, 3), (4, 5), (6, 7),
    (0, 2), (1, 3), (4, 6), (5, 7),
    (0, 4), (1, 5), (2, 6), (3, 7),
)
_FACE_CORNERS = (
    (0, 4, 6, 2), (1, 3, 7, 5), (0, 1, 5, 4),
    (2, 6, 7, 3), (0, 2, 3, 1), (4, 5, 7, 6),
)
_FACE_EDGES = (
    (8, 6, 10, 4), (5, 11, 7, 9), (0, 9, 2, 8),
    (10, 3, 11, 1), (4, 1, 5, 0), (2, 7, 3, 6),
)

for _i in range(12):
    for _j in range(4):
        EDGE_BASE_C[_i][_j] = _EDGE_BASE[_i][_j]
    EDGE_CORNERS_C[_i][0] = _EDGE_CORNERS[_i][0]
    EDGE_CORNERS_C[_i][1] = _EDGE_CORNERS[_i][1]
for _i in range(6):
    for _j in range(4):
        FACE_CORNERS_C[_i][_j] = _FACE_CORNERS[_i][_j]
        FACE_EDGES_C[_i][_j] = _FACE_EDGES[_i][_j]
for _i in range(8):
    CORNER_XYZ_C[_i][0] = _i & 1
    CORNER_XYZ_C[_i][1] = (_i >> 1) & 1
    CORNER_XYZ_C[_i][2] = (_i >> 2) & 1


# ---------------------------------------------------------------------------
# exact squared Euclidean distance transform

cdef void _edt_line(double* f, Py_ssize_t n, double w2,
                    double* d, Py_ssize_t* v, double* z) noexcept nogil:
    cdef Py_ssize_t k = -1
    cdef Py_ssize_t q, p, dq
    cdef double s = 0.0
    cdef double fq
    for q in range(n):
        if f[q] == INFINITY:
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
        z[k] = -INFINITY if k == 0 else s
        z[k + 1] = INFINITY
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        dq = q - p
        d[q] = f[p] + w2 * dq * dq


def edt_squared(double[:, :, ::1] f, spacing):
    """In-place exact squared EDT; see pyfallback.edt_squared."""
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], nz = f.shape[2]
    cdef double sx = spacing[0], sy = spacing[1], sz = spacing[2]
    cdef Py_ssize_t nmax = max(nx, max(ny, nz))
    cdef double* buf = <double*> malloc(nmax * sizeof(double))
    cdef double* d = <double*> malloc(nmax * sizeof(double))
    cdef Py_ssize_t* v = <Py_ssize_t*> malloc(nmax * sizeof(Py_ssize_t))
    cdef double* z = <double*> malloc((nmax + 1) * sizeof(double))
    if buf == NULL or d == NULL or v == NULL or z == NULL:
        free(buf); free(d); free(v); free(z)
        raise MemoryError()
    cdef Py_ssize_t i, j, k, q
    cdef double w2
    cdef bint any_finite
    try:
        with nogil:
            if nx > 1:
                w2 = sx * sx
                for j in range(ny):
                    for k in range(nz):
                        any_finite = False
                        for q in range(nx):
                            buf[q] = f[q, j, k]
                            if buf[q] != INFINITY:
                                any_finite = True
                        if not any_finite:
                            continue
                        _edt_line(buf, nx, w2, d, v, z)
                        for q in range(nx):
                            f[q, j, k] = d[q]
            if ny > 1:
                w2 = sy * sy
                for i in range(nx):
                    for k in range(nz):
                        any_finite = False
                        for q in range(ny):
                            buf[q] = f[i, q, k]
                            if buf[q] != INFINITY:
                                any_finite = True
                        if not any_finite:
                            continue
                        _edt_line(buf, ny, w2, d, v, z)
                        for q in range(ny):
                            f[i, q, k] = d[q]
            if nz > 1:
                w2 = sz * sz
                for i in range(nx):
                    for j in range(ny):
                        any_finite = False
                        for q in range(nz):
                            buf[q] = f[i, j, q]
                            if buf[q] != INFINITY:
                                any_finite = True
                        if not any_finite:
                            continue
                        _edt_line(buf, nz, w2, d, v, z)
                        for q in range(nz):
                            f[i, j, q] = d[q]
    finally:
        free(buf); free(d); free(v); free(z)
    return np.asarray(f)


# ---------------------------------------------------------------------------
# isosurface cell extraction

cdef double _diagonal_interior_value(double* w8, int p, int q, bint want_max) noexcept nogil:
    cdef double a = w8[p]
    cdef double d3 = w8[q]
    cdef double b = w8[p ^ 1] + w8[p ^ 2] + w8[p ^ 4]
    cdef double c = w8[q ^ 1] + w8[q ^ 2] + w8[q ^ 4]
    cdef double c0 = a
    cdef double c1 = b - 3.0 * a
    cdef double c2 = 3.0 * a - 2.0 * b + c
    cdef double c3 = -a + b - c + d3
    cdef double best
    if (a > d3) == want_max:
        best = a
    else:
        best = d3
    cdef double qa = 3.0 * c3
    cdef double qb = 2.0 * c2
    cdef double qc = c1
    cdef double t1 = -1.0
    cdef double t2 = -1.0
    cdef double disc, r, t, val
    if qa == 0.0:
        if qb != 0.0:
            t1 = -qc / qb
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            r = sqrt(disc)
            t1 = (-qb + r) / (2.0 * qa)
            t2 = (-qb - r) / (2.0 * qa)
    cdef int m
    for m in range(2):
        t = t1 if m == 0 else t2
        if 0.0 < t < 1.0:
            val = c0 + t * (c1 + t * (c2 + t * c3))
            if (val > best) == want_max:
                best = val
    return best


cdef void _edge_point(double* w8, int e, double sx, double sy, double sz,
                      double* out) noexcept nogil:
    cdef int ca = EDGE_CORNERS_C[e][0]
    cdef int cb = EDGE_CORNERS_C[e][1]
    cdef double t = w8[ca] / (w8[ca] - w8[cb])
    cdef int axis = EDGE_BASE_C[e][3]
    out[0] = CORNER_XYZ_C[ca][0] * sx
    out[1] = CORNER_XYZ_C[ca][1] * sy
    out[2] = CORNER_XYZ_C[ca][2] * sz
    if axis == 0:
        out[0] += t * sx
    elif axis == 1:
        out[1] += t * sy
    else:
        out[2] += t * sz


cdef int _tunnel_band(double* w8, int* polyedges, int* polylen, int npoly,
                      int p, int q, double sx, double sy, double sz,
                      int* tris) noexcept nogil:
    """Fill tris with the six band triangles; return 6, or 0 to keep caps."""
    if npoly != 2 or polylen[0] != 3 or polylen[1] != 3:
        return 0
    cdef int loop_a[3]
    cdef int loop_b[3]
    cdef int i, e
    cdef bint swap = not (EDGE_CORNERS_C[polyedges[0]][0] == p or
                          EDGE_CORNERS_C[polyedges[0]][1] == p)
    for i in range(3):
        if swap:
            loop_a[i] = polyedges[3 + i]
            loop_b[i] = polyedges[i]
        else:
            loop_a[i] = polyedges[i]
            loop_b[i] = polyedges[3 + i]
    for i in range(3):
        e = loop_a[i]
        if EDGE_CORNERS_C[e][0] != p and EDGE_CORNERS_C[e][1] != p:
            return 0
        e = loop_b[i]
        if EDGE_CORNERS_C[e][0] != q and EDGE_CORNERS_C[e][1] != q:
            return 0
    cdef double ux = (CORNER_XYZ_C[q][0] - CORNER_XYZ_C[p][0]) * sx
    cdef double uy = (CORNER_XYZ_C[q][1] - CORNER_XYZ_C[p][1]) * sy
    cdef double uz = (CORNER_XYZ_C[q][2] - CORNER_XYZ_C[p][2]) * sz
    cdef double un = sqrt(ux * ux + uy * uy + uz * uz)
    ux /= un
    uy /= un
    uz /= un
    cdef double r0y = uz
    cdef double r0z = -uy
    cdef double rn = sqrt(r0y * r0y + r0z * r0z)
    r0y /= rn
    r0z /= rn
    cdef double r1x = uy * r0z - uz * r0y
    cdef double r1y = -ux * r0z
    cdef double r1z = ux * r0y
    cdef double mx = 0.5 * (CORNER_XYZ_C[p][0] + CORNER_XYZ_C[q][0]) * sx
    cdef double my = 0.5 * (CORNER_XYZ_C[p][1] + CORNER_XYZ_C[q][1]) * sy
    cdef double mz = 0.5 * (CORNER_XYZ_C[p][2] + CORNER_XYZ_C[q][2]) * sz
    cdef int edges6[6]
    cdef double ang[6]
    cdef double pt[3]
    cdef double dx, dy, dz
    for i in range(3):
        edges6[i] = loop_a[i]
        edges6[3 + i] = loop_b[i]
    for i in range(6):
        _edge_point(w8, edges6[i], sx, sy, sz, pt)
        dx = pt[0] - mx
        dy = pt[1] - my
        dz = pt[2] - mz
        ang[i] = atan2(dx * r1x + dy * r1y + dz * r1z, dy * r0y + dz * r0z)
    # insertion sort of the six cut edges by (angle, id)
    cdef int hexagon[6]
    cdef int j, cur
    cdef double cura
    for i in range(6):
        hexagon[i] = edges6[i]
    for i in range(1, 6):
        cur = hexagon[i]
        cura = ang[i]
        # carry the angle with its edge
        j = i - 1
        while j >= 0:
            e = hexagon[j]
            if ang[j] > cura or (ang[j] == cura and e > cur):
                hexagon[j + 1] = hexagon[j]
                ang[j + 1] = ang[j]
                j -= 1
            else:
                break
        hexagon[j + 1] = cur
        ang[j + 1] = cura
    cdef bint in_a[6]
    for i in range(6):
        in_a[i] = (hexagon[i] == loop_a[0] or hexagon[i] == loop_a[1]
                   or hexagon[i] == loop_a[2])
    for i in range(6):
        if in_a[i] == in_a[(i + 1) % 6]:
            return 0
    cdef int slot_of[12]
    for i in range(6):
        slot_of[hexagon[i]] = i
    cdef int n = 0
    cdef int a, b, sa, sb, mid, li
    for li in range(2):
        for i in range(3):
            if li == 0:
                a = loop_a[i]
                b = loop_a[(i + 1) % 3]
            else:
                a = loop_b[i]
                b = loop_b[(i + 1) % 3]
            sa = slot_of[a]
            sb = slot_of[b]
            if (sa + 2) % 6 == sb:
                mid = hexagon[(sa + 1) % 6]
            elif (sa + 4) % 6 == sb:
                mid = hexagon[(sa + 5) % 6]
            else:
                return 0
            tris[3 * n] = a
            tris[3 * n + 1] = b
            tris[3 * n + 2] = mid
            n += 1
    return n


cdef int _cell_triangles(double* w8, double sx, double sy, double sz,
                         int* tris) noexcept nogil:
    """Triangles of one cell as local edge triples; returns the count."""
    cdef bint inside[8]
    cdef int nxt[12]
    cdef int c, f, a, b, e, e0, start, end, ncut
    cdef double w0, w1, w2, w3, saddle
    for c in range(8):
        inside[c] = w8[c] < 0.0
    for e in range(12):
        nxt[e] = -1
    cdef bint flags[4]
    cdef int* cs
    cdef int* es
    for f in range(6):
        cs = FACE_CORNERS_C[f]
        es = FACE_EDGES_C[f]
        for a in range(4):
            flags[a] = inside[cs[a]]
        ncut = 0
        for a in range(4):
            if flags[a] != flags[(a + 1) & 3]:
                ncut += 1
        if ncut == 0:
            continue
        if ncut == 2:
            start = 0
            end = 0
            for a in range(4):
                b = (a + 1) & 3
                if flags[a] != flags[b]:
                    if flags[b]:
                        start = a
                    else:
                        end = a
            nxt[es[start]] = es[end]
        else:
            w0 = w8[cs[0]]
            w1 = w8[cs[1]]
            w2 = w8[cs[2]]
            w3 = w8[cs[3]]
            saddle = (w0 * w2 - w1 * w3) / (w0 + w2 - w1 - w3)
            for a in range(4):
                b = (a + 1) & 3
                if (not flags[a]) and flags[b]:
                    if saddle < 0.0:
                        nxt[es[a]] = es[(a + 3) & 3]
                    else:
                        nxt[es[a]] = es[b]
    cdef int polyedges[12]
    cdef int polylen[6]
    cdef int npoly = 0
    cdef int total = 0
    cdef bint visited[12]
    for e in range(12):
        visited[e] = False
    cdef int plen
    for e0 in range(12):
        if nxt[e0] < 0 or visited[e0]:
            continue
        plen = 0
        e = e0
        while not visited[e]:
            visited[e] = True
            polyedges[total + plen] = e
            plen += 1
            e = nxt[e]
        polylen[npoly] = plen
        npoly += 1
        total += plen
    if npoly == 0:
        return 0
    cdef int mask = 0
    cdef int bits = 0
    for c in range(8):
        if inside[c]:
            mask |= 1 << c
            bits += 1
    cdef int want, p, q, n
    cdef bint connected
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
                    n = _tunnel_band(w8, polyedges, polylen, npoly, p, q,
                                     sx, sy, sz, tris)
                    if n > 0:
                        return n
                break
    cdef int ntri = 0
    cdef int base = 0
    cdef int i, k
    for k in range(npoly):
        plen = polylen[k]
        for i in range(1, plen - 1):
            tris[3 * ntri] = polyedges[base]
            tris[3 * ntri + 1] = polyedges[base + i]
            tris[3 * ntri + 2] = polyedges[base + i + 1]
            ntri += 1
        base += plen
    return ntri


def marching_cells(const double[:, :, ::1] w, spacing):
    """Isosurface triangles as global edge id triples; see pyfallback."""
    cdef Py_ssize_t nx = w.shape[0], ny = w.shape[1], nz = w.shape[2]
    cdef double sx = spacing[0], sy = spacing[1], sz = spacing[2]
    cdef vector[long long] out
    cdef double w8[8]
    cdef int tris[36]
    cdef Py_ssize_t ix, iy, iz
    cdef int c, n, t, m, e
    cdef int neg
    cdef long long gid
    with nogil:
        for ix in range(nx - 1):
            for iy in range(ny - 1):
                for iz in range(nz - 1):
                    w8[0] = w[ix, iy, iz]
                    w8[1] = w[ix + 1, iy, iz]
                    w8[2] = w[ix, iy + 1, iz]
                    w8[3] = w[ix + 1, iy + 1, iz]
                    w8[4] = w[ix, iy, iz + 1]
                    w8[5] = w[ix + 1, iy, iz + 1]
                    w8[6] = w[ix, iy + 1, iz + 1]
                    w8[7] = w[ix + 1, iy + 1, iz + 1]
                    neg = 0
                    for c in range(8):
                        if w8[c] < 0.0:
                            neg += 1
                    if neg == 0 or neg == 8:
                        continue
                    n = _cell_triangles(w8, sx, sy, sz, tris)
                    for t in range(n):
                        for m in range(3):
                            e = tris[3 * t + m]
                            gid = (((ix + EDGE_BASE_C[e][0]) * ny
                                    + (iy + EDGE_BASE_C[e][1])) * nz
                                   + (iz + EDGE_BASE_C[e][2])) * 3 + EDGE_BASE_C[e][3]
                            out.push_back(gid)
    cdef Py_ssize_t ntri = out.size() // 3
    result = np.empty((ntri, 3), dtype=np.int64)
    cdef long long[:, ::1] rv = result
    cdef Py_ssize_t idx
    for idx in range(ntri):
        rv[idx, 0] = out[3 * idx]
        rv[idx, 1] = out[3 * idx + 1]
        rv[idx, 2] = out[3 * idx + 2]
    return result


# ---------------------------------------------------------------------------
# fast sweeping eikonal updates

cdef double _eikonal_update(double v1, double h1, double v2, double h2,
                            double v3, double h3) noexcept nogil:
    cdef double tmp
    if v2 < v1:
        tmp = v1; v1 = v2; v2 = tmp
        tmp = h1; h1 = h2; h2 = tmp
    if v3 < v2:
        tmp = v2; v2 = v3; v3 = tmp
        tmp = h2; h2 = h3; h3 = tmp
        if v2 < v1:
            tmp = v1; v1 = v2; v2 = tmp
            tmp = h1; h1 = h2; h2 = tmp
    if v1 == INFINITY:
        return INFINITY
    cdef double t = v1 + h1
    if t <= v2:
        return t
    cdef double a = 1.0 / (h1 * h1) + 1.0 / (h2 * h2)
    cdef double b = v1 / (h1 * h1) + v2 / (h2 * h2)
    cdef double c = (v1 * v1) / (h1 * h1) + (v2 * v2) / (h2 * h2) - 1.0
    cdef double disc = b * b - a * c
    if disc > 0.0:
        t = (b + sqrt(disc)) / a
    if t <= v3:
        return t
    a += 1.0 / (h3 * h3)
    b += v3 / (h3 * h3)
    c += (v3 * v3) / (h3 * h3)
    disc = b * b - a * c
    if disc > 0.0:
        t = (b + sqrt(disc)) / a
    return t


cdef inline double _axis_stencil(double[:, :, ::1] u,
                                 const unsigned char[:, :, ::1] side, bint has_side,
                                 Py_ssize_t i, Py_ssize_t j, Py_ssize_t k,
                                 int axis, Py_ssize_t n, double h,
                                 double* eff) noexcept nogil:
    cdef double lo, hi, u1, u2
    cdef Py_ssize_t pos
    cdef int step
    cdef bint room, same
    if axis == 0:
        lo = u[i - 1, j, k] if i > 0 else INFINITY
        hi = u[i + 1, j, k] if i < n - 1 else INFINITY
        pos = i
    elif axis == 1:
        lo = u[i, j - 1, k] if j > 0 else INFINITY
        hi = u[i, j + 1, k] if j < n - 1 else INFINITY
        pos = j
    else:
        lo = u[i, j, k - 1] if k > 0 else INFINITY
        hi = u[i, j, k + 1] if k < n - 1 else INFINITY
        pos = k
    if lo <= hi:
        u1 = lo; step = -1; room = pos > 1
    else:
        u1 = hi; step = 1; room = pos < n - 2
    if u1 == INFINITY or not room:
        eff[0] = h
        return u1
    if axis == 0:
        u2 = u[i + 2 * step, j, k]
        same = (not has_side) or side[i + 2 * step, j, k] == side[i, j, k]
    elif axis == 1:
        u2 = u[i, j + 2 * step, k]
        same = (not has_side) or side[i, j + 2 * step, k] == side[i, j, k]
    else:
        u2 = u[i, j, k + 2 * step]
        same = (not has_side) or side[i, j, k + 2 * step] == side[i, j, k]
    if same and u2 <= u1:
        eff[0] = 2.0 * h / 3.0
        return (4.0 * u1 - u2) / 3.0
    eff[0] = h
    return u1


def fast_sweep(double[:, :, ::1] u, const unsigned char[:, :, ::1] frozen, spacing,
               side=None, double tol=1e-9, int max_rounds=12):
    """Gauss-Seidel eikonal sweeps in place; see pyfallback.fast_sweep."""
    cdef Py_ssize_t nx = u.shape[0], ny = u.shape[1], nz = u.shape[2]
    cdef double hx = spacing[0], hy = spacing[1], hz = spacing[2]
    cdef int rounds = 0, sweep
    cdef Py_ssize_t i, j, k
    cdef Py_ssize_t i0, i1, istep, j0, j1, jstep, k0, k1, kstep
    cdef double round_change, vx, vy, vz, ex, ey, ez, t, old, change
    cdef bint has_side = side is not None
    cdef const unsigned char[:, :, ::1] side_mv = side if has_side else frozen
    with nogil:
        while rounds < max_rounds:
            rounds += 1
            round_change = 0.0
            for sweep in range(8):
                if sweep & 1:
                    i0 = nx - 1; i1 = -1; istep = -1
                else:
                    i0 = 0; i1 = nx; istep = 1
                if sweep & 2:
                    j0 = ny - 1; j1 = -1; jstep = -1
                else:
                    j0 = 0; j1 = ny; jstep = 1
                if sweep & 4:
                    k0 = nz - 1; k1 = -1; kstep = -1
                else:
                    k0 = 0; k1 = nz; kstep = 1
                i = i0
                while i != i1:
                    j = j0
                    while j != j1:
                        k = k0
                        while k != k1:
                            if frozen[i, j, k]:
                                k += kstep
                                continue
                            vx = _axis_stencil(u, side_mv, has_side, i, j, k, 0, nx, hx, &ex)
                            vy = _axis_stencil(u, side_mv, has_side, i, j, k, 1, ny, hy, &ey)
                            vz = _axis_stencil(u, side_mv, has_side, i, j, k, 2, nz, hz, &ez)
                            t = _eikonal_update(vx, ex, vy, ey, vz, ez)
                            old = u[i, j, k]
                            if t < old:
                                u[i, j, k] = t
                                change = old - t
                                if change > round_change:
                                    round_change = change
                            k += kstep
                        j += jstep
                    i += istep
            if round_change < tol:
                break
    return rounds
