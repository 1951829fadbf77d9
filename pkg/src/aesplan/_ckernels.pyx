# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``aesplan._pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, cos, sin, fabs, INFINITY

cnp.import_array()

BACKEND = "cython"


cdef inline Py_ssize_t _clampi(Py_ssize_t v, Py_ssize_t lo, Py_ssize_t hi) nogil:
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


cdef class NeighborIndex:
    """Exact nearest-neighbour lookup on a uniform grid of buckets.

    Points are counting-sorted into cells; a query scans Chebyshev shells of
    cells around its (clamped) cell until no unvisited cell can hold a closer
    point. Ties resolve to the lowest point index.
    """

    cdef readonly object points
    cdef readonly double cell_size
    cdef const double[:, ::1] _pts
    cdef double _origin[3]
    cdef Py_ssize_t _dims[3]
    cdef Py_ssize_t[::1] _start
    cdef Py_ssize_t[::1] _order

    def __init__(self, points, cell_size=None):
        pts = np.ascontiguousarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise ValueError("points must be a non-empty (N, 3) array")
        self.points = pts
        self._pts = pts
        n = len(pts)
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        ext = np.maximum(hi - lo, 1e-9)
        if cell_size is None:
            # twice the mean spacing of a surface-like sampling of the bbox
            area = 2.0 * (ext[0] * ext[1] + ext[1] * ext[2] + ext[0] * ext[2])
            cell_size = 2.0 * sqrt(area / n)
        cell = float(cell_size)
        if cell <= 0:
            raise ValueError("cell_size must be positive")
        # cap the dense grid at ~8 cells per point
        while np.prod(np.floor(ext / cell) + 1) > 8 * n + 64:
            cell *= 1.5
        self.cell_size = cell
        dims = (np.floor(ext / cell) + 1).astype(np.int64)
        for a in range(3):
            self._origin[a] = lo[a]
            self._dims[a] = dims[a]
        cij = np.minimum(np.floor((pts - lo) / cell).astype(np.int64), dims - 1)
        lin = (cij[:, 0] * dims[1] + cij[:, 1]) * dims[2] + cij[:, 2]
        ncell = int(dims[0] * dims[1] * dims[2])
        counts = np.bincount(lin, minlength=ncell)
        start = np.zeros(ncell + 1, dtype=np.intp)
        np.cumsum(counts, out=start[1:])
        self._start = start
        self._order = np.argsort(lin, kind="stable").astype(np.intp)

    def query(self, queries):
        q = np.ascontiguousarray(queries, dtype=np.float64)
        cdef const double[:, ::1] qv = q
        cdef Py_ssize_t n = q.shape[0]
        idx = np.empty(n, dtype=np.int64)
        dist2 = np.empty(n, dtype=np.float64)
        cdef long long[::1] iv = idx
        cdef double[::1] dv = dist2
        cdef Py_ssize_t i
        with nogil:
            for i in range(n):
                self._query_one(qv[i, 0], qv[i, 1], qv[i, 2], &iv[i], &dv[i])
        return idx, dist2

    cdef void _query_one(self, double x, double y, double z, long long* out_i, double* out_d) nogil:
        cdef double cell = self.cell_size
        cdef Py_ssize_t d0 = self._dims[0], d1 = self._dims[1], d2 = self._dims[2]
        cdef Py_ssize_t c0 = _clampi(<Py_ssize_t>floor((x - self._origin[0]) / cell), 0, d0 - 1)
        cdef Py_ssize_t c1 = _clampi(<Py_ssize_t>floor((y - self._origin[1]) / cell), 0, d1 - 1)
        cdef Py_ssize_t c2 = _clampi(<Py_ssize_t>floor((z - self._origin[2]) / cell), 0, d2 - 1)
        cdef double best = INFINITY
        cdef long long best_i = -1
        cdef Py_ssize_t r = 0, a, b, c, lo0, hi0, lo1, hi1, lo2, hi2, k, p, lin
        cdef double dx, dy, dz, dd, bound
        cdef bint shell
        while True:
            lo0 = c0 - r; hi0 = c0 + r
            lo1 = c1 - r; hi1 = c1 + r
            lo2 = c2 - r; hi2 = c2 + r
            for a in range(_clampi(lo0, 0, d0 - 1), _clampi(hi0, 0, d0 - 1) + 1):
                for b in range(_clampi(lo1, 0, d1 - 1), _clampi(hi1, 0, d1 - 1) + 1):
                    for c in range(_clampi(lo2, 0, d2 - 1), _clampi(hi2, 0, d2 - 1) + 1):
                        shell = (a == lo0 or a == hi0 or b == lo1 or b == hi1
                                 or c == lo2 or c == hi2)
                        if not shell:
                            continue
                        lin = (a * d1 + b) * d2 + c
                        for k in range(self._start[lin], self._start[lin + 1]):
                            p = self._order[k]
                            dx = x - self._pts[p, 0]
                            dy = y - self._pts[p, 1]
                            dz = z - self._pts[p, 2]
                            dd = dx * dx + dy * dy + dz * dz
                            if dd < best or (dd == best and p < best_i):
                                best = dd
                                best_i = p
            bound = r * cell
            if best_i >= 0 and best <= bound * bound:
                break
            if lo0 <= 0 and lo1 <= 0 and lo2 <= 0 and hi0 >= d0 - 1 and hi1 >= d1 - 1 and hi2 >= d2 - 1:
                break
            r += 1
        out_i[0] = best_i
        out_d[0] = best


def arm_points(q, double base_height, double boom, double stick, double bucket):
    cdef const double[:, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t n = qv.shape[0], i
    out = np.empty((n, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef double a1, a2, a3, r1, z1, r2, z2, r3, z3, c, s
    with nogil:
        for i in range(n):
            a1 = qv[i, 1]
            a2 = a1 + qv[i, 2]
            a3 = a2 + qv[i, 3]
            r1 = boom * cos(a1)
            z1 = base_height + boom * sin(a1)
            r2 = r1 + stick * cos(a2)
            z2 = z1 + stick * sin(a2)
            r3 = r2 + bucket * cos(a3)
            z3 = z2 + bucket * sin(a3)
            c = cos(qv[i, 0])
            s = sin(qv[i, 0])
            ov[i, 0, 0] = r1 * c; ov[i, 0, 1] = r1 * s; ov[i, 0, 2] = z1
            ov[i, 1, 0] = r2 * c; ov[i, 1, 1] = r2 * s; ov[i, 1, 2] = z2
            ov[i, 2, 0] = r3 * c; ov[i, 2, 1] = r3 * s; ov[i, 2, 2] = z3
    return out


cdef inline double _box_sd(double px, double py, double pz, const double[:, :, ::1] rot,
                           const double[:, ::1] cen, const double[:, ::1] half, Py_ssize_t bi) nogil:
    cdef double vx = px - cen[bi, 0], vy = py - cen[bi, 1], vz = pz - cen[bi, 2]
    cdef double l[3]
    cdef double out2 = 0.0, inside = -INFINITY, d
    cdef int a
    for a in range(3):
        l[a] = rot[bi, 0, a] * vx + rot[bi, 1, a] * vy + rot[bi, 2, a] * vz
        d = fabs(l[a]) - half[bi, a]
        if d > 0:
            out2 += d * d
        if d > inside:
            inside = d
    if inside > 0:
        inside = 0.0
    return sqrt(out2) + inside


def box_signed_distance(points, rotations, centers, half_extents):
    p = np.asarray(points, dtype=np.float64)
    shape = p.shape[:-1]
    cdef const double[:, ::1] pv = np.ascontiguousarray(p.reshape(-1, 3))
    cdef const double[:, :, ::1] rv = np.ascontiguousarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    cdef const double[:, ::1] cv = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] hv = np.ascontiguousarray(half_extents, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t n = pv.shape[0], nb = cv.shape[0], i, b
    out = np.empty((n, nb), dtype=np.float64)
    cdef double[:, ::1] ov = out
    with nogil:
        for i in range(n):
            for b in range(nb):
                ov[i, b] = _box_sd(pv[i, 0], pv[i, 1], pv[i, 2], rv, cv, hv, b)
    return out.reshape(shape + (nb,))


def box_penalty(points, rotations, centers, half_extents, double clearance):
    p = np.ascontiguousarray(points, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], m = p.shape[1]
    if len(centers) == 0:
        return np.zeros(n), np.full(n, np.inf)
    cdef const double[:, :, ::1] pv = p
    cdef const double[:, :, ::1] rv = np.ascontiguousarray(rotations, dtype=np.float64).reshape(-1, 3, 3)
    cdef const double[:, ::1] cv = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, 3)
    cdef const double[:, ::1] hv = np.ascontiguousarray(half_extents, dtype=np.float64).reshape(-1, 3)
    cdef Py_ssize_t nb = cv.shape[0], i, j, b
    cost = np.zeros(n, dtype=np.float64)
    mind = np.full(n, np.inf, dtype=np.float64)
    cdef double[::1] co = cost
    cdef double[::1] mo = mind
    cdef double sd, pen
    with nogil:
        for i in range(n):
            for j in range(m):
                for b in range(nb):
                    sd = _box_sd(pv[i, j, 0], pv[i, j, 1], pv[i, j, 2], rv, cv, hv, b)
                    pen = clearance - sd
                    if pen > 0:
                        co[i] += pen * pen
                    if sd < mo[i]:
                        mo[i] = sd
    return cost, mind


def settle(double[:, ::1] elev, const double[:, ::1] floor_, fixed, double max_dh, int max_iters):
    cdef cnp.uint8_t[:, ::1] fx = np.ascontiguousarray(fixed, dtype=np.uint8)
    cdef Py_ssize_t ny = elev.shape[0], nx = elev.shape[1], i, j, k, m, t
    cdef int it, sweeps = 0
    cdef bint moved
    cdef double h0, h1, dh, amount
    with nogil:
        for it in range(max_iters):
            moved = False
            for i in range(ny):
                for j in range(nx):
                    if fx[i, j]:
                        continue
                    for t in range(2):
                        if t == 0:
                            k = i; m = j + 1
                        else:
                            k = i + 1; m = j
                        if k >= ny or m >= nx or fx[k, m]:
                            continue
                        h0 = elev[i, j]
                        h1 = elev[k, m]
                        dh = h0 - h1
                        if dh > max_dh + 1e-12:
                            amount = 0.5 * (dh - max_dh)
                            if h0 - floor_[i, j] < amount:
                                amount = h0 - floor_[i, j]
                            if amount > 0.0:
                                elev[i, j] = h0 - amount
                                elev[k, m] = h1 + amount
                                moved = True
                        elif -dh > max_dh + 1e-12:
                            amount = 0.5 * (-dh - max_dh)
                            if h1 - floor_[k, m] < amount:
                                amount = h1 - floor_[k, m]
                            if amount > 0.0:
                                elev[k, m] = h1 - amount
                                elev[i, j] = h0 + amount
                                moved = True
            if not moved:
                break
            sweeps += 1
    return sweeps
