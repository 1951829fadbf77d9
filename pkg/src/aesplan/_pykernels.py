"""Pure numpy/Python kernels.

Reference implementations of the hot loops. ``_ckernels`` provides the same
functions compiled with Cython; ``aesplan.kernels`` picks one at import.
Both must return identical results (up to floating-point summation order).
"""

import numpy as np

BACKEND = "python"

# Queries are processed in blocks to bound the brute-force distance matrix.
_BLOCK = 512


class NeighborIndex:
    """Exact nearest-neighbour lookup into a fixed point set.

    This fallback does a blocked brute-force scan. Ties resolve to the lowest
    point index, matching the compiled grid search.
    """

    def __init__(self, points, cell_size=None):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or len(self.points) == 0:
            raise ValueError("points must be a non-empty (N, 3) array")
        self.cell_size = cell_size

    def query(self, queries):
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        n = len(queries)
        idx = np.empty(n, dtype=np.int64)
        dist2 = np.empty(n, dtype=np.float64)
        pts = self.points
        for start in range(0, n, _BLOCK):
            q = queries[start:start + _BLOCK]
            dx = q[:, None, 0] - pts[None, :, 0]
            dy = q[:, None, 1] - pts[None, :, 1]
            dz = q[:, None, 2] - pts[None, :, 2]
            d2 = dx * dx + dy * dy + dz * dz
            best = np.argmin(d2, axis=1)
            idx[start:start + _BLOCK] = best
            dist2[start:start + _BLOCK] = d2[np.arange(len(q)), best]
        return idx, dist2


def arm_points(q, base_height, boom, stick, bucket):
    """Boom tip, stick tip and bucket tip for each config row of ``q``.

    ``q`` is (N, 4) ordered swing, boom, stick, bucket. Returns (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    a1 = q[:, 1]
    a2 = a1 + q[:, 2]
    a3 = a2 + q[:, 3]
    r1 = boom * np.cos(a1)
    z1 = base_height + boom * np.sin(a1)
    r2 = r1 + stick * np.cos(a2)
    z2 = z1 + stick * np.sin(a2)
    r3 = r2 + bucket * np.cos(a3)
    z3 = z2 + bucket * np.sin(a3)
    c = np.cos(q[:, 0])
    s = np.sin(q[:, 0])
    out = np.empty((len(q), 3, 3))
    for i, (r, z) in enumerate(((r1, z1), (r2, z2), (r3, z3))):
        out[:, i, 0] = r * c
        out[:, i, 1] = r * s
        out[:, i, 2] = z
    return out


def box_signed_distance(points, rotations, centers, half_extents):
    """Signed distance of every point to every box, shape (..., B).

    ``rotations`` map box frame to world; negative values are inside.
    """
    p = np.asarray(points, dtype=np.float64)
    local = np.einsum("bji,...bj->...bi", rotations, p[..., None, :] - centers)
    d = np.abs(local) - half_extents
    outside = np.sqrt(np.sum(np.maximum(d, 0.0) ** 2, axis=-1))
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def box_penalty(points, rotations, centers, half_extents, clearance):
    """Sum over points and boxes of max(0, clearance - sd)^2.

    ``points`` is (N, P, 3). Returns (cost (N,), min signed distance (N,)).
    With no boxes the cost is zero and the distance is +inf.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if len(centers) == 0:
        return np.zeros(n), np.full(n, np.inf)
    sd = box_signed_distance(points, rotations, centers, half_extents)
    pen = np.maximum(clearance - sd, 0.0)
    cost = np.sum(pen * pen, axis=(1, 2))
    return cost, sd.min(axis=(1, 2))


def settle(elev, floor, fixed, max_dh, max_iters):
    """Relax slopes steeper than ``max_dh`` per cell pitch, in place.

    Gauss-Seidel sweep over right/down neighbour pairs. Material moves from
    the higher cell to the lower one, never taking a cell below ``floor``;
    ``fixed`` cells are skipped. Returns the number of sweeps that moved
    material.
    """
    ny, nx = elev.shape
    sweeps = 0
    for _ in range(max_iters):
        moved = False
        for i in range(ny):
            for j in range(nx):
                if fixed[i, j]:
                    continue
                for di, dj in ((0, 1), (1, 0)):
                    k, m = i + di, j + dj
                    if k >= ny or m >= nx or fixed[k, m]:
                        continue
                    h0 = elev[i, j]
                    h1 = elev[k, m]
                    dh = h0 - h1
                    if dh > max_dh + 1e-12:
                        amount = min(0.5 * (dh - max_dh), h0 - floor[i, j])
                        if amount > 0.0:
                            elev[i, j] = h0 - amount
                            elev[k, m] = h1 + amount
                            moved = True
                    elif -dh > max_dh + 1e-12:
                        amount = min(0.5 * (-dh - max_dh), h1 - floor[k, m])
                        if amount > 0.0:
                            elev[k, m] = h1 - amount
                            elev[i, j] = h0 + amount
                            moved = True
        if not moved:
            break
        sweeps += 1
    return sweeps
