"""Numba kernels for the position-based soft-body step and the z-buffer."""
import numpy as np
from numba import njit

# no nnan/ninf: the step must still detect non-finite positions
SIXTH = 1.0 / 6.0
_FAST = {"contract", "arcp", "nsz", "reassoc"}


@njit(cache=True, nogil=True, fastmath=_FAST)
def _collide(p, boxes, pen, i):
    if p[i, 2] < 0.0:
        pen[i] = max(pen[i], -p[i, 2])
        p[i, 2] = 0.0
    for b in range(boxes.shape[0]):
        lo0, lo1, lo2 = boxes[b, 0], boxes[b, 1], boxes[b, 2]
        hi0, hi1, hi2 = boxes[b, 3], boxes[b, 4], boxes[b, 5]
        x, y, z = p[i, 0], p[i, 1], p[i, 2]
        if lo0 < x < hi0 and lo1 < y < hi1 and lo2 < z < hi2:
            # push out through the nearest face
            best = x - lo0
            axis, to = 0, lo0
            if hi0 - x < best:
                best, axis, to = hi0 - x, 0, hi0
            if y - lo1 < best:
                best, axis, to = y - lo1, 1, lo1
            if hi1 - y < best:
                best, axis, to = hi1 - y, 1, hi1
            if z - lo2 < best:
                best, axis, to = z - lo2, 2, lo2
            if hi2 - z < best:
                best, axis, to = hi2 - z, 2, hi2
            p[i, axis] = to


@njit(cache=True, nogil=True, fastmath=_FAST)
def _project(p, w, edges, rest_len, tets, rest_vol):
    for e in range(edges.shape[0]):
        a, b = edges[e, 0], edges[e, 1]
        wa, wb = w[a], w[b]
        ws = wa + wb
        if ws == 0.0:
            continue
        d0 = p[b, 0] - p[a, 0]
        d1 = p[b, 1] - p[a, 1]
        d2 = p[b, 2] - p[a, 2]
        ln = np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
        if ln < 1e-12:
            continue
        s = (ln - rest_len[e]) / (ln * ws)
        sa, sb = wa * s, wb * s
        p[a, 0] += sa * d0
        p[a, 1] += sa * d1
        p[a, 2] += sa * d2
        p[b, 0] -= sb * d0
        p[b, 1] -= sb * d1
        p[b, 2] -= sb * d2
    for t in range(tets.shape[0]):
        i0, i1, i2, i3 = tets[t, 0], tets[t, 1], tets[t, 2], tets[t, 3]
        ox, oy, oz = p[i0, 0], p[i0, 1], p[i0, 2]
        ax, ay, az = p[i1, 0] - ox, p[i1, 1] - oy, p[i1, 2] - oz
        bx, by, bz = p[i2, 0] - ox, p[i2, 1] - oy, p[i2, 2] - oz
        cx, cy, cz = p[i3, 0] - ox, p[i3, 1] - oy, p[i3, 2] - oz
        # gradients of the signed volume wrt vertices 1..3 (vertex 0 is minus their sum)
        g1x, g1y, g1z = (by * cz - bz * cy) * SIXTH, (bz * cx - bx * cz) * SIXTH, (bx * cy - by * cx) * SIXTH
        g2x, g2y, g2z = (cy * az - cz * ay) * SIXTH, (cz * ax - cx * az) * SIXTH, (cx * ay - cy * ax) * SIXTH
        g3x, g3y, g3z = (ay * bz - az * by) * SIXTH, (az * bx - ax * bz) * SIXTH, (ax * by - ay * bx) * SIXTH
        g0x, g0y, g0z = -(g1x + g2x + g3x), -(g1y + g2y + g3y), -(g1z + g2z + g3z)
        vol = ax * g1x + ay * g1y + az * g1z
        denom = (w[i0] * (g0x * g0x + g0y * g0y + g0z * g0z)
                 + w[i1] * (g1x * g1x + g1y * g1y + g1z * g1z)
                 + w[i2] * (g2x * g2x + g2y * g2y + g2z * g2z)
                 + w[i3] * (g3x * g3x + g3y * g3y + g3z * g3z))
        if denom < 1e-30:
            continue
        lam = -(vol - rest_vol[t]) / denom
        s0, s1, s2, s3 = lam * w[i0], lam * w[i1], lam * w[i2], lam * w[i3]
        p[i0, 0] += s0 * g0x
        p[i0, 1] += s0 * g0y
        p[i0, 2] += s0 * g0z
        p[i1, 0] += s1 * g1x
        p[i1, 1] += s1 * g1y
        p[i1, 2] += s1 * g1z
        p[i2, 0] += s2 * g2x
        p[i2, 1] += s2 * g2y
        p[i2, 2] += s2 * g2z
        p[i3, 0] += s3 * g3x
        p[i3, 1] += s3 * g3y
        p[i3, 2] += s3 * g3z


@njit(cache=True, nogil=True, fastmath=_FAST)
def pbd_step(x, v, w, edges, rest_len, tets, rest_vol, held, held_pos, boxes,
             dt, gravity, damping, iterations, mu_s, mu_k):
    """Advance x, v in place by one step; returns index of a non-finite vertex or -1."""
    n = x.shape[0]
    p = np.empty_like(x)
    pen = np.zeros(n)
    for i in range(n):
        for k in range(3):
            v[i, k] *= damping
        v[i, 2] -= gravity * dt
        for k in range(3):
            p[i, k] = x[i, k] + v[i, k] * dt
    for h in range(held.shape[0]):
        for k in range(3):
            p[held[h], k] = held_pos[h, k]
    for _ in range(iterations):
        _project(p, w, edges, rest_len, tets, rest_vol)
        for i in range(n):
            if w[i] > 0.0:
                _collide(p, boxes, pen, i)
    for i in range(n):
        if w[i] > 0.0:
            _collide(p, boxes, pen, i)
            if p[i, 2] <= 0.0 and pen[i] > 0.0:
                d0 = p[i, 0] - x[i, 0]
                d1 = p[i, 1] - x[i, 1]
                dl = np.sqrt(d0 * d0 + d1 * d1)
                if dl < mu_s * pen[i]:
                    p[i, 0] = x[i, 0]
                    p[i, 1] = x[i, 1]
                elif dl > 0.0:
                    keep = max(0.0, 1.0 - mu_k * pen[i] / dl)
                    p[i, 0] = x[i, 0] + d0 * keep
                    p[i, 1] = x[i, 1] + d1 * keep
    bad = -1
    for i in range(n):
        for k in range(3):
            v[i, k] = (p[i, k] - x[i, k]) / dt
            x[i, k] = p[i, k]
            if bad < 0 and not np.isfinite(p[i, k]):
                bad = i
    return bad


@njit(cache=True, nogil=True)
def run_move(x, v, w, edges, rest_len, tets, rest_vol, held, offsets, path, boxes,
             dt, gravity, damping, iterations, mu_s, mu_k):
    """Step once per gripper waypoint in `path`; returns (steps, bad_vertex)."""
    hp = np.empty((held.shape[0], 3))
    for s in range(path.shape[0]):
        for h in range(held.shape[0]):
            for k in range(3):
                hp[h, k] = path[s, k] + offsets[h, k]
        bad = pbd_step(x, v, w, edges, rest_len, tets, rest_vol, held, hp, boxes,
                       dt, gravity, damping, iterations, mu_s, mu_k)
        if bad >= 0:
            return s + 1, bad
    return path.shape[0], -1


@njit(cache=True, nogil=True)
def run_settle(x, v, w, edges, rest_len, tets, rest_vol, boxes, dt, gravity, damping,
               iterations, mu_s, mu_k, max_steps, speed_tol):
    """Step until every vertex is slower than speed_tol; returns (steps, bad_vertex)."""
    held = np.empty(0, dtype=np.int64)
    hp = np.empty((0, 3))
    for s in range(max_steps):
        bad = pbd_step(x, v, w, edges, rest_len, tets, rest_vol, held, hp, boxes,
                       dt, gravity, damping, iterations, mu_s, mu_k)
        if bad >= 0:
            return s + 1, bad
        vmax = 0.0
        for i in range(x.shape[0]):
            sp = v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1] + v[i, 2] * v[i, 2]
            if sp > vmax:
                vmax = sp
        if np.sqrt(vmax) < speed_tol:
            return s + 1, -1
    return max_steps, -1


@njit(cache=True, nogil=True)
def rasterize(uvd, tris, width, height):
    """Orthographic z-buffer of projected triangles.

    uvd holds per-vertex (pixel u, pixel v, depth). Returns per-pixel depth
    (inf where empty), triangle index (-1) and barycentric weights.
    """
    depth = np.full((height, width), np.inf)
    tri_id = np.full((height, width), -1, dtype=np.int64)
    bary = np.zeros((height, width, 3))
    for t in range(tris.shape[0]):
        a, b, c = tris[t, 0], tris[t, 1], tris[t, 2]
        ax, ay, az = uvd[a, 0], uvd[a, 1], uvd[a, 2]
        bx, by, bz = uvd[b, 0], uvd[b, 1], uvd[b, 2]
        cx, cy, cz = uvd[c, 0], uvd[c, 1], uvd[c, 2]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            continue
        i0 = max(int(np.floor(min(ax, bx, cx))), 0)
        i1 = min(int(np.ceil(max(ax, bx, cx))), width - 1)
        j0 = max(int(np.floor(min(ay, by, cy))), 0)
        j1 = min(int(np.ceil(max(ay, by, cy))), height - 1)
        for j in range(j0, j1 + 1):
            py = j + 0.5
            for i in range(i0, i1 + 1):
                px = i + 0.5
                l0 = ((bx - px) * (cy - py) - (by - py) * (cx - px)) / area
                l1 = ((cx - px) * (ay - py) - (cy - py) * (ax - px)) / area
                l2 = 1.0 - l0 - l1
                if l0 < -1e-12 or l1 < -1e-12 or l2 < -1e-12:
                    continue
                z = l0 * az + l1 * bz + l2 * cz
                if z < depth[j, i]:
                    depth[j, i] = z
                    tri_id[j, i] = t
                    bary[j, i, 0] = l0
                    bary[j, i, 1] = l1
                    bary[j, i, 2] = l2
    return depth, tri_id, bary


@njit(cache=True, nogil=True)
def _closest_on_triangle(px, py, pz, a, b, c):
    # Ericson, Real-Time Collision Detection 5.1.5; returns squared distance
    abx, aby, abz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    acx, acy, acz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    apx, apy, apz = px - a[0], py - a[1], pz - a[2]
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        qx, qy, qz = a[0], a[1], a[2]
    else:
        bpx, bpy, bpz = px - b[0], py - b[1], pz - b[2]
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        cpx, cpy, cpz = px - c[0], py - c[1], pz - c[2]
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = b[0], b[1], b[2]
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = c[0], c[1], c[2]
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            t = d1 / (d1 - d3)
            qx, qy, qz = a[0] + t * abx, a[1] + t * aby, a[2] + t * abz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            t = d2 / (d2 - d6)
            qx, qy, qz = a[0] + t * acx, a[1] + t * acy, a[2] + t * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = b[0] + t * (c[0] - b[0])
            qy = b[1] + t * (c[1] - b[1])
            qz = b[2] + t * (c[2] - b[2])
        else:
            den = 1.0 / (va + vb + vc)
            v = vb * den
            w = vc * den
            qx = a[0] + abx * v + acx * w
            qy = a[1] + aby * v + acy * w
            qz = a[2] + abz * v + acz * w
    return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2


@njit(cache=True, nogil=True)
def surface_distance(points, positions, tris):
    """Distance from each point to the nearest triangle."""
    out = np.empty(points.shape[0])
    for n in range(points.shape[0]):
        best = np.inf
        for t in range(tris.shape[0]):
            d = _closest_on_triangle(points[n, 0], points[n, 1], points[n, 2],
                                     positions[tris[t, 0]], positions[tris[t, 1]],
                                     positions[tris[t, 2]])
            if d < best:
                best = d
        out[n] = np.sqrt(best)
    return out
