"""Compiled kernels for rotations, GJK distance and EPA penetration.

Hulls are passed to these kernels as world-space vertex arrays of shape (n, 3).
Quaternions are (w, x, y, z).
"""

import numpy as np
from numba import njit

GJK_MAX_ITERS = 128
GJK_TOUCH_TOL = 1e-10

EPA_MAX_VERTS = 256
EPA_MAX_FACES = 768
EPA_MAX_ITERS = 200


@njit(cache=True)
def qmul(a, b):
    out = np.empty(4)
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]
    return out


@njit(cache=True)
def qnormalize(q):
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    return q / n


@njit(cache=True)
def quat_to_mat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    m = np.empty((3, 3))
    m[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[0, 1] = 2.0 * (x * y - w * z)
    m[0, 2] = 2.0 * (x * z + w * y)
    m[1, 0] = 2.0 * (x * y + w * z)
    m[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[1, 2] = 2.0 * (y * z - w * x)
    m[2, 0] = 2.0 * (x * z - w * y)
    m[2, 1] = 2.0 * (y * z + w * x)
    m[2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


@njit(cache=True)
def transform_points(local, q, t):
    r = quat_to_mat(q)
    n = local.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        for k in range(3):
            out[i, k] = (
                r[k, 0] * local[i, 0] + r[k, 1] * local[i, 1] + r[k, 2] * local[i, 2] + t[k]
            )
    return out


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True, _nrt=False)
def support_index(verts, d):
    best = 0
    bd = verts[0, 0] * d[0] + verts[0, 1] * d[1] + verts[0, 2] * d[2]
    for i in range(1, verts.shape[0]):
        dd = verts[i, 0] * d[0] + verts[i, 1] * d[1] + verts[i, 2] * d[2]
        if dd > bd:
            bd = dd
            best = i
    return best


@njit(cache=True, _nrt=False)
def _solve_small(a, b, k):
    """In-place Gaussian elimination with partial pivoting on a k x k system.

    The solution overwrites ``b``; returns False for (near) singular systems.
    """
    scale = 0.0
    for i in range(k):
        for j in range(k):
            if abs(a[i, j]) > scale:
                scale = abs(a[i, j])
    if scale == 0.0:
        return False
    for col in range(k):
        piv = col
        for r in range(col + 1, k):
            if abs(a[r, col]) > abs(a[piv, col]):
                piv = r
        if abs(a[piv, col]) <= 1e-13 * scale:
            return False
        if piv != col:
            for j in range(k):
                tmp = a[col, j]
                a[col, j] = a[piv, j]
                a[piv, j] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        for r in range(col + 1, k):
            f = a[r, col] / a[col, col]
            for j in range(col, k):
                a[r, j] -= f * a[col, j]
            b[r] -= f * b[col]
    for r in range(k - 1, -1, -1):
        s = b[r]
        for j in range(r + 1, k):
            s -= a[r, j] * b[j]
        b[r] = s / a[r, r]
    return True


@njit(cache=True, _nrt=False)
def _closest_into(w, n, g, rhs, idx, lam, best_lam, best_p):
    best_d = np.inf
    for i in range(4):
        best_lam[i] = 0.0
    for c in range(3):
        best_p[c] = 0.0
    for size in range(1, n + 1):
        for mask in range(1, 1 << n):
            cnt = 0
            for i in range(n):
                if mask & (1 << i):
                    idx[cnt] = i
                    cnt += 1
            if cnt != size:
                continue
            for i in range(4):
                lam[i] = 0.0
            i0 = idx[0]
            p0 = w[i0, 0]
            p1 = w[i0, 1]
            p2 = w[i0, 2]
            if size == 1:
                lam[i0] = 1.0
            else:
                k = size - 1
                for a in range(k):
                    ia = idx[a + 1]
                    e0 = w[ia, 0] - w[i0, 0]
                    e1 = w[ia, 1] - w[i0, 1]
                    e2 = w[ia, 2] - w[i0, 2]
                    rhs[a] = -(e0 * w[i0, 0] + e1 * w[i0, 1] + e2 * w[i0, 2])
                    for b in range(k):
                        ib = idx[b + 1]
                        g[a, b] = (e0 * (w[ib, 0] - w[i0, 0]) + e1 * (w[ib, 1] - w[i0, 1])
                                   + e2 * (w[ib, 2] - w[i0, 2]))
                if not _solve_small(g, rhs, k):
                    continue
                s = 0.0
                valid = True
                for a in range(k):
                    if rhs[a] < 0.0:
                        valid = False
                    s += rhs[a]
                if not valid or s > 1.0:
                    continue
                lam[i0] = 1.0 - s
                for a in range(k):
                    ia = idx[a + 1]
                    lam[ia] = rhs[a]
                    p0 += rhs[a] * (w[ia, 0] - w[i0, 0])
                    p1 += rhs[a] * (w[ia, 1] - w[i0, 1])
                    p2 += rhs[a] * (w[ia, 2] - w[i0, 2])
            d = p0 * p0 + p1 * p1 + p2 * p2
            if d < best_d * (1.0 - 1e-12):
                best_d = d
                for i in range(4):
                    best_lam[i] = lam[i]
                best_p[0] = p0
                best_p[1] = p1
                best_p[2] = p2
        if best_d == 0.0:
            break


@njit(cache=True)
def closest_on_simplex(w, n):
    """Closest point to the origin on the convex hull of w[:n].

    Every non-empty subset is projected onto its affine hull; projections with
    non-negative barycentric coordinates lie inside the simplex and the nearest
    of those is the answer. Smaller subsets win ties.

    Returns (point, barycentric weights over the n inputs).
    """
    best_p = np.zeros(3)
    best_lam = np.zeros(4)
    _closest_into(w, n, np.zeros((3, 3)), np.zeros(3), np.zeros(4, dtype=np.int64), np.zeros(4), best_lam, best_p)
    return best_p, best_lam


@njit(cache=True, _nrt=False)
def _gjk_core(va, vb, w, wa, wb, lam, v, g, rhs, idx, lamt, newlam, newv, dd, nd):
    for k in range(3):
        dd[k] = va[0, k] - vb[0, k]
    if dd[0] * dd[0] + dd[1] * dd[1] + dd[2] * dd[2] == 0.0:
        dd[0] = 1.0
    for k in range(3):
        nd[k] = -dd[k]
    ia = support_index(va, nd)
    ib = support_index(vb, dd)
    for k in range(3):
        wa[0, k] = va[ia, k]
        wb[0, k] = vb[ib, k]
        w[0, k] = va[ia, k] - vb[ib, k]
        v[k] = w[0, k]
    lam[0] = 1.0
    n = 1
    for _ in range(GJK_MAX_ITERS):
        vv = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
        if vv <= GJK_TOUCH_TOL * GJK_TOUCH_TOL:
            return 0.0, n
        for k in range(3):
            nd[k] = -v[k]
        ia = support_index(va, nd)
        ib = support_index(vb, v)
        p0 = va[ia, 0] - vb[ib, 0]
        p1 = va[ia, 1] - vb[ib, 1]
        p2 = va[ia, 2] - vb[ib, 2]
        if vv - (v[0] * p0 + v[1] * p1 + v[2] * p2) <= 1e-13 * vv + 1e-24:
            break
        dup = False
        for i in range(n):
            if p0 == w[i, 0] and p1 == w[i, 1] and p2 == w[i, 2]:
                dup = True
        if dup:
            break
        w[n, 0] = p0
        w[n, 1] = p1
        w[n, 2] = p2
        for k in range(3):
            wa[n, k] = va[ia, k]
            wb[n, k] = vb[ib, k]
        n += 1
        _closest_into(w, n, g, rhs, idx, lamt, newlam, newv)
        # drop vertices outside the support of the closest point
        m = 0
        for i in range(n):
            if newlam[i] > 0.0:
                for k in range(3):
                    w[m, k] = w[i, k]
                    wa[m, k] = wa[i, k]
                    wb[m, k] = wb[i, k]
                lam[m] = newlam[i]
                m += 1
        n = m
        nv = newv[0] * newv[0] + newv[1] * newv[1] + newv[2] * newv[2]
        for k in range(3):
            v[k] = newv[k]
        if n == 4:
            return 0.0, n
        if nv >= vv:
            # no progress, numerical floor reached
            break
    dist = np.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if dist <= GJK_TOUCH_TOL:
        dist = 0.0
    return dist, n


@njit(cache=True)
def gjk(va, vb):
    """Distance between the convex hulls of two world-space vertex sets.

    Returns (distance, v, n, w, wa, wb, lam) where v is the closest point of the
    Minkowski difference A - B to the origin and (w, wa, wb, lam) the final
    simplex with its barycentric weights. distance is exactly 0 for touching or
    overlapping hulls.
    """
    w = np.zeros((4, 3))
    wa = np.zeros((4, 3))
    wb = np.zeros((4, 3))
    lam = np.zeros(4)
    v = np.zeros(3)
    # rows: rhs, simplex weights, new weights, new v, direction, negated direction
    ws = np.zeros((6, 4))
    g = np.zeros((3, 3))
    idx = np.zeros(4, dtype=np.int64)
    dist, n = _gjk_core(va, vb, w, wa, wb, lam, v, g, ws[0], idx, ws[1], ws[2], ws[3], ws[4], ws[5])
    return dist, v, n, w, wa, wb, lam


@njit(cache=True)
def gjk_distance_kernel(va, vb):
    return gjk(va, vb)[0]


@njit(cache=True, _nrt=False)
def _face_normal(pv, a, b, c, interior, out):
    """Unit normal of triangle (a, b, c) into ``out``, oriented away from ``interior``.

    Returns (twice the triangle area, whether the winding had to be flipped).
    """
    e0 = pv[b, 0] - pv[a, 0]
    e1 = pv[b, 1] - pv[a, 1]
    e2 = pv[b, 2] - pv[a, 2]
    f0 = pv[c, 0] - pv[a, 0]
    f1 = pv[c, 1] - pv[a, 1]
    f2 = pv[c, 2] - pv[a, 2]
    n0 = e1 * f2 - e2 * f1
    n1 = e2 * f0 - e0 * f2
    n2 = e0 * f1 - e1 * f0
    ln = np.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
    if ln > 0.0:
        n0 /= ln
        n1 /= ln
        n2 /= ln
    flipped = False
    if n0 * (pv[a, 0] - interior[0]) + n1 * (pv[a, 1] - interior[1]) + n2 * (pv[a, 2] - interior[2]) < 0.0:
        n0 = -n0
        n1 = -n1
        n2 = -n2
        flipped = True
    out[0] = n0
    out[1] = n1
    out[2] = n2
    return ln, flipped


@njit(cache=True)
def _blow_up(va, vb, w, wa, wb, n):
    """Extend a GJK simplex to a non-degenerate tetrahedron of the Minkowski difference."""
    dirs = np.array(
        [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
            [0.57735026918962573, 0.57735026918962573, 0.57735026918962573],
            [-0.57735026918962573, -0.57735026918962573, -0.57735026918962573],
            [0.57735026918962573, -0.57735026918962573, 0.57735026918962573],
            [-0.57735026918962573, 0.57735026918962573, -0.57735026918962573],
        ]
    )
    # point -> segment: farthest support among fixed directions
    if n == 1:
        best = -1.0
        bi = 0
        for i in range(dirs.shape[0]):
            ia = support_index(va, dirs[i])
            ib = support_index(vb, -dirs[i])
            p = va[ia] - vb[ib]
            dd = _dot(p - w[0], p - w[0])
            if dd > best:
                best = dd
                bi = i
        ia = support_index(va, dirs[bi])
        ib = support_index(vb, -dirs[bi])
        w[1] = va[ia] - vb[ib]
        wa[1] = va[ia]
        wb[1] = vb[ib]
        n = 2
        if best <= 1e-24:
            return n, False
    if n == 2:
        e = w[1] - w[0]
        # perpendicular basis around the segment
        if abs(e[0]) < abs(e[1]) and abs(e[0]) < abs(e[2]):
            ax = np.array([1.0, 0.0, 0.0])
        elif abs(e[1]) < abs(e[2]):
            ax = np.array([0.0, 1.0, 0.0])
        else:
            ax = np.array([0.0, 0.0, 1.0])
        p1 = _cross(e, ax)
        p1 = p1 / np.sqrt(_dot(p1, p1))
        p2 = _cross(e, p1)
        p2 = p2 / np.sqrt(_dot(p2, p2))
        best = -1.0
        bd = np.zeros(3)
        for i in range(8):
            ang = i * np.pi / 4.0
            d = np.cos(ang) * p1 + np.sin(ang) * p2
            ia = support_index(va, d)
            ib = support_index(vb, -d)
            p = va[ia] - vb[ib]
            c = _cross(p - w[0], e)
            dd = _dot(c, c)
            if dd > best:
                best = dd
                bd = d
        ia = support_index(va, bd)
        ib = support_index(vb, -bd)
        w[2] = va[ia] - vb[ib]
        wa[2] = va[ia]
        wb[2] = vb[ib]
        n = 3
        if best <= 1e-24:
            return n, False
    if n == 3:
        nrm = _cross(w[1] - w[0], w[2] - w[0])
        ln = np.sqrt(_dot(nrm, nrm))
        if ln <= 1e-300:
            return n, False
        nrm = nrm / ln
        ia = support_index(va, nrm)
        ib = support_index(vb, -nrm)
        pp = va[ia] - vb[ib]
        ja = support_index(va, -nrm)
        jb = support_index(vb, nrm)
        pm = va[ja] - vb[jb]
        dp = abs(_dot(pp - w[0], nrm))
        dm = abs(_dot(pm - w[0], nrm))
        if dp >= dm:
            w[3] = pp
            wa[3] = va[ia]
            wb[3] = vb[ib]
            h = dp
        else:
            w[3] = pm
            wa[3] = va[ja]
            wb[3] = vb[jb]
            h = dm
        n = 4
        if h <= 1e-14:
            return n, False
    return n, True


@njit(cache=True)
def epa(va, vb, w_in, wa_in, wb_in, n_in):
    """Penetration depth of overlapping hulls by expanding polytope.

    Returns (ok, depth, normal, point_a, point_b). Translating B by depth * normal
    brings the hulls into touching contact. Among equally deep candidate faces the
    one whose normal's dominant axis has the lowest index is chosen.
    """
    pv = np.empty((EPA_MAX_VERTS, 3))
    pa = np.empty((EPA_MAX_VERTS, 3))
    pb = np.empty((EPA_MAX_VERTS, 3))
    w = w_in.copy()
    wa = wa_in.copy()
    wb = wb_in.copy()
    n, ok = _blow_up(va, vb, w, wa, wb, n_in)
    zero = np.zeros(3)
    if not ok:
        return False, 0.0, zero, zero, zero
    for i in range(4):
        pv[i] = w[i]
        pa[i] = wa[i]
        pb[i] = wb[i]
    nv = 4
    interior = 0.25 * (pv[0] + pv[1] + pv[2] + pv[3])

    # only the first nf faces / ne edges / nv vertices are ever read
    faces = np.empty((EPA_MAX_FACES, 3), dtype=np.int64)
    fn = np.empty((EPA_MAX_FACES, 3))
    fd = np.empty(EPA_MAX_FACES)
    alive = np.empty(EPA_MAX_FACES, dtype=np.bool_)
    nf = 0
    init = ((0, 1, 2), (0, 3, 1), (0, 2, 3), (1, 3, 2))
    for t in init:
        a, b, c = t
        ln, flipped = _face_normal(pv, a, b, c, interior, fn[nf])
        if flipped:
            b, c = c, b
        faces[nf, 0] = a
        faces[nf, 1] = b
        faces[nf, 2] = c
        fd[nf] = fn[nf, 0] * pv[a, 0] + fn[nf, 1] * pv[a, 1] + fn[nf, 2] * pv[a, 2]
        alive[nf] = True
        nf += 1

    edges = np.empty((3 * EPA_MAX_FACES, 2), dtype=np.int64)
    nd = np.empty(3)
    best = 0
    for _ in range(EPA_MAX_ITERS):
        best = -1
        bd = np.inf
        for f in range(nf):
            if alive[f] and fd[f] < bd:
                bd = fd[f]
                best = f
        if best < 0:
            return False, 0.0, zero, zero, zero
        for k in range(3):
            nd[k] = -fn[best, k]
        ia = support_index(va, fn[best])
        ib = support_index(vb, nd)
        p0 = va[ia, 0] - vb[ib, 0]
        p1 = va[ia, 1] - vb[ib, 1]
        p2 = va[ia, 2] - vb[ib, 2]
        if p0 * fn[best, 0] + p1 * fn[best, 1] + p2 * fn[best, 2] - bd <= 1e-10 + 1e-10 * abs(bd):
            break
        if nv >= EPA_MAX_VERTS or nf + 3 * 64 >= EPA_MAX_FACES:
            break
        pv[nv, 0] = p0
        pv[nv, 1] = p1
        pv[nv, 2] = p2
        for k in range(3):
            pa[nv, k] = va[ia, k]
            pb[nv, k] = vb[ib, k]
        ne = 0
        for f in range(nf):
            if not alive[f]:
                continue
            q = faces[f, 0]
            if fn[f, 0] * (p0 - pv[q, 0]) + fn[f, 1] * (p1 - pv[q, 1]) + fn[f, 2] * (p2 - pv[q, 2]) > 1e-12:
                alive[f] = False
                for k in range(3):
                    e0 = faces[f, k]
                    e1 = faces[f, (k + 1) % 3]
                    found = -1
                    for j in range(ne):
                        if edges[j, 0] == e1 and edges[j, 1] == e0:
                            found = j
                            break
                    if found >= 0:
                        edges[found, 0] = edges[ne - 1, 0]
                        edges[found, 1] = edges[ne - 1, 1]
                        ne -= 1
                    else:
                        edges[ne, 0] = e0
                        edges[ne, 1] = e1
                        ne += 1
        for j in range(ne):
            a = edges[j, 0]
            b = edges[j, 1]
            c = nv
            ln, flipped = _face_normal(pv, a, b, c, interior, fn[nf])
            if flipped:
                a, b = b, a
            faces[nf, 0] = a
            faces[nf, 1] = b
            faces[nf, 2] = c
            fd[nf] = fn[nf, 0] * pv[a, 0] + fn[nf, 1] * pv[a, 1] + fn[nf, 2] * pv[a, 2]
            alive[nf] = ln > 1e-14
            nf += 1
        nv += 1

    # deterministic tie-break among equally deep faces
    bd = fd[best]
    chosen = best
    chosen_axis = 3
    for f in range(nf):
        if not alive[f] or fd[f] > bd + 1e-9:
            continue
        # only faces that are true supporting planes may win the tie; near-zero
        # depths otherwise admit unexpanded faces with arbitrary normals
        if f != best:
            for k in range(3):
                nd[k] = -fn[f, k]
            ia = support_index(va, fn[f])
            ib = support_index(vb, nd)
            sp = (va[ia, 0] - vb[ib, 0]) * fn[f, 0] + (va[ia, 1] - vb[ib, 1]) * fn[f, 1] + (va[ia, 2] - vb[ib, 2]) * fn[f, 2]
            if sp - fd[f] > 1e-10 + 1e-10 * abs(fd[f]):
                continue
        ax = 0
        if abs(fn[f, 1]) > abs(fn[f, ax]) + 1e-12:
            ax = 1
        if abs(fn[f, 2]) > abs(fn[f, ax]) + 1e-12:
            ax = 2
        if ax < chosen_axis:
            chosen_axis = ax
            chosen = f
    nrm = fn[chosen].copy()
    depth = fd[chosen]
    if depth < 0.0:
        depth = 0.0
    # witness points from barycentric coordinates of the origin's projection
    a = faces[chosen, 0]
    b = faces[chosen, 1]
    c = faces[chosen, 2]
    proj = depth * nrm
    v0 = pv[b] - pv[a]
    v1 = pv[c] - pv[a]
    v2 = proj - pv[a]
    d00 = _dot(v0, v0)
    d01 = _dot(v0, v1)
    d11 = _dot(v1, v1)
    d20 = _dot(v2, v0)
    d21 = _dot(v2, v1)
    den = d00 * d11 - d01 * d01
    if den > 0.0:
        lb = (d11 * d20 - d01 * d21) / den
        lc = (d00 * d21 - d01 * d20) / den
    else:
        lb = 0.0
        lc = 0.0
    la = 1.0 - lb - lc
    wpa = la * pa[a] + lb * pa[b] + lc * pa[c]
    wpb = la * pb[a] + lb * pb[b] + lc * pb[c]
    return True, depth, nrm, wpa, wpb


@njit(cache=True)
def penetration_kernel(va, vb):
    """Returns (distance, depth, normal). depth is 0 when the hulls are disjoint."""
    dist, v, n, w, wa, wb, lam = gjk(va, vb)
    if dist > 0.0:
        return dist, 0.0, -v / dist
    ok, depth, nrm, pa, pb = epa(va, vb, w, wa, wb, n)
    if not ok:
        return 0.0, 0.0, np.zeros(3)
    return 0.0, depth, nrm


@njit(cache=True)
def intersect_kernel(va, vb, eps):
    dist, v, n, w, wa, wb, lam = gjk(va, vb)
    if dist > 0.0:
        return False
    ok, depth, nrm, pa, pb = epa(va, vb, w, wa, wb, n)
    return ok and depth > eps
