"""Compiled rigid-body settling loop.

Geometry arrives packed (see ``pack.py``): hull vertices and face planes are
expressed in each body's centre-of-mass frame. Body state is (x, q, v, w) with
x the centre of mass. Contacts store a normal pointing from body 1 to body 2;
body 1 == -1 is the static ground plane Y = 0.
"""

import numpy as np
from numba import njit

from stablescene.geom._kernels import epa, gjk, intersect_kernel, quat_to_mat

# float params layout
P_GX, P_GY, P_GZ, P_DT, P_LIN_DAMP, P_ANG_DAMP, P_FRICTION, P_RESTITUTION, P_OFFSET, P_MAX_DEPEN, P_BAUMGARTE = range(11)
# int params layout
I_SUBSTEPS, I_STEPS, I_TAU, I_ITERS = range(4)

MAX_POLY = 64
MAX_MANIFOLD = 4
WARM_MATCH_DIST2 = 0.02 * 0.02
DIVERGE_POS = 1e4
DIVERGE_VEL = 1e3
RESTITUTION_THRESHOLD = 0.5
BLOCK_SPREAD = 1e-3

STATUS_OK = 0
STATUS_DIVERGED = 1


@njit(cache=True, _nrt=False)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def world_geometry(hv, h_vs, h_body, x, rm):
    nh = h_body.shape[0]
    wv = np.empty_like(hv)
    lo = np.empty((nh, 3))
    hi = np.empty((nh, 3))
    for h in range(nh):
        b = h_body[h]
        for k in range(3):
            lo[h, k] = np.inf
            hi[h, k] = -np.inf
        for i in range(h_vs[h], h_vs[h + 1]):
            for k in range(3):
                val = rm[b, k, 0] * hv[i, 0] + rm[b, k, 1] * hv[i, 1] + rm[b, k, 2] * hv[i, 2] + x[b, k]
                wv[i, k] = val
                if val < lo[h, k]:
                    lo[h, k] = val
                if val > hi[h, k]:
                    hi[h, k] = val
    return wv, lo, hi


@njit(cache=True, _nrt=False)
def _clip(poly, npoly, s0, s1, s2, plane_d, out):
    """Sutherland-Hodgman: keep the part of the polygon with s . p <= d."""
    m = 0
    if npoly == 0:
        return 0
    for i in range(npoly):
        j = (i + 1) % npoly
        da = s0 * poly[i, 0] + s1 * poly[i, 1] + s2 * poly[i, 2] - plane_d
        db = s0 * poly[j, 0] + s1 * poly[j, 1] + s2 * poly[j, 2] - plane_d
        if da <= 0.0:
            if m < MAX_POLY:
                for k in range(3):
                    out[m, k] = poly[i, k]
                m += 1
        if (da < 0.0 and db > 0.0) or (da > 0.0 and db < 0.0):
            t = da / (da - db)
            if m < MAX_POLY:
                for k in range(3):
                    out[m, k] = poly[i, k] + t * (poly[j, k] - poly[i, k])
                m += 1
    return m


@njit(cache=True, _nrt=False)
def _area_sign(pts, i1, e0, e1, e2, i, n):
    """(e x (p_i - p_i1)) . n"""
    d0 = pts[i, 0] - pts[i1, 0]
    d1 = pts[i, 1] - pts[i1, 1]
    d2 = pts[i, 2] - pts[i1, 2]
    return (e1 * d2 - e2 * d1) * n[0] + (e2 * d0 - e0 * d2) * n[1] + (e0 * d1 - e1 * d0) * n[2]


@njit(cache=True, _nrt=False)
def _reduce(pts, depth, cnt, n, keep):
    """Pick at most four points spanning the contact patch; returns the count."""
    if cnt <= MAX_MANIFOLD:
        for i in range(cnt):
            keep[i] = i
        return cnt
    i1 = 0
    for i in range(1, cnt):
        if depth[i] > depth[i1] + 1e-12:
            i1 = i
    i2 = i1
    best = -1.0
    for i in range(cnt):
        d0 = pts[i, 0] - pts[i1, 0]
        d1 = pts[i, 1] - pts[i1, 1]
        d2 = pts[i, 2] - pts[i1, 2]
        dd = d0 * d0 + d1 * d1 + d2 * d2
        if dd > best + 1e-15:
            best = dd
            i2 = i
    e0 = pts[i2, 0] - pts[i1, 0]
    e1 = pts[i2, 1] - pts[i1, 1]
    e2 = pts[i2, 2] - pts[i1, 2]
    i3 = i1
    best = -1.0
    s3 = 0.0
    for i in range(cnt):
        s = _area_sign(pts, i1, e0, e1, e2, i, n)
        if abs(s) > best + 1e-15:
            best = abs(s)
            i3 = i
            s3 = s
    keep[0] = i1
    keep[1] = i2
    keep[2] = i3
    i4 = -1
    best = 0.0
    for i in range(cnt):
        s = _area_sign(pts, i1, e0, e1, e2, i, n)
        if s * s3 < 0.0 and abs(s) > best + 1e-15:
            best = abs(s)
            i4 = i
    if i4 >= 0:
        keep[3] = i4
        return 4
    return 3


@njit(cache=True, _nrt=False)
def _face_dot(f_n, f, rm, b, n):
    """World normal of face f on body b, dotted with n."""
    s = 0.0
    for k in range(3):
        s += (rm[b, k, 0] * f_n[f, 0] + rm[b, k, 1] * f_n[f, 1] + rm[b, k, 2] * f_n[f, 2]) * n[k]
    return s


@njit(cache=True, _nrt=False)
def manifold(h1, h2, n, wv, h_body, h_fs, f_n, f_vs, f_vi, rm, offset, out_p, out_d,
             poly, buf, cand_p, cand_d, keep, ref_n):
    """Contact points between two hulls given the separating direction n (h1 -> h2).

    Reference face on the hull whose face best matches n, incident face on the
    other hull, incident polygon clipped against the reference face's side planes.
    Returns the number of points written (depth > 0 means penetration). The
    remaining arguments are scratch buffers.
    """
    b1 = h_body[h1]
    b2 = h_body[h2]
    best1 = -np.inf
    fa = h_fs[h1]
    for f in range(h_fs[h1], h_fs[h1 + 1]):
        d = _face_dot(f_n, f, rm, b1, n)
        if d > best1:
            best1 = d
            fa = f
    best2 = -np.inf
    fb = h_fs[h2]
    for f in range(h_fs[h2], h_fs[h2 + 1]):
        d = -_face_dot(f_n, f, rm, b2, n)
        if d > best2:
            best2 = d
            fb = f
    if best1 >= 0.98 * best2:
        ref_f = fa
        ref_b = b1
        inc_h = h2
        inc_b = b2
    else:
        ref_f = fb
        ref_b = b2
        inc_h = h1
        inc_b = b1
    for k in range(3):
        ref_n[k] = rm[ref_b, k, 0] * f_n[ref_f, 0] + rm[ref_b, k, 1] * f_n[ref_f, 1] + rm[ref_b, k, 2] * f_n[ref_f, 2]
    inc_f = h_fs[inc_h]
    bestd = np.inf
    for f in range(h_fs[inc_h], h_fs[inc_h + 1]):
        d = _face_dot(f_n, f, rm, inc_b, ref_n)
        if d < bestd:
            bestd = d
            inc_f = f
    npoly = 0
    for j in range(f_vs[inc_f], f_vs[inc_f + 1]):
        if npoly < MAX_POLY:
            for k in range(3):
                poly[npoly, k] = wv[f_vi[j], k]
            npoly += 1
    r0 = f_vs[ref_f]
    r1 = f_vs[ref_f + 1]
    nr = r1 - r0
    for j in range(nr):
        ia = f_vi[r0 + j]
        ib = f_vi[r0 + (j + 1) % nr]
        e0 = wv[ib, 0] - wv[ia, 0]
        e1 = wv[ib, 1] - wv[ia, 1]
        e2 = wv[ib, 2] - wv[ia, 2]
        # side plane normal (pb - pa) x ref_n
        s0 = e1 * ref_n[2] - e2 * ref_n[1]
        s1 = e2 * ref_n[0] - e0 * ref_n[2]
        s2 = e0 * ref_n[1] - e1 * ref_n[0]
        ls = np.sqrt(s0 * s0 + s1 * s1 + s2 * s2)
        if ls < 1e-14:
            continue
        s0 /= ls
        s1 /= ls
        s2 /= ls
        npoly = _clip(poly, npoly, s0, s1, s2, s0 * wv[ia, 0] + s1 * wv[ia, 1] + s2 * wv[ia, 2], buf)
        for i in range(npoly):
            for k in range(3):
                poly[i, k] = buf[i, k]
    i0 = f_vi[r0]
    ref_off = ref_n[0] * wv[i0, 0] + ref_n[1] * wv[i0, 1] + ref_n[2] * wv[i0, 2]
    cnt = 0
    for i in range(npoly):
        sep = ref_n[0] * poly[i, 0] + ref_n[1] * poly[i, 1] + ref_n[2] * poly[i, 2] - ref_off
        if sep <= offset:
            for k in range(3):
                cand_p[cnt, k] = poly[i, k] - 0.5 * sep * ref_n[k]
            cand_d[cnt] = -sep
            cnt += 1
    m = _reduce(cand_p, cand_d, cnt, n, keep)
    for i in range(m):
        for k in range(3):
            out_p[i, k] = cand_p[keep[i], k]
        out_d[i] = cand_d[keep[i]]
    return m


@njit(cache=True)
def detect(
    x, rm, hv, h_vs, h_body, h_fs, f_n, f_vs, f_vi, dynamic, offset, margin,
    c_b1, c_b2, c_h1, c_h2, c_p, c_n, c_d,
):
    """Fill contact arrays for the current configuration; returns the contact count.

    ``margin`` is how far each body may travel this substep; features closer than
    ``offset`` plus the travel of the bodies involved become contacts.
    """
    wv, lo, hi = world_geometry(hv, h_vs, h_body, x, rm)
    nh = h_body.shape[0]
    cap = c_b1.shape[0]
    nc = 0
    gp = np.empty((MAX_POLY, 3))
    gd = np.empty(MAX_POLY)
    keep = np.empty(MAX_MANIFOLD, dtype=np.int64)
    up = np.array([0.0, 1.0, 0.0])
    for h in range(nh):
        b = h_body[h]
        if not dynamic[b] or lo[h, 1] >= offset + margin[b]:
            continue
        cnt = 0
        for i in range(h_vs[h], h_vs[h + 1]):
            if wv[i, 1] < offset + margin[b] and cnt < MAX_POLY:
                gp[cnt] = wv[i]
                gp[cnt, 1] = 0.5 * wv[i, 1]
                gd[cnt] = -wv[i, 1]
                cnt += 1
        m = _reduce(gp, gd, cnt, up, keep)
        for i in range(m):
            if nc >= cap:
                break
            c_b1[nc] = -1
            c_b2[nc] = b
            c_h1[nc] = -1
            c_h2[nc] = h
            c_p[nc] = gp[keep[i]]
            c_n[nc] = up
            c_d[nc] = gd[keep[i]]
            nc += 1
    mp = np.empty((MAX_MANIFOLD, 3))
    md = np.empty(MAX_MANIFOLD)
    poly = np.empty((MAX_POLY, 3))
    buf = np.empty((MAX_POLY, 3))
    cand_p = np.empty((MAX_POLY, 3))
    cand_d = np.empty(MAX_POLY)
    ref_n = np.empty(3)
    for h1 in range(nh):
        b1 = h_body[h1]
        for h2 in range(h1 + 1, nh):
            b2 = h_body[h2]
            if b1 == b2 or (not dynamic[b1] and not dynamic[b2]):
                continue
            reach = offset + margin[b1] + margin[b2]
            if (
                lo[h1, 0] > hi[h2, 0] + reach
                or lo[h2, 0] > hi[h1, 0] + reach
                or lo[h1, 1] > hi[h2, 1] + reach
                or lo[h2, 1] > hi[h1, 1] + reach
                or lo[h1, 2] > hi[h2, 2] + reach
                or lo[h2, 2] > hi[h1, 2] + reach
            ):
                continue
            va = wv[h_vs[h1] : h_vs[h1 + 1]]
            vb = wv[h_vs[h2] : h_vs[h2 + 1]]
            dist, v, ns, w, wa, wb, lam = gjk(va, vb)
            if dist > reach:
                continue
            if dist > 0.0:
                n = -v / dist
            else:
                ok, depth, n, pa, pb = epa(va, vb, w, wa, wb, ns)
                if not ok:
                    n = 0.5 * (lo[h2] + hi[h2]) - 0.5 * (lo[h1] + hi[h1])
                    ln = np.sqrt(_dot(n, n))
                    if ln < 1e-12:
                        n = up.copy()
                    else:
                        n = n / ln
            m = manifold(h1, h2, n, wv, h_body, h_fs, f_n, f_vs, f_vi, rm, reach, mp, md,
                         poly, buf, cand_p, cand_d, keep, ref_n)
            for i in range(m):
                if nc >= cap:
                    break
                c_b1[nc] = b1
                c_b2[nc] = b2
                c_h1[nc] = h1
                c_h2[nc] = h2
                c_p[nc] = mp[i]
                c_n[nc] = n
                c_d[nc] = md[i]
                nc += 1
    return nc


@njit(cache=True, _nrt=False)
def _ang_eff_mass(b1, b2, n, iiw):
    k = 0.0
    for b in (b1, b2):
        if b >= 0:
            for a in range(3):
                k += n[a] * (iiw[b, a, 0] * n[0] + iiw[b, a, 1] * n[1] + iiw[b, a, 2] * n[2])
    return k


@njit(cache=True, _nrt=False)
def _vn(b1, b2, r1, r2, d, v, w):
    """Relative velocity of body 2 over body 1 at the contact, along ``d``."""
    s = 0.0
    if b2 >= 0:
        s += v[b2, 0] * d[0] + v[b2, 1] * d[1] + v[b2, 2] * d[2]
        s += (w[b2, 0] * (r2[1] * d[2] - r2[2] * d[1]) + w[b2, 1] * (r2[2] * d[0] - r2[0] * d[2])
              + w[b2, 2] * (r2[0] * d[1] - r2[1] * d[0]))
    if b1 >= 0:
        s -= v[b1, 0] * d[0] + v[b1, 1] * d[1] + v[b1, 2] * d[2]
        s -= (w[b1, 0] * (r1[1] * d[2] - r1[2] * d[1]) + w[b1, 1] * (r1[2] * d[0] - r1[0] * d[2])
              + w[b1, 2] * (r1[0] * d[1] - r1[1] * d[0]))
    return s


@njit(cache=True, _nrt=False)
def _push(b, s, d, r, v, w, inv_mass, iiw):
    """Apply impulse ``s * d`` at offset ``r``."""
    if b < 0 or inv_mass[b] == 0.0:
        return
    im = inv_mass[b] * s
    v[b, 0] += im * d[0]
    v[b, 1] += im * d[1]
    v[b, 2] += im * d[2]
    a0 = s * (r[1] * d[2] - r[2] * d[1])
    a1 = s * (r[2] * d[0] - r[0] * d[2])
    a2 = s * (r[0] * d[1] - r[1] * d[0])
    for k in range(3):
        w[b, k] += iiw[b, k, 0] * a0 + iiw[b, k, 1] * a1 + iiw[b, k, 2] * a2


@njit(cache=True, _nrt=False)
def _twist(b, s, d, w, inv_mass, iiw):
    """Apply angular impulse ``s * d``."""
    if b < 0 or inv_mass[b] == 0.0:
        return
    for k in range(3):
        w[b, k] += s * (iiw[b, k, 0] * d[0] + iiw[b, k, 1] * d[1] + iiw[b, k, 2] * d[2])


@njit(cache=True, _nrt=False)
def _body_eff(b, r, d, inv_mass, iiw):
    if b < 0:
        return 0.0
    c0 = r[1] * d[2] - r[2] * d[1]
    c1 = r[2] * d[0] - r[0] * d[2]
    c2 = r[0] * d[1] - r[1] * d[0]
    k = inv_mass[b]
    for a in range(3):
        ca = c0 if a == 0 else (c1 if a == 1 else c2)
        k += ca * (iiw[b, a, 0] * c0 + iiw[b, a, 1] * c1 + iiw[b, a, 2] * c2)
    return k


@njit(cache=True, _nrt=False)
def _tangents_into(n, t1, t2):
    if abs(n[0]) > 0.57735:
        a, b, c = n[1], -n[0], 0.0
    else:
        a, b, c = 0.0, n[2], -n[1]
    s = 1.0 / np.sqrt(a * a + b * b + c * c)
    t1[0] = a * s
    t1[1] = b * s
    t1[2] = c * s
    t2[0] = n[1] * t1[2] - n[2] * t1[1]
    t2[1] = n[2] * t1[0] - n[0] * t1[2]
    t2[2] = n[0] * t1[1] - n[1] * t1[0]


@njit(cache=True, _nrt=False)
def _quat_to_mat_into(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1 - 2 * (y * y + z * z)
    out[0, 1] = 2 * (x * y - w * z)
    out[0, 2] = 2 * (x * z + w * y)
    out[1, 0] = 2 * (x * y + w * z)
    out[1, 1] = 1 - 2 * (x * x + z * z)
    out[1, 2] = 2 * (y * z - w * x)
    out[2, 0] = 2 * (x * z - w * y)
    out[2, 1] = 2 * (y * z + w * x)
    out[2, 2] = 1 - 2 * (x * x + y * y)


@njit(cache=True, _nrt=False)
def _rotate_inertia(r, ii, out):
    """out = r @ ii @ r.T without temporaries."""
    for a in range(3):
        for b in range(3):
            s = 0.0
            for i in range(3):
                ri = r[a, i]
                if ri == 0.0:
                    continue
                for j in range(3):
                    s += ri * ii[i, j] * r[b, j]
            out[a, b] = s


@njit(cache=True, _nrt=False)
def _inv3(a, out):
    """Inverse of a 3x3 matrix; False when it is numerically singular."""
    c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    det = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
    scale = 0.0
    for i in range(3):
        for j in range(3):
            if abs(a[i, j]) > scale:
                scale = abs(a[i, j])
    if scale == 0.0 or abs(det) <= 1e-12 * scale * scale * scale:
        return False
    inv = 1.0 / det
    out[0, 0] = c00 * inv
    out[1, 0] = c01 * inv
    out[2, 0] = c02 * inv
    out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) * inv
    out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) * inv
    out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) * inv
    out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) * inv
    out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) * inv
    out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) * inv
    return True


@njit(cache=True, _nrt=False)
def _patch_mass(b1, b2, r1, r2, n, t1, t2, inv_mass, iiw, out):
    """Effective mass of a patch in (normal at centre, twist about t1, twist about t2)."""
    for i in range(3):
        for j in range(3):
            out[i, j] = 0.0
    for b, r in ((b1, r1), (b2, r2)):
        if b < 0:
            continue
        g0 = r[1] * n[2] - r[2] * n[1]
        g1 = r[2] * n[0] - r[0] * n[2]
        g2 = r[0] * n[1] - r[1] * n[0]
        out[0, 0] += inv_mass[b]
        for a in range(3):
            ia0 = iiw[b, a, 0] * g0 + iiw[b, a, 1] * g1 + iiw[b, a, 2] * g2
            ja1 = iiw[b, a, 0] * t1[0] + iiw[b, a, 1] * t1[1] + iiw[b, a, 2] * t1[2]
            ja2 = iiw[b, a, 0] * t2[0] + iiw[b, a, 1] * t2[1] + iiw[b, a, 2] * t2[2]
            ga = g0 if a == 0 else (g1 if a == 1 else g2)
            out[0, 0] += ga * ia0
            out[0, 1] += ga * ja1
            out[0, 2] += ga * ja2
            out[1, 1] += t1[a] * ja1
            out[1, 2] += t1[a] * ja2
            out[2, 2] += t2[a] * ja2
    out[1, 0] = out[0, 1]
    out[2, 0] = out[0, 2]
    out[2, 1] = out[1, 2]


@njit(cache=True)
def simulate(
    hv, h_vs, h_body, h_fs, f_n, f_vs, f_vi,
    com, inv_mass, inv_inertia, dynamic,
    q0, t0, fparams, iparams, record,
):
    """Settle one configuration.

    q0/t0 are object-frame poses (not centre of mass). Returns object-frame poses
    and velocities at the probe step and the final step, per-body peak speeds,
    a status flag and, on divergence, the step and body index.
    """
    nb = q0.shape[0]
    nh = h_body.shape[0]
    substeps = iparams[I_SUBSTEPS]
    steps = iparams[I_STEPS]
    tau = iparams[I_TAU]
    iters = iparams[I_ITERS]
    h = fparams[P_DT] / substeps
    g = np.array([fparams[P_GX], fparams[P_GY], fparams[P_GZ]])
    lin_f = 1.0 - fparams[P_LIN_DAMP] * h
    ang_f = 1.0 - fparams[P_ANG_DAMP] * h
    mu = fparams[P_FRICTION]
    rest = fparams[P_RESTITUTION]
    offset = fparams[P_OFFSET]
    max_dep = fparams[P_MAX_DEPEN]
    beta = fparams[P_BAUMGARTE]

    q = q0.copy()
    x = np.empty((nb, 3))
    v = np.zeros((nb, 3))
    w = np.zeros((nb, 3))
    rm = np.empty((nb, 3, 3))
    iiw = np.empty((nb, 3, 3))
    for b in range(nb):
        rm[b] = quat_to_mat(q[b])
        for k in range(3):
            x[b, k] = t0[b, k] + rm[b, k, 0] * com[b, 0] + rm[b, k, 1] * com[b, 1] + rm[b, k, 2] * com[b, 2]

    cap = MAX_MANIFOLD * (nh + nh * (nh - 1) // 2) + 1
    # bound on how far a body can travel in one substep
    reach = np.zeros(nb)
    for i in range(nh):
        b = h_body[i]
        for j in range(h_vs[i], h_vs[i + 1]):
            r = np.sqrt(_dot(hv[j], hv[j]))
            if r > reach[b]:
                reach[b] = r
    margin = np.empty(nb)
    gmag = np.sqrt(_dot(g, g))
    c_b1 = np.empty(cap, dtype=np.int64)
    c_b2 = np.empty(cap, dtype=np.int64)
    c_h1 = np.empty(cap, dtype=np.int64)
    c_h2 = np.empty(cap, dtype=np.int64)
    c_p = np.empty((cap, 3))
    c_n = np.empty((cap, 3))
    c_d = np.empty(cap)
    r1s = np.empty((cap, 3))
    r2s = np.empty((cap, 3))
    kn = np.empty(cap)
    target = np.empty(cap)
    p_target = np.empty(cap)
    lam_p = np.empty(cap)
    vp = np.zeros((nb, 3))
    wp = np.zeros((nb, 3))
    lam_n = np.empty(cap)
    loc = np.empty((cap, 3))
    # one friction patch per manifold: 2D friction at the centroid plus twist about n
    m_start = np.empty(cap + 1, dtype=np.int64)
    m_r1 = np.empty((cap, 3))
    m_r2 = np.empty((cap, 3))
    m_t1 = np.empty((cap, 3))
    m_t2 = np.empty((cap, 3))
    m_kt1 = np.empty(cap)
    m_kt2 = np.empty(cap)
    m_ktw = np.empty(cap)
    m_rad = np.empty(cap)
    # block normal solve per patch: 3x3 inverse mass, least-squares target and
    # the map from a patch impulse (force, two couples) to per-point impulses
    m_blk = np.empty(cap, dtype=np.bool_)
    m_ai = np.empty((cap, 3, 3))
    m_us = np.empty((cap, 3))
    coef = np.empty((cap, 3))
    tmp_a = np.empty((3, 3))
    tmp_b = np.empty((3, 3))
    tau1 = np.empty(cap)
    tau2 = np.empty(cap)
    m_lt = np.empty((cap, 2))
    m_ltw = np.empty(cap)
    # previous-substep cache for warm starting
    p_h1 = np.empty(cap, dtype=np.int64)
    p_h2 = np.empty(cap, dtype=np.int64)
    p_loc = np.empty((cap, 3))
    p_ln = np.empty(cap)
    n_prev = 0
    pm_h1 = np.empty(cap, dtype=np.int64)
    pm_h2 = np.empty(cap, dtype=np.int64)
    pm_ft = np.empty((cap, 3))
    pm_tw = np.empty(cap)
    nm_prev = 0

    probe = np.zeros((nb, 13))
    final = np.zeros((nb, 13))
    peak_lin = np.zeros(nb)
    peak_ang = np.zeros(nb)
    if record:
        traj = np.zeros((steps + 1, nb, 13))
    else:
        traj = np.zeros((1, 1, 13))

    status = STATUS_OK
    bad_step = -1
    bad_body = -1

    if record:
        for b in range(nb):
            traj[0, b, 0:4] = q[b]
            traj[0, b, 4:7] = t0[b]

    for step in range(1, steps + 1):
        for _sub in range(substeps):
            for b in range(nb):
                _quat_to_mat_into(q[b], rm[b])
                if dynamic[b]:
                    _rotate_inertia(rm[b], inv_inertia[b], iiw[b])
                else:
                    iiw[b] = 0.0
            for b in range(nb):
                margin[b] = 0.0
                if dynamic[b]:
                    margin[b] += h * (np.sqrt(_dot(v[b], v[b])) + h * gmag + np.sqrt(_dot(w[b], w[b])) * reach[b])
            nc = detect(
                x, rm, hv, h_vs, h_body, h_fs, f_n, f_vs, f_vi, dynamic, offset, margin,
                c_b1, c_b2, c_h1, c_h2, c_p, c_n, c_d,
            )
            for b in range(nb):
                if dynamic[b]:
                    for k in range(3):
                        v[b, k] = (v[b, k] + h * g[k]) * lin_f
                        w[b, k] = w[b, k] * ang_f
            # manifolds are contiguous runs of one hull pair
            nm = 0
            for c in range(nc):
                if c == 0 or c_h1[c] != c_h1[c - 1] or c_h2[c] != c_h2[c - 1]:
                    m_start[nm] = c
                    nm += 1
            m_start[nm] = nc
            # normal constraints
            for c in range(nc):
                b1 = c_b1[c]
                b2 = c_b2[c]
                nrm = c_n[c]
                for kk in range(3):
                    r1s[c, kk] = c_p[c, kk] - x[b1, kk] if b1 >= 0 else 0.0
                    r2s[c, kk] = c_p[c, kk] - x[b2, kk]
                k = _body_eff(b1, r1s[c], nrm, inv_mass, iiw) + _body_eff(b2, r2s[c], nrm, inv_mass, iiw)
                kn[c] = 1.0 / k if k > 0.0 else 0.0
                depth = c_d[c]
                # speculative contacts may close the gap this substep; penetration is
                # recovered by the split-impulse pass, never through the real velocity
                tg = depth / h if depth < 0.0 else 0.0
                pt = beta * depth / h if depth > 0.0 else 0.0
                if pt > max_dep:
                    pt = max_dep
                p_target[c] = pt
                lam_p[c] = 0.0
                if rest > 0.0:
                    vn = _vn(b1, b2, r1s[c], r2s[c], nrm, v, w)
                    if vn < -RESTITUTION_THRESHOLD and -rest * vn > tg:
                        tg = -rest * vn
                target[c] = tg
                # anchor in body 2's frame for matching across substeps
                rb = rm[b2]
                for kk in range(3):
                    loc[c, kk] = rb[0, kk] * r2s[c, 0] + rb[1, kk] * r2s[c, 1] + rb[2, kk] * r2s[c, 2]
                lam_n[c] = 0.0
                for j in range(n_prev):
                    if p_h1[j] == c_h1[c] and p_h2[j] == c_h2[c]:
                        e0 = loc[c, 0] - p_loc[j, 0]
                        e1 = loc[c, 1] - p_loc[j, 1]
                        e2 = loc[c, 2] - p_loc[j, 2]
                        if e0 * e0 + e1 * e1 + e2 * e2 < WARM_MATCH_DIST2:
                            lam_n[c] = p_ln[j]
                            break
                _push(b1, -lam_n[c], nrm, r1s[c], v, w, inv_mass, iiw)
                _push(b2, lam_n[c], nrm, r2s[c], v, w, inv_mass, iiw)
            # friction patches
            for m in range(nm):
                c0 = m_start[m]
                c1 = m_start[m + 1]
                b1 = c_b1[c0]
                b2 = c_b2[c0]
                nrm = c_n[c0]
                cnt = c1 - c0
                ce0 = 0.0
                ce1 = 0.0
                ce2 = 0.0
                for c in range(c0, c1):
                    ce0 += c_p[c, 0]
                    ce1 += c_p[c, 1]
                    ce2 += c_p[c, 2]
                ce0 /= cnt
                ce1 /= cnt
                ce2 /= cnt
                rad = 0.0
                for c in range(c0, c1):
                    d0 = c_p[c, 0] - ce0
                    d1 = c_p[c, 1] - ce1
                    d2 = c_p[c, 2] - ce2
                    dn = d0 * nrm[0] + d1 * nrm[1] + d2 * nrm[2]
                    d0 -= dn * nrm[0]
                    d1 -= dn * nrm[1]
                    d2 -= dn * nrm[2]
                    rad += np.sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                m_rad[m] = rad / cnt
                m_r1[m, 0] = ce0 - x[b1, 0] if b1 >= 0 else 0.0
                m_r1[m, 1] = ce1 - x[b1, 1] if b1 >= 0 else 0.0
                m_r1[m, 2] = ce2 - x[b1, 2] if b1 >= 0 else 0.0
                m_r2[m, 0] = ce0 - x[b2, 0]
                m_r2[m, 1] = ce1 - x[b2, 1]
                m_r2[m, 2] = ce2 - x[b2, 2]
                _tangents_into(nrm, m_t1[m], m_t2[m])
                t1 = m_t1[m]
                t2 = m_t2[m]
                k = _body_eff(b1, m_r1[m], t1, inv_mass, iiw) + _body_eff(b2, m_r2[m], t1, inv_mass, iiw)
                m_kt1[m] = 1.0 / k if k > 0.0 else 0.0
                k = _body_eff(b1, m_r1[m], t2, inv_mass, iiw) + _body_eff(b2, m_r2[m], t2, inv_mass, iiw)
                m_kt2[m] = 1.0 / k if k > 0.0 else 0.0
                k = _ang_eff_mass(b1, b2, nrm, iiw)
                m_ktw[m] = 1.0 / k if k > 0.0 else 0.0
                # vn_i = vn_centre + w_rel . (d_i x n), and d_i x n lies in the t1/t2 plane
                for c in range(c0, c1):
                    d0 = c_p[c, 0] - ce0
                    d1 = c_p[c, 1] - ce1
                    d2 = c_p[c, 2] - ce2
                    x0 = d1 * nrm[2] - d2 * nrm[1]
                    x1 = d2 * nrm[0] - d0 * nrm[2]
                    x2 = d0 * nrm[1] - d1 * nrm[0]
                    tau1[c] = x0 * t1[0] + x1 * t1[1] + x2 * t1[2]
                    tau2[c] = x0 * t2[0] + x1 * t2[1] + x2 * t2[2]
                m_blk[m] = False
                c11 = 0.0
                c12 = 0.0
                c22 = 0.0
                for c in range(c0, c1):
                    c11 += tau1[c] * tau1[c]
                    c12 += tau1[c] * tau2[c]
                    c22 += tau2[c] * tau2[c]
                # slivers and near-collinear point sets stay with the per-point solve
                if cnt >= 3 and c11 * c22 - c12 * c12 > BLOCK_SPREAD * (c11 + c22) * (c11 + c22):
                    for i in range(3):
                        for j in range(3):
                            tmp_a[i, j] = 0.0
                    for c in range(c0, c1):
                        row = (1.0, tau1[c], tau2[c])
                        for i in range(3):
                            for j in range(3):
                                tmp_a[i, j] += row[i] * row[j]
                    if _inv3(tmp_a, tmp_b):
                        _patch_mass(b1, b2, m_r1[m], m_r2[m], nrm, t1, t2, inv_mass, iiw, tmp_a)
                        if _inv3(tmp_a, m_ai[m]):
                            m_blk[m] = True
                            for i in range(3):
                                m_us[m, i] = 0.0
                            for c in range(c0, c1):
                                for i in range(3):
                                    coef[c, i] = tmp_b[0, i] + tau1[c] * tmp_b[1, i] + tau2[c] * tmp_b[2, i]
                                    m_us[m, i] += coef[c, i] * target[c]
                m_lt[m, 0] = 0.0
                m_lt[m, 1] = 0.0
                m_ltw[m] = 0.0
                for j in range(nm_prev):
                    if pm_h1[j] == c_h1[c0] and pm_h2[j] == c_h2[c0]:
                        m_lt[m, 0] = _dot(pm_ft[j], t1)
                        m_lt[m, 1] = _dot(pm_ft[j], t2)
                        m_ltw[m] = pm_tw[j]
                        break
                _push(b1, -m_lt[m, 0], t1, m_r1[m], v, w, inv_mass, iiw)
                _push(b2, m_lt[m, 0], t1, m_r2[m], v, w, inv_mass, iiw)
                _push(b1, -m_lt[m, 1], t2, m_r1[m], v, w, inv_mass, iiw)
                _push(b2, m_lt[m, 1], t2, m_r2[m], v, w, inv_mass, iiw)
                _twist(b1, -m_ltw[m], nrm, w, inv_mass, iiw)
                _twist(b2, m_ltw[m], nrm, w, inv_mass, iiw)
            # sequential impulses
            for _it in range(iters):
                for m in range(nm):
                    c0 = m_start[m]
                    c1 = m_start[m + 1]
                    b1 = c_b1[c0]
                    b2 = c_b2[c0]
                    nrm = c_n[c0]
                    total = 0.0
                    for c in range(c0, c1):
                        total += lam_n[c]
                    # tangential friction at the patch centre
                    lim = mu * total
                    old0 = m_lt[m, 0]
                    old1 = m_lt[m, 1]
                    n0 = old0 - m_kt1[m] * _vn(b1, b2, m_r1[m], m_r2[m], m_t1[m], v, w)
                    n1 = old1 - m_kt2[m] * _vn(b1, b2, m_r1[m], m_r2[m], m_t2[m], v, w)
                    mag = np.sqrt(n0 * n0 + n1 * n1)
                    if mag > lim and mag > 0.0:
                        n0 *= lim / mag
                        n1 *= lim / mag
                    m_lt[m, 0] = n0
                    m_lt[m, 1] = n1
                    _push(b1, old0 - n0, m_t1[m], m_r1[m], v, w, inv_mass, iiw)
                    _push(b2, n0 - old0, m_t1[m], m_r2[m], v, w, inv_mass, iiw)
                    _push(b1, old1 - n1, m_t2[m], m_r1[m], v, w, inv_mass, iiw)
                    _push(b2, n1 - old1, m_t2[m], m_r2[m], v, w, inv_mass, iiw)
                    # torsional friction about the normal
                    tlim = lim * m_rad[m]
                    wr = w[b2, 0] * nrm[0] + w[b2, 1] * nrm[1] + w[b2, 2] * nrm[2]
                    if b1 >= 0:
                        wr -= w[b1, 0] * nrm[0] + w[b1, 1] * nrm[1] + w[b1, 2] * nrm[2]
                    old = m_ltw[m]
                    new = old - m_ktw[m] * wr
                    if new > tlim:
                        new = tlim
                    elif new < -tlim:
                        new = -tlim
                    m_ltw[m] = new
                    _twist(b1, old - new, nrm, w, inv_mass, iiw)
                    _twist(b2, new - old, nrm, w, inv_mass, iiw)
                    # whole patch at once, so point order cannot tip the body
                    if m_blk[m]:
                        u0 = m_us[m, 0] - _vn(b1, b2, m_r1[m], m_r2[m], nrm, v, w)
                        u1 = m_us[m, 1]
                        u2 = m_us[m, 2]
                        for kk in range(3):
                            wr = w[b2, kk] if b2 >= 0 else 0.0
                            if b1 >= 0:
                                wr -= w[b1, kk]
                            u1 -= wr * m_t1[m, kk]
                            u2 -= wr * m_t2[m, kk]
                        ai = m_ai[m]
                        p0 = ai[0, 0] * u0 + ai[0, 1] * u1 + ai[0, 2] * u2
                        p1 = ai[1, 0] * u0 + ai[1, 1] * u1 + ai[1, 2] * u2
                        p2 = ai[2, 0] * u0 + ai[2, 1] * u1 + ai[2, 2] * u2
                        ok = True
                        for c in range(c0, c1):
                            if lam_n[c] + coef[c, 0] * p0 + coef[c, 1] * p1 + coef[c, 2] * p2 < 0.0:
                                ok = False
                                break
                        if ok:
                            for c in range(c0, c1):
                                dl = coef[c, 0] * p0 + coef[c, 1] * p1 + coef[c, 2] * p2
                                lam_n[c] += dl
                                _push(b1, -dl, nrm, r1s[c], v, w, inv_mass, iiw)
                                _push(b2, dl, nrm, r2s[c], v, w, inv_mass, iiw)
                            continue
                    # non-penetration per point
                    for c in range(c0, c1):
                        vn = _vn(b1, b2, r1s[c], r2s[c], nrm, v, w)
                        dl = kn[c] * (target[c] - vn)
                        new = lam_n[c] + dl
                        if new < 0.0:
                            new = 0.0
                        dl = new - lam_n[c]
                        lam_n[c] = new
                        _push(b1, -dl, nrm, r1s[c], v, w, inv_mass, iiw)
                        _push(b2, dl, nrm, r2s[c], v, w, inv_mass, iiw)
            # split impulse: pseudo velocities push penetrating bodies apart
            vp[:, :] = 0.0
            wp[:, :] = 0.0
            for _it in range(iters):
                for c in range(nc):
                    if p_target[c] <= 0.0:
                        continue
                    b1 = c_b1[c]
                    b2 = c_b2[c]
                    nrm = c_n[c]
                    new = lam_p[c] + kn[c] * (p_target[c] - _vn(b1, b2, r1s[c], r2s[c], nrm, vp, wp))
                    if new < 0.0:
                        new = 0.0
                    dl = new - lam_p[c]
                    lam_p[c] = new
                    _push(b1, -dl, nrm, r1s[c], vp, wp, inv_mass, iiw)
                    _push(b2, dl, nrm, r2s[c], vp, wp, inv_mass, iiw)
            # cache impulses for the next substep
            for c in range(nc):
                p_h1[c] = c_h1[c]
                p_h2[c] = c_h2[c]
                p_loc[c] = loc[c]
                p_ln[c] = lam_n[c]
            n_prev = nc
            for m in range(nm):
                pm_h1[m] = c_h1[m_start[m]]
                pm_h2[m] = c_h2[m_start[m]]
                for kk in range(3):
                    pm_ft[m, kk] = m_lt[m, 0] * m_t1[m, kk] + m_lt[m, 1] * m_t2[m, kk]
                pm_tw[m] = m_ltw[m]
            nm_prev = nm
            # integrate
            for b in range(nb):
                if not dynamic[b]:
                    continue
                for k in range(3):
                    x[b, k] += h * (v[b, k] + vp[b, k])
                wx = w[b, 0] + wp[b, 0]
                wy = w[b, 1] + wp[b, 1]
                wz = w[b, 2] + wp[b, 2]
                qw, qx, qy, qz = q[b, 0], q[b, 1], q[b, 2], q[b, 3]
                hh = 0.5 * h
                qw, qx, qy, qz = (
                    qw + hh * (-wx * qx - wy * qy - wz * qz),
                    qx + hh * (wx * qw + wy * qz - wz * qy),
                    qy + hh * (wy * qw + wz * qx - wx * qz),
                    qz + hh * (wz * qw + wx * qy - wy * qx),
                )
                nq = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
                q[b, 0] = qw / nq
                q[b, 1] = qx / nq
                q[b, 2] = qy / nq
                q[b, 3] = qz / nq
            for b in range(nb):
                if not dynamic[b]:
                    continue
                ok = True
                for k in range(3):
                    if not (abs(x[b, k]) < DIVERGE_POS and abs(v[b, k]) < DIVERGE_VEL and abs(w[b, k]) < DIVERGE_VEL):
                        ok = False
                for k in range(4):
                    if not np.isfinite(q[b, k]):
                        ok = False
                if not ok:
                    status = STATUS_DIVERGED
                    bad_step = step
                    bad_body = b
                    return probe, final, peak_lin, peak_ang, status, bad_step, bad_body, traj
        for b in range(nb):
            if dynamic[b]:
                sl = np.sqrt(_dot(v[b], v[b]))
                sa = np.sqrt(_dot(w[b], w[b]))
                if sl > peak_lin[b]:
                    peak_lin[b] = sl
                if sa > peak_ang[b]:
                    peak_ang[b] = sa
        if step == tau or step == steps or record:
            snap = np.empty((nb, 13))
            for b in range(nb):
                r = quat_to_mat(q[b])
                snap[b, 0:4] = q[b]
                for k in range(3):
                    snap[b, 4 + k] = x[b, k] - (r[k, 0] * com[b, 0] + r[k, 1] * com[b, 1] + r[k, 2] * com[b, 2])
                snap[b, 7:10] = v[b]
                snap[b, 10:13] = w[b]
            if step == tau:
                probe[:, :] = snap
            if step == steps:
                final[:, :] = snap
            if record:
                traj[step] = snap
    return probe, final, peak_lin, peak_ang, status, bad_step, bad_body, traj


@njit(cache=True)
def intersections(hv, h_vs, h_body, nb, q, t, com, eps):
    """Pairwise object intersections at object-frame poses (q, t).

    Returns (number of intersecting object pairs, per-object participation flags).
    """
    rm = np.empty((nb, 3, 3))
    x = np.empty((nb, 3))
    for b in range(nb):
        rm[b] = quat_to_mat(q[b])
        for k in range(3):
            x[b, k] = t[b, k] + rm[b, k, 0] * com[b, 0] + rm[b, k, 1] * com[b, 1] + rm[b, k, 2] * com[b, 2]
    wv, lo, hi = world_geometry(hv, h_vs, h_body, x, rm)
    nh = h_body.shape[0]
    hit = np.zeros((nb, nb), dtype=np.bool_)
    for h1 in range(nh):
        b1 = h_body[h1]
        for h2 in range(h1 + 1, nh):
            b2 = h_body[h2]
            if b1 == b2 or hit[b1, b2]:
                continue
            if (
                lo[h1, 0] > hi[h2, 0]
                or lo[h2, 0] > hi[h1, 0]
                or lo[h1, 1] > hi[h2, 1]
                or lo[h2, 1] > hi[h1, 1]
                or lo[h1, 2] > hi[h2, 2]
                or lo[h2, 2] > hi[h1, 2]
            ):
                continue
            if intersect_kernel(wv[h_vs[h1] : h_vs[h1 + 1]], wv[h_vs[h2] : h_vs[h2 + 1]], eps):
                hit[b1, b2] = True
                hit[b2, b1] = True
    count = 0
    flags = np.zeros(nb, dtype=np.bool_)
    for i in range(nb):
        for j in range(i + 1, nb):
            if hit[i, j]:
                count += 1
                flags[i] = True
                flags[j] = True
    return count, flags


@njit(cache=True, nogil=True)
def simulate_batch(
    hv, h_vs, h_body, h_fs, f_n, f_vs, f_vi,
    com, inv_mass, inv_inertia, dynamic,
    q0s, t0s, fparams, iparams, eps,
):
    """Settle K candidate configurations and count intersections before and after."""
    kk = q0s.shape[0]
    nb = q0s.shape[1]
    probes = np.zeros((kk, nb, 13))
    finals = np.zeros((kk, nb, 13))
    peaks = np.zeros((kk, nb, 2))
    status = np.zeros(kk, dtype=np.int64)
    pen0 = np.zeros(kk, dtype=np.int64)
    pen1 = np.zeros(kk, dtype=np.int64)
    for i in range(kk):
        probe, final, pl, pa, st, bs, bb, _ = simulate(
            hv, h_vs, h_body, h_fs, f_n, f_vs, f_vi,
            com, inv_mass, inv_inertia, dynamic,
            q0s[i], t0s[i], fparams, iparams, False,
        )
        status[i] = st
        if st != STATUS_OK:
            continue
        probes[i] = probe
        finals[i] = final
        peaks[i, :, 0] = pl
        peaks[i, :, 1] = pa
        pen0[i] = intersections(hv, h_vs, h_body, nb, q0s[i], t0s[i], com, eps)[0]
        pen1[i] = intersections(hv, h_vs, h_body, nb, final[:, 0:4].copy(), final[:, 4:7].copy(), com, eps)[0]
    return probes, finals, peaks, status, pen0, pen1
