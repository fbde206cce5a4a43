"""Compiled inner loops of the soft rasterizer (pair enumeration and edge geometry)."""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _bbox(x, y, f, margin, h, w):
    xmin = min(x[f[0]], x[f[1]], x[f[2]]) - margin
    xmax = max(x[f[0]], x[f[1]], x[f[2]]) + margin
    ymin = min(y[f[0]], y[f[1]], y[f[2]]) - margin
    ymax = max(y[f[0]], y[f[1]], y[f[2]]) + margin
    j0 = max(int(np.ceil((xmin + 1.0) * w / 2.0 - 0.5)), 0)
    j1 = min(int(np.floor((xmax + 1.0) * w / 2.0 - 0.5)), w - 1)
    i0 = max(int(np.ceil((1.0 - ymax) * h / 2.0 - 0.5)), 0)
    i1 = min(int(np.floor((1.0 - ymin) * h / 2.0 - 0.5)), h - 1)
    return i0, i1, j0, j1


@njit(cache=True)
def _near(ax, ay, bx, by, cx, cy, px, py, margin):
    orient = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if orient == 0.0:
        return True
    sgn = 1.0 if orient > 0 else -1.0
    for e in range(3):
        if e == 0:
            ux, uy, vx, vy = ax, ay, bx, by
        elif e == 1:
            ux, uy, vx, vy = bx, by, cx, cy
        else:
            ux, uy, vx, vy = cx, cy, ax, ay
        ex, ey = vx - ux, vy - uy
        length = np.sqrt(ex * ex + ey * ey)
        inward = sgn * (ex * (py - uy) - ey * (px - ux))
        if inward < -margin * length * (1.0 + 1e-9) - 1e-15:
            return False
    return True


@njit(cache=True)
def candidate_pairs(x, y, faces, keep, margin, h, w):
    """(face, row, col) for every kept face and pixel center within
    ``margin`` of the face's edge lines (a superset of the pixels within
    ``margin`` of the triangle)."""
    total = 0
    for n in range(faces.shape[0]):
        if keep[n]:
            i0, i1, j0, j1 = _bbox(x, y, faces[n], margin, h, w)
            if i1 >= i0 and j1 >= j0:
                total += (i1 - i0 + 1) * (j1 - j0 + 1)
    face = np.empty(total, np.int64)
    rows = np.empty(total, np.int64)
    cols = np.empty(total, np.int64)
    m = 0
    for n in range(faces.shape[0]):
        if not keep[n]:
            continue
        f = faces[n]
        i0, i1, j0, j1 = _bbox(x, y, f, margin, h, w)
        ax, ay, bx, by, cx, cy = x[f[0]], y[f[0]], x[f[1]], y[f[1]], x[f[2]], y[f[2]]
        for i in range(i0, i1 + 1):
            py = 1.0 - (2.0 * i + 1.0) / h
            for j in range(j0, j1 + 1):
                px = -1.0 + (2.0 * j + 1.0) / w
                if _near(ax, ay, bx, by, cx, cy, px, py, margin):
                    face[m] = n
                    rows[m] = i
                    cols[m] = j
                    m += 1
    return face[:m], rows[:m], cols[:m]


@njit(cache=True)
def edge_geometry(x, y, tri, px, py):
    """Signed distance of each pixel to its triangle plus what the backward
    pass needs: nearest edge k, its segment parameter t, the residual
    (pixel minus closest point) and the sign."""
    p = tri.shape[0]
    sd = np.empty(p)
    kk = np.empty(p, np.int64)
    tt = np.empty(p)
    rx = np.empty(p)
    ry = np.empty(p)
    sg = np.empty(p)
    for n in range(p):
        c0, c1, c2 = tri[n, 0], tri[n, 1], tri[n, 2]
        vx = (x[c0], x[c1], x[c2])
        vy = (y[c0], y[c1], y[c2])
        orient = (vx[1] - vx[0]) * (vy[2] - vy[0]) - (vy[1] - vy[0]) * (vx[2] - vx[0])
        osg = 0.0 if orient == 0.0 else (1.0 if orient > 0 else -1.0)
        inside = osg != 0.0
        best = np.inf
        for e in range(3):
            e2 = (e + 1) % 3
            ex, ey = vx[e2] - vx[e], vy[e2] - vy[e]
            wx, wy = px[n] - vx[e], py[n] - vy[e]
            len2 = ex * ex + ey * ey + 1e-30
            t = min(max((wx * ex + wy * ey) / len2, 0.0), 1.0)
            qx, qy = wx - t * ex, wy - t * ey
            d2 = qx * qx + qy * qy
            if d2 < best:
                best = d2
                kk[n] = e
                tt[n] = t
                rx[n] = qx
                ry[n] = qy
            if (ex * wy - ey * wx) * osg < 0.0:
                inside = False
        s = 1.0 if inside else -1.0
        sg[n] = s
        sd[n] = s * np.sqrt(best + 1e-20)
    return sd, kk, tt, rx, ry, sg


@njit(cache=True)
def segment_min(values, ids, out):
    for n in range(values.shape[0]):
        if values[n] < out[ids[n]]:
            out[ids[n]] = values[n]
    return out


@njit(cache=True)
def accumulate_forward(sd, depth, normal, pix, npix, shift, temperature, depth_temperature, sp_cut, sig_cut):
    """Per-pixel [coverage sum, weight sum, weighted normal (3)] and the
    per-pair quantities the backward pass reuses."""
    p = sd.shape[0]
    out = np.zeros((npix, 5))
    sig = np.empty(p)
    near = np.empty(p)
    wgt = np.empty(p)
    on_a = np.empty(p, np.bool_)
    for n in range(p):
        z = sd[n] / temperature
        if z >= 0:
            e = np.exp(-z)
            s = 1.0 / (1.0 + e)
            sp = z + np.log1p(e)
        else:
            e = np.exp(z)
            s = e / (1.0 + e)
            sp = np.log1p(e)
        sig[n] = s
        q = pix[n]
        a = sp - sp_cut
        on_a[n] = a > 0
        if a > 0:
            out[q, 0] += a
        c = s - sig_cut
        nr = np.exp(-(depth[n] - shift[q]) / depth_temperature)
        near[n] = nr
        w = c * nr if c > 0 else 0.0
        wgt[n] = w
        out[q, 1] += w
        out[q, 2] += w * normal[n, 0]
        out[q, 3] += w * normal[n, 1]
        out[q, 4] += w * normal[n, 2]
    return out, sig, near, wgt, on_a


@njit(cache=True)
def accumulate_backward(g, pix, normal, sig, near, wgt, on_a, temperature, depth_temperature, sig_cut):
    p = pix.shape[0]
    g_sd = np.empty(p)
    g_depth = np.empty(p)
    g_normal = np.empty((p, 3))
    for n in range(p):
        q = pix[n]
        gw = g[q, 1] + g[q, 2] * normal[n, 0] + g[q, 3] * normal[n, 1] + g[q, 4] * normal[n, 2]
        s = sig[n]
        v = g[q, 0] * s if on_a[n] else 0.0
        if s - sig_cut > 0:
            v += gw * near[n] * s * (1.0 - s)
        g_sd[n] = v / temperature
        g_depth[n] = -gw * wgt[n] / depth_temperature
        g_normal[n, 0] = g[q, 2] * wgt[n]
        g_normal[n, 1] = g[q, 3] * wgt[n]
        g_normal[n, 2] = g[q, 4] * wgt[n]
    return g_sd, g_depth, g_normal
