"""Numba-accelerated cell pipeline for the crowd/quantization modes.

Same mathematics as geometry.build_power_diagram + clip_with_disk +
moments_about, but in one pass over flat arrays: for every cell the piece
bounding box is clipped by the neighbor half-planes and the violated piece
edges, then each polygon edge contributes its closed-form disk-clipped
moments (signed triangle-with-apex decomposition).  Tests cross-validate
this path against the reference implementation to roundoff.

This module is optional: when numba is missing the solver silently uses the
reference path.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _clip_hp(vx, vy, vt, cnt, nx, ny, c, newtag, ox, oy, ot):
    """Clip polygon buffer (vx, vy, vt)[:cnt] by {n.x <= c} into (ox, oy, ot).

    Returns the new vertex count, or -1 on buffer overflow.
    """
    m = 0
    cap = ox.shape[0]
    for i in range(cnt):
        j = i + 1 if i + 1 < cnt else 0
        di = nx * vx[i] + ny * vy[i] - c
        dj = nx * vx[j] + ny * vy[j] - c
        if di <= 0.0:
            if m >= cap:
                return -1
            ox[m] = vx[i]
            oy[m] = vy[i]
            ot[m] = vt[i]
            m += 1
            if dj > 0.0:
                if m >= cap:
                    return -1
                s = di / (di - dj)
                ox[m] = vx[i] + s * (vx[j] - vx[i])
                oy[m] = vy[i] + s * (vy[j] - vy[i])
                ot[m] = newtag
                m += 1
        elif dj <= 0.0:
            if m >= cap:
                return -1
            s = di / (di - dj)
            ox[m] = vx[i] + s * (vx[j] - vx[i])
            oy[m] = vy[i] + s * (vy[j] - vy[i])
            ot[m] = vt[i]
            m += 1
    if m < 3:
        return 0
    return m


@njit(cache=True)
def _cell_pipeline(
    pts,
    psi,
    radii,
    hidden,
    indptr,
    indices,
    piece_ptr,
    piece_nx,
    piece_ny,
    piece_off,
    piece_bbox,
    mass,
    m1,
    m2,
    areas,
    arc_term,
    facet_w,
    overflow,
):
    """Fill mass/m1/m2 (disk-clipped, about x_i), unclipped cell areas,
    arc_term = |dB cap L_i|/(2 r_i) and facet_w (in-disk facet length over
    (2 |x_i - x_j|), aligned with the CSR indices)."""
    n = pts.shape[0]
    npieces = piece_bbox.shape[0]
    cap = 8
    for p in range(npieces):
        cap = cap + (piece_ptr[p + 1] - piece_ptr[p])
    maxdeg = 0
    for i in range(n):
        d = indptr[i + 1] - indptr[i]
        if d > maxdeg:
            maxdeg = d
    cap = cap + maxdeg + 8
    vx = np.empty(cap)
    vy = np.empty(cap)
    vt = np.empty(cap, dtype=np.int64)
    wx = np.empty(cap)
    wy = np.empty(cap)
    wt = np.empty(cap, dtype=np.int64)

    for i in range(n):
        if hidden[i]:
            continue  # empty full-plane Laguerre cell
        xi = pts[i, 0]
        yi = pts[i, 1]
        sqi = xi * xi + yi * yi - psi[i]
        r = radii[i]
        r2 = r * r
        for p in range(npieces):
            # seed with the piece bounding box (domain-tagged edges)
            x0 = piece_bbox[p, 0]
            y0 = piece_bbox[p, 1]
            x1 = piece_bbox[p, 2]
            y1 = piece_bbox[p, 3]
            vx[0] = x0
            vy[0] = y0
            vx[1] = x1
            vy[1] = y0
            vx[2] = x1
            vy[2] = y1
            vx[3] = x0
            vy[3] = y1
            for k in range(4):
                vt[k] = -1
            cnt = 4
            use_w = False
            for kk in range(indptr[i], indptr[i + 1]):
                j = indices[kk]
                nx = 2.0 * (pts[j, 0] - xi)
                ny = 2.0 * (pts[j, 1] - yi)
                c = pts[j, 0] * pts[j, 0] + pts[j, 1] * pts[j, 1] - psi[j] - sqi
                if use_w:
                    cnt = _clip_hp(wx, wy, wt, cnt, nx, ny, c, j, vx, vy, vt)
                else:
                    cnt = _clip_hp(vx, vy, vt, cnt, nx, ny, c, j, wx, wy, wt)
                use_w = not use_w
                if cnt <= 0:
                    break
            if cnt < 0:
                overflow[i] = True
                break
            if cnt == 0:
                continue
            # clip against the piece edges the polygon violates
            for e in range(piece_ptr[p], piece_ptr[p + 1]):
                nx = piece_nx[e]
                ny = piece_ny[e]
                c = piece_off[e]
                viol = False
                if use_w:
                    for k in range(cnt):
                        if nx * wx[k] + ny * wy[k] > c + 1e-12 * (abs(c) + 1.0):
                            viol = True
                            break
                else:
                    for k in range(cnt):
                        if nx * vx[k] + ny * vy[k] > c + 1e-12 * (abs(c) + 1.0):
                            viol = True
                            break
                if not viol:
                    continue
                if use_w:
                    cnt = _clip_hp(wx, wy, wt, cnt, nx, ny, c, -1, vx, vy, vt)
                else:
                    cnt = _clip_hp(vx, vy, vt, cnt, nx, ny, c, -1, wx, wy, wt)
                use_w = not use_w
                if cnt <= 0:
                    break
            if cnt < 0:
                overflow[i] = True
                break
            if cnt == 0:
                continue
            if use_w:
                for k in range(cnt):
                    vx[k] = wx[k]
                    vy[k] = wy[k]
                    vt[k] = wt[k]
            # accumulate moments of (polygon cap disk) about x_i, edge by edge
            for k in range(cnt):
                kq = k + 1 if k + 1 < cnt else 0
                ax = vx[k] - xi
                ay = vy[k] - yi
                bx = vx[kq] - xi
                by = vy[kq] - yi
                cross = ax * by - ay * bx
                areas[i] += 0.5 * cross
                ex = bx - ax
                ey = by - ay
                ee = ex * ex + ey * ey
                if ee <= 0.0:
                    continue
                da = ax * ax + ay * ay
                db = bx * bx + by * by
                # intersection params with the circle |z| = r
                bb = 2.0 * (ax * ex + ay * ey)
                cc = da - r2
                disc = bb * bb - 4.0 * ee * cc
                t1 = 0.0
                t2 = 0.0
                if disc > 0.0:
                    sd = math.sqrt(disc)
                    t1 = (-bb - sd) / (2.0 * ee)
                    t2 = (-bb + sd) / (2.0 * ee)
                # walk subsegments between breakpoints inside [0, 1]
                s_prev = 0.0
                px = ax
                py = ay
                in_len = 0.0
                for part in range(3):
                    if part == 0:
                        s_next = t1 if (disc > 0.0 and t1 > 0.0 and t1 < 1.0) else -1.0
                    elif part == 1:
                        s_next = t2 if (disc > 0.0 and t2 > s_prev and t2 < 1.0) else -1.0
                    else:
                        s_next = 1.0
                    if s_next < 0.0:
                        continue
                    qx = ax + s_next * ex
                    qy = ay + s_next * ey
                    if s_next > s_prev:
                        smid = 0.5 * (s_prev + s_next)
                        mx = ax + smid * ex
                        my = ay + smid * ey
                        if mx * mx + my * my <= r2:
                            # inside chord: triangle (0, p, q)
                            cr = px * qy - py * qx
                            mass[i] += 0.5 * cr
                            m1[i, 0] += cr * (px + qx) / 6.0
                            m1[i, 1] += cr * (py + qy) / 6.0
                            m2[i] += cr * (px * px + py * py + qx * qx + qy * qy + px * qx + py * qy) / 12.0
                            in_len += (s_next - s_prev) * math.sqrt(ee)
                        else:
                            # outside: signed circular sector from p to q
                            dth = math.atan2(px * qy - py * qx, px * qx + py * qy)
                            mass[i] += 0.5 * r2 * dth
                            tp = math.atan2(py, px)
                            tq = math.atan2(qy, qx)
                            m1[i, 0] += (r2 * r / 3.0) * (math.sin(tq) - math.sin(tp))
                            m1[i, 1] += (r2 * r / 3.0) * (math.cos(tp) - math.cos(tq))
                            m2[i] += 0.25 * r2 * r2 * dth
                            arc_term[i] += dth
                    s_prev = s_next
                    px = ax + s_prev * ex
                    py = ay + s_prev * ey
                    if s_prev >= 1.0:
                        break
                tag = vt[k]
                if tag >= 0 and in_len > 0.0:
                    dx = pts[tag, 0] - xi
                    dy = pts[tag, 1] - yi
                    dij = math.sqrt(dx * dx + dy * dy)
                    for kk in range(indptr[i], indptr[i + 1]):
                        if indices[kk] == tag:
                            facet_w[kk] += in_len / (2.0 * dij)
                            break


def crowd_summaries(pts, psi, radii, hidden, indptr, indices, piece_ptr, piece_nx, piece_ny, piece_off, piece_bbox):
    """Run the jit pipeline; returns the flat result arrays plus overflow mask."""
    n = len(pts)
    mass = np.zeros(n)
    m1 = np.zeros((n, 2))
    m2 = np.zeros(n)
    areas = np.zeros(n)
    arc_term = np.zeros(n)
    facet_w = np.zeros(len(indices))
    overflow = np.zeros(n, dtype=np.bool_)
    _cell_pipeline(
        pts,
        psi,
        radii,
        hidden,
        indptr,
        indices,
        piece_ptr,
        piece_nx,
        piece_ny,
        piece_off,
        piece_bbox,
        mass,
        m1,
        m2,
        areas,
        arc_term,
        facet_w,
        overflow,
    )
    return mass, m1, m2, areas, arc_term, facet_w, overflow
