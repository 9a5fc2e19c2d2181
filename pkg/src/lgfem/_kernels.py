"""Numba kernels for the exact composite-term assembly and point location.

Everything here works on flat arrays prepared by :mod:`lgfem.transport`.
Element loops run in ascending id order and accumulate sequentially, so
assembled vectors are bitwise reproducible run to run.
"""

import numpy as np
from numba import njit

# fold detection threshold for det(I - dt * grad w)
DET_EPS = 1e-10
# scratch sizes: clipped polygons have at most 6 + a few degenerate vertices
MAXV = 16
MAXC = 2048


@njit(cache=True, inline="always")
def _p2(l1, l2, l3, out):
    out[0] = l1 * (2.0 * l1 - 1.0)
    out[1] = l2 * (2.0 * l2 - 1.0)
    out[2] = l3 * (2.0 * l3 - 1.0)
    out[3] = 4.0 * l1 * l2
    out[4] = 4.0 * l2 * l3
    out[5] = 4.0 * l3 * l1


@njit(cache=True, inline="always")
def _poly_area(poly, n):
    s = 0.0
    for i in range(n):
        j = i + 1
        if j == n:
            j = 0
        s += poly[i, 0] * poly[j, 1] - poly[j, 0] * poly[i, 1]
    return 0.5 * s


@njit(cache=True)
def _isort(a, n):
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


@njit(cache=True)
def clip_halfplane(src, ns, ax, ay, bx, by, side, dst):
    """Clip polygon against the half-plane side*cross(b-a, p-a) >= 0."""
    nd = 0
    ex = bx - ax
    ey = by - ay
    px = src[ns - 1, 0]
    py = src[ns - 1, 1]
    dprev = side * (ex * (py - ay) - ey * (px - ax))
    for i in range(ns):
        cx = src[i, 0]
        cy = src[i, 1]
        dcur = side * (ex * (cy - ay) - ey * (cx - ax))
        if dcur >= 0.0:
            if dprev < 0.0:
                t = dprev / (dprev - dcur)
                dst[nd, 0] = px + t * (cx - px)
                dst[nd, 1] = py + t * (cy - py)
                nd += 1
            dst[nd, 0] = cx
            dst[nd, 1] = cy
            nd += 1
        elif dprev >= 0.0:
            t = dprev / (dprev - dcur)
            dst[nd, 0] = px + t * (cx - px)
            dst[nd, 1] = py + t * (cy - py)
            nd += 1
        px = cx
        py = cy
        dprev = dcur
    return nd


@njit(cache=True)
def clip_tri_tri(sub, clip, bufa, bufb):
    """Intersection of CCW triangles; result left in bufa, count returned."""
    for i in range(3):
        bufa[i, 0] = sub[i, 0]
        bufa[i, 1] = sub[i, 1]
    n = 3
    for e in range(3):
        ax = clip[e, 0]
        ay = clip[e, 1]
        f = e + 1
        if f == 3:
            f = 0
        n = clip_halfplane(bufa, n, ax, ay, clip[f, 0], clip[f, 1], 1.0, bufb)
        if n < 3:
            return 0
        for i in range(n):
            bufa[i, 0] = bufb[i, 0]
            bufa[i, 1] = bufb[i, 1]
    return n


@njit(cache=True)
def locate(x, y, ox, oy, icx, icy, gnx, gny, bptr, bitems,
           lam_const, lam_grad, eps):
    """Lowest-id element containing (x, y), or -1; also the barycentrics."""
    ix = int((x - ox) * icx)
    iy = int((y - oy) * icy)
    if ix < 0:
        ix = 0
    elif ix >= gnx:
        ix = gnx - 1
    if iy < 0:
        iy = 0
    elif iy >= gny:
        iy = gny - 1
    b = ix * gny + iy
    for ii in range(bptr[b], bptr[b + 1]):
        k = bitems[ii]
        l1 = lam_const[k, 0] + lam_grad[k, 0, 0] * x + lam_grad[k, 0, 1] * y
        if l1 < -eps:
            continue
        l2 = lam_const[k, 1] + lam_grad[k, 1, 0] * x + lam_grad[k, 1, 1] * y
        if l2 < -eps:
            continue
        l3 = lam_const[k, 2] + lam_grad[k, 2, 0] * x + lam_grad[k, 2, 1] * y
        if l3 < -eps:
            continue
        return k, l1, l2, l3
    return -1, 0.0, 0.0, 0.0


@njit(cache=True)
def nearest_on_polygon(poly, x, y):
    """Closest point on the closed polygon boundary to (x, y)."""
    m = poly.shape[0]
    best = 1e300
    bx = poly[0, 0]
    by = poly[0, 1]
    for i in range(m):
        j = i + 1
        if j == m:
            j = 0
        ax = poly[i, 0]
        ay = poly[i, 1]
        dx = poly[j, 0] - ax
        dy = poly[j, 1] - ay
        l2 = dx * dx + dy * dy
        if l2 <= 0.0:
            continue
        t = ((x - ax) * dx + (y - ay) * dy) / l2
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        px = ax + t * dx
        py = ay + t * dy
        d = (x - px) * (x - px) + (y - py) * (y - py)
        if d < best:
            best = d
            bx = px
            by = py
    return bx, by


@njit(cache=True)
def _integrate_pullback_polygon(
        k, k2_fixed, poly, npoly, a00, a01, a10, a11, b0, b1, det,
        lam_const, lam_grad, elem_nodes, U, qb, qw,
        ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly, loc_eps,
        extend, bufq, n1, n2, local):
    """Pull an image-space polygon back into element k and integrate.

    With ``extend`` false the composed velocity is read from the single
    element ``k2_fixed`` (exact path).  With ``extend`` true each mapped
    point is projected to the nearest domain-boundary point and the velocity
    is looked up there (out-of-domain extension).  Returns the pulled-back
    area and the number of extension evaluations.
    """
    inv00 = a11 / det
    inv01 = -a01 / det
    inv10 = -a10 / det
    inv11 = a00 / det
    cx = 0.0
    cy = 0.0
    for i in range(npoly):
        dx = poly[i, 0] - b0
        dy = poly[i, 1] - b1
        bufq[i, 0] = inv00 * dx + inv01 * dy
        bufq[i, 1] = inv10 * dx + inv11 * dy
        cx += bufq[i, 0]
        cy += bufq[i, 1]
    cx /= npoly
    cy /= npoly

    nq = qw.shape[0]
    covered = 0.0
    n_ext = 0
    for i in range(npoly):
        j = i + 1
        if j == npoly:
            j = 0
        vx = bufq[i, 0]
        vy = bufq[i, 1]
        wx = bufq[j, 0]
        wy = bufq[j, 1]
        sub = 0.5 * ((vx - cx) * (wy - cy) - (vy - cy) * (wx - cx))
        covered += sub
        if sub <= 0.0:
            continue
        for q in range(nq):
            x = qb[q, 0] * cx + qb[q, 1] * vx + qb[q, 2] * wx
            y = qb[q, 0] * cy + qb[q, 1] * vy + qb[q, 2] * wy
            # basis of element k at the pulled-back point
            l1 = lam_const[k, 0] + lam_grad[k, 0, 0] * x + lam_grad[k, 0, 1] * y
            l2 = lam_const[k, 1] + lam_grad[k, 1, 0] * x + lam_grad[k, 1, 1] * y
            l3 = lam_const[k, 2] + lam_grad[k, 2, 0] * x + lam_grad[k, 2, 1] * y
            _p2(l1, l2, l3, n1)
            # the mapped point and the element the velocity is read from
            mx = a00 * x + a01 * y + b0
            my = a10 * x + a11 * y + b1
            if extend:
                px, py = nearest_on_polygon(dom_poly, mx, my)
                k2, m1, m2, m3 = locate(px, py, ox, oy, icx, icy, gnx, gny,
                                        bptr, bitems, lam_const, lam_grad,
                                        loc_eps)
                if k2 < 0:
                    continue
                n_ext += 1
            else:
                k2 = k2_fixed
                m1 = lam_const[k2, 0] + lam_grad[k2, 0, 0] * mx \
                    + lam_grad[k2, 0, 1] * my
                m2 = lam_const[k2, 1] + lam_grad[k2, 1, 0] * mx \
                    + lam_grad[k2, 1, 1] * my
                m3 = lam_const[k2, 2] + lam_grad[k2, 2, 0] * mx \
                    + lam_grad[k2, 2, 1] * my
            _p2(m1, m2, m3, n2)
            u0 = 0.0
            u1 = 0.0
            for a in range(6):
                node = elem_nodes[k2, a]
                u0 += U[node, 0] * n2[a]
                u1 += U[node, 1] * n2[a]
            s = sub * qw[q]
            for a in range(6):
                local[a, 0] += s * u0 * n1[a]
                local[a, 1] += s * u1 * n1[a]
    return covered, n_ext


@njit(cache=True)
def composite_element(
        k, amat, boff, det, img,
        tri_pts, areas, lam_const, lam_grad, elem_nodes, U, qb, qw,
        ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly, loc_eps,
        visited, gen, cand, bufa, bufb, bufc, bufq, n1, n2, local):
    """Exact composite load for one element and one affine map.

    Intersects the image triangle with every overlapping mesh element, pulls
    each intersection back, and integrates with the supplied rule.  The part
    of the image not covered by the mesh (if any) is integrated against the
    nearest-boundary-point extension of the velocity.  Returns the covered
    area fraction of |K| and the number of extension evaluations.
    """
    xmin = min(img[0, 0], min(img[1, 0], img[2, 0]))
    xmax = max(img[0, 0], max(img[1, 0], img[2, 0]))
    ymin = min(img[0, 1], min(img[1, 1], img[2, 1]))
    ymax = max(img[0, 1], max(img[1, 1], img[2, 1]))
    ix0 = int((xmin - ox) * icx)
    ix1 = int((xmax - ox) * icx)
    iy0 = int((ymin - oy) * icy)
    iy1 = int((ymax - oy) * icy)
    if ix0 < 0:
        ix0 = 0
    if iy0 < 0:
        iy0 = 0
    if ix1 >= gnx:
        ix1 = gnx - 1
    if iy1 >= gny:
        iy1 = gny - 1

    ncand = 0
    overflow = ix0 > ix1 or iy0 > iy1
    for ix in range(ix0, ix1 + 1):
        for iy in range(iy0, iy1 + 1):
            b = ix * gny + iy
            for ii in range(bptr[b], bptr[b + 1]):
                k2 = bitems[ii]
                if visited[k2] == gen:
                    continue
                visited[k2] = gen
                if ncand == MAXC:
                    overflow = True
                else:
                    cand[ncand] = k2
                    ncand += 1
    if overflow:
        ncand = tri_pts.shape[0]

    a00 = amat[0, 0]
    a01 = amat[0, 1]
    a10 = amat[1, 0]
    a11 = amat[1, 1]
    b0 = boff[0]
    b1 = boff[1]
    if not overflow:
        _isort(cand, ncand)

    covered = 0.0
    n_ext = 0
    for c in range(ncand):
        k2 = c if overflow else cand[c]
        n = clip_tri_tri(img, tri_pts[k2], bufa, bufb)
        if n < 3:
            continue
        if abs(_poly_area(bufa, n)) <= 1e-15 * (areas[k2] + det * areas[k]):
            continue
        cov, _ = _integrate_pullback_polygon(
            k, k2, bufa, n, a00, a01, a10, a11, b0, b1, det,
            lam_const, lam_grad, elem_nodes, U, qb, qw,
            ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly, loc_eps,
            False, bufq, n1, n2, local)
        covered += cov

    if covered < areas[k] * (1.0 - 1e-8) and dom_poly.shape[0] >= 3:
        # image left the domain: peel off the out-of-domain pieces by
        # clipping against the domain corner polygon, half-plane by
        # half-plane, and integrate them with the boundary extension
        for i in range(3):
            bufc[i, 0] = img[i, 0]
            bufc[i, 1] = img[i, 1]
        ncur = 3
        m = dom_poly.shape[0]
        for e in range(m):
            f = e + 1
            if f == m:
                f = 0
            ax = dom_poly[e, 0]
            ay = dom_poly[e, 1]
            bx = dom_poly[f, 0]
            by = dom_poly[f, 1]
            npiece = clip_halfplane(bufc, ncur, ax, ay, bx, by, -1.0, bufa)
            if npiece >= 3 and abs(_poly_area(bufa, npiece)) \
                    > 1e-15 * det * areas[k]:
                cov, ne = _integrate_pullback_polygon(
                    k, -1, bufa, npiece, a00, a01, a10, a11, b0, b1, det,
                    lam_const, lam_grad, elem_nodes, U, qb, qw,
                    ox, oy, icx, icy, gnx, gny, bptr, bitems,
                    dom_poly, loc_eps, True, bufq, n1, n2, local)
                covered += cov
                n_ext += ne
            ncur = clip_halfplane(bufc, ncur, ax, ay, bx, by, 1.0, bufb)
            if ncur < 3:
                break
            for i in range(ncur):
                bufc[i, 0] = bufb[i, 0]
                bufc[i, 1] = bufb[i, 1]
    return covered, n_ext


@njit(cache=True)
def assemble_composite_exact(
        tris, tri_pts, areas, lam_const, lam_grad, elem_nodes,
        w_verts, U, dt, qb, qw,
        ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly, loc_eps,
        rhs, deficit):
    """Exact composite load vector for every element.

    ``w_verts`` is the per-vertex transport velocity (the linear interpolant
    of the previous velocity); ``U`` the previous velocity at all quadratic
    nodes.  Fills ``rhs`` (n_nodes, 2) and per-element deficit flags; returns
    ``(status, element, det, n_extension_points)`` where status 1 flags a
    folded map.
    """
    ne = tris.shape[0]
    cand = np.empty(MAXC, dtype=np.int64)
    visited = np.full(tri_pts.shape[0], -1, dtype=np.int64)
    bufa = np.empty((MAXV, 2))
    bufb = np.empty((MAXV, 2))
    bufc = np.empty((MAXV, 2))
    bufq = np.empty((MAXV, 2))
    n1 = np.empty(6)
    n2 = np.empty(6)
    local = np.empty((6, 2))
    amat = np.empty((2, 2))
    boff = np.empty(2)
    img = np.empty((3, 2))
    total_ext = 0

    for k in range(ne):
        g00 = 0.0
        g01 = 0.0
        g10 = 0.0
        g11 = 0.0
        for i in range(3):
            v = tris[k, i]
            g00 += w_verts[v, 0] * lam_grad[k, i, 0]
            g01 += w_verts[v, 0] * lam_grad[k, i, 1]
            g10 += w_verts[v, 1] * lam_grad[k, i, 0]
            g11 += w_verts[v, 1] * lam_grad[k, i, 1]
        amat[0, 0] = 1.0 - dt * g00
        amat[0, 1] = -dt * g01
        amat[1, 0] = -dt * g10
        amat[1, 1] = 1.0 - dt * g11
        det = amat[0, 0] * amat[1, 1] - amat[0, 1] * amat[1, 0]
        if det < DET_EPS:
            return 1, k, det, total_ext
        for i in range(3):
            v = tris[k, i]
            img[i, 0] = tri_pts[k, i, 0] - dt * w_verts[v, 0]
            img[i, 1] = tri_pts[k, i, 1] - dt * w_verts[v, 1]
        boff[0] = img[0, 0] - amat[0, 0] * tri_pts[k, 0, 0] \
            - amat[0, 1] * tri_pts[k, 0, 1]
        boff[1] = img[0, 1] - amat[1, 0] * tri_pts[k, 0, 0] \
            - amat[1, 1] * tri_pts[k, 0, 1]

        local[:] = 0.0
        covered, n_ext = composite_element(
            k, amat, boff, det, img,
            tri_pts, areas, lam_const, lam_grad, elem_nodes, U, qb, qw,
            ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly, loc_eps,
            visited, k, cand, bufa, bufb, bufc, bufq, n1, n2, local)
        total_ext += n_ext
        if covered < areas[k] * (1.0 - 1e-8):
            deficit[k] = 1
        for a in range(6):
            node = elem_nodes[k, a]
            rhs[node, 0] += local[a, 0]
            rhs[node, 1] += local[a, 1]
    return 0, -1, 0.0, total_ext


@njit(cache=True)
def composite_element_quadrature(
        k, tri_pts, areas, lam_const, lam_grad, elem_nodes, U, W, dt,
        qb, qw, ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly,
        loc_eps, n1, n2, local):
    """Conventional quadrature-based composite load for one element.

    The transporting velocity W is evaluated as the full quadratic field, so
    the mapped points trace a curved triangle; the integral is inexact by
    design.  Mapped points outside the domain are projected to the nearest
    boundary point.  Returns the number of projected points.
    """
    nq = qw.shape[0]
    n_out = 0
    for q in range(nq):
        l1 = qb[q, 0]
        l2 = qb[q, 1]
        l3 = qb[q, 2]
        x = l1 * tri_pts[k, 0, 0] + l2 * tri_pts[k, 1, 0] + l3 * tri_pts[k, 2, 0]
        y = l1 * tri_pts[k, 0, 1] + l2 * tri_pts[k, 1, 1] + l3 * tri_pts[k, 2, 1]
        _p2(l1, l2, l3, n1)
        w0 = 0.0
        w1 = 0.0
        for a in range(6):
            node = elem_nodes[k, a]
            w0 += W[node, 0] * n1[a]
            w1 += W[node, 1] * n1[a]
        mx = x - dt * w0
        my = y - dt * w1
        k2, m1, m2, m3 = locate(mx, my, ox, oy, icx, icy, gnx, gny,
                                bptr, bitems, lam_const, lam_grad, loc_eps)
        if k2 < 0:
            if dom_poly.shape[0] >= 3:
                mx, my = nearest_on_polygon(dom_poly, mx, my)
            k2, m1, m2, m3 = locate(mx, my, ox, oy, icx, icy, gnx, gny,
                                    bptr, bitems, lam_const, lam_grad,
                                    loc_eps)
            n_out += 1
            if k2 < 0:
                continue
        _p2(m1, m2, m3, n2)
        u0 = 0.0
        u1 = 0.0
        for a in range(6):
            node = elem_nodes[k2, a]
            u0 += U[node, 0] * n2[a]
            u1 += U[node, 1] * n2[a]
        s = areas[k] * qw[q]
        for a in range(6):
            local[a, 0] += s * u0 * n1[a]
            local[a, 1] += s * u1 * n1[a]
    return n_out


@njit(cache=True)
def assemble_composite_quadrature(
        tri_pts, areas, lam_const, lam_grad, elem_nodes, U, W, dt,
        qb, qw, ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly,
        loc_eps, rhs):
    """Quadrature-mode composite load for every element (demonstration)."""
    ne = tri_pts.shape[0]
    n1 = np.empty(6)
    n2 = np.empty(6)
    local = np.empty((6, 2))
    total_out = 0
    for k in range(ne):
        local[:] = 0.0
        total_out += composite_element_quadrature(
            k, tri_pts, areas, lam_const, lam_grad, elem_nodes, U, W, dt,
            qb, qw, ox, oy, icx, icy, gnx, gny, bptr, bitems, dom_poly,
            loc_eps, n1, n2, local)
        for a in range(6):
            node = elem_nodes[k, a]
            rhs[node, 0] += local[a, 0]
            rhs[node, 1] += local[a, 1]
    return total_out
