"""Per-neighborhood covariance and closed-form symmetric 3x3 eigenvalues.

The trigonometric formula alone loses about half the digits when two
eigenvalues coincide (acos is ill-conditioned near +-1). So only the
isolated eigenvalue is taken from it; its eigenvector comes from cross
products of rows of (C - lambda I), and the remaining pair is solved
exactly as the 2x2 block of C on the orthogonal complement.
"""
import math

import numpy as np

from .._accel import njit

_TWO_PI_3 = 2.0 * math.pi / 3.0


def _trig_roots(c00, c01, c02, c11, c12, c22):
    q = (c00 + c11 + c22) / 3.0
    p1 = c01 * c01 + c02 * c02 + c12 * c12
    d0, d1, d2 = c00 - q, c11 - q, c22 - q
    p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    b00, b11, b22 = d0 / safe_p, d1 / safe_p, d2 / safe_p
    b01, b02, b12 = c01 / safe_p, c02 / safe_p, c12 / safe_p
    det = (b00 * (b11 * b22 - b12 * b12)
           - b01 * (b01 * b22 - b12 * b02)
           + b02 * (b01 * b12 - b11 * b02))
    r = np.clip(det / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + _TWO_PI_3)
    e2 = 3.0 * q - e1 - e3
    return q, p, e1, e2, e3


def sym3_eigenvalues_numpy(c00, c01, c02, c11, c12, c22):
    """Eigenvalues of a batch of symmetric 3x3 matrices.

    Inputs are the six unique entries as equal-shape arrays. Returns an
    ``(..., 3)`` array sorted descending, with round-off negatives clamped to 0.
    """
    c00, c01, c02, c11, c12, c22 = (np.asarray(a, dtype=np.float64) for a in (c00, c01, c02, c11, c12, c22))
    q, p, e1, e2, e3 = _trig_roots(c00, c01, c02, c11, c12, c22)
    lam = np.where(e1 - e2 >= e2 - e3, e1, e3)

    # rows of C - lam I and their pairwise cross products
    a00, a11, a22 = c00 - lam, c11 - lam, c22 - lam
    r0 = np.stack([a00, c01, c02], axis=-1)
    r1 = np.stack([c01, a11, c12], axis=-1)
    r2 = np.stack([c02, c12, a22], axis=-1)
    cands = np.stack([np.cross(r0, r1), np.cross(r0, r2), np.cross(r1, r2)], axis=-2)
    norms = np.einsum("...ij,...ij->...i", cands, cands)
    best = np.argmax(norms, axis=-1)
    v = np.take_along_axis(cands, best[..., None, None], axis=-2)[..., 0, :]
    vn = np.sqrt(np.take_along_axis(norms, best[..., None], axis=-1))
    ok = (vn[..., 0] > 0.0) & (p > 0.0)
    v = v / np.where(vn > 0.0, vn, 1.0)

    # orthonormal complement: cross with the axis least aligned with v
    axis = np.argmin(np.abs(v), axis=-1)
    e = np.zeros_like(v)
    np.put_along_axis(e, axis[..., None], 1.0, axis=-1)
    u1 = np.cross(v, e)
    un = np.sqrt(np.einsum("...i,...i->...", u1, u1))
    u1 = u1 / np.where(un > 0.0, un, 1.0)[..., None]
    u2 = np.cross(v, u1)

    C = np.stack([np.stack([c00, c01, c02], -1), np.stack([c01, c11, c12], -1),
                  np.stack([c02, c12, c22], -1)], axis=-2)

    def form(x, y):
        return np.einsum("...i,...ij,...j->...", x, C, y)

    lv = form(v, v)
    a, b, d = form(u1, u1), form(u1, u2), form(u2, u2)
    mid = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    out = np.stack([lv, mid + rad, mid - rad], axis=-1)
    fallback = np.stack([e1, e2, e3], axis=-1)
    out = np.where(ok[..., None], out, np.where((p > 0.0)[..., None], fallback, q[..., None]))
    out = -np.sort(-out, axis=-1)
    return np.maximum(out, 0.0)


def neighborhood_eigenvalues_numpy(positions, neighbors):
    """Covariance eigenvalues for every neighborhood.

    ``positions`` is ``(N, 3)`` float64, ``neighbors`` is ``(M, K)`` integer
    indices into it. Covariance is normalised by 1/K about the neighborhood
    centroid. Returns ``(M, 3)`` sorted descending.
    """
    k = neighbors.shape[1]
    g = positions[neighbors]
    centroid = g.sum(axis=1) / k
    d = g - centroid[:, None, :]
    dx = np.ascontiguousarray(d[..., 0])
    dy = np.ascontiguousarray(d[..., 1])
    dz = np.ascontiguousarray(d[..., 2])
    c00 = (dx * dx).sum(axis=1) / k
    c01 = (dx * dy).sum(axis=1) / k
    c02 = (dx * dz).sum(axis=1) / k
    c11 = (dy * dy).sum(axis=1) / k
    c12 = (dy * dz).sum(axis=1) / k
    c22 = (dz * dz).sum(axis=1) / k
    return sym3_eigenvalues_numpy(c00, c01, c02, c11, c12, c22)


@njit(cache=True, nogil=True)
def _form(x0, x1, x2, y0, y1, y2, c00, c01, c02, c11, c12, c22):
    return (x0 * (c00 * y0 + c01 * y1 + c02 * y2)
            + x1 * (c01 * y0 + c11 * y1 + c12 * y2)
            + x2 * (c02 * y0 + c12 * y1 + c22 * y2))


@njit(cache=True, nogil=True)
def _sym3_eig_scalar(c00, c01, c02, c11, c12, c22, out):
    q = (c00 + c11 + c22) / 3.0
    p1 = c01 * c01 + c02 * c02 + c12 * c12
    d0 = c00 - q
    d1 = c11 - q
    d2 = c22 - q
    p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p > 0.0:
        b00 = d0 / p
        b11 = d1 / p
        b22 = d2 / p
        b01 = c01 / p
        b02 = c02 / p
        b12 = c12 / p
        det = (b00 * (b11 * b22 - b12 * b12)
               - b01 * (b01 * b22 - b12 * b02)
               + b02 * (b01 * b12 - b11 * b02))
        r = det / 2.0
        if r < -1.0:
            r = -1.0
        elif r > 1.0:
            r = 1.0
        phi = math.acos(r) / 3.0
        e1 = q + 2.0 * p * math.cos(phi)
        e3 = q + 2.0 * p * math.cos(phi + _TWO_PI_3)
        e2 = 3.0 * q - e1 - e3
        lam = e1 if e1 - e2 >= e2 - e3 else e3
        a00 = c00 - lam
        a11 = c11 - lam
        a22 = c22 - lam
        # cross products of the rows (a00,c01,c02), (c01,a11,c12), (c02,c12,a22)
        x01 = c01 * c12 - c02 * a11
        y01 = c02 * c01 - a00 * c12
        z01 = a00 * a11 - c01 * c01
        x02 = c01 * a22 - c02 * c12
        y02 = c02 * c02 - a00 * a22
        z02 = a00 * c12 - c01 * c02
        x12 = a11 * a22 - c12 * c12
        y12 = c12 * c02 - c01 * a22
        z12 = c01 * c12 - a11 * c02
        n01 = x01 * x01 + y01 * y01 + z01 * z01
        n02 = x02 * x02 + y02 * y02 + z02 * z02
        n12 = x12 * x12 + y12 * y12 + z12 * z12
        # same winner as np.argmax: first maximum
        if n01 >= n02 and n01 >= n12:
            v0, v1, v2, vn = x01, y01, z01, n01
        elif n02 >= n12:
            v0, v1, v2, vn = x02, y02, z02, n02
        else:
            v0, v1, v2, vn = x12, y12, z12, n12
        if vn > 0.0:
            vn = math.sqrt(vn)
            v0 /= vn
            v1 /= vn
            v2 /= vn
            av0 = abs(v0)
            av1 = abs(v1)
            av2 = abs(v2)
            # u1 = v x e_axis, axis = first minimum of |v|
            if av0 <= av1 and av0 <= av2:
                u0, u1_, u2_ = 0.0, v2, -v1
            elif av1 <= av2:
                u0, u1_, u2_ = -v2, 0.0, v0
            else:
                u0, u1_, u2_ = v1, -v0, 0.0
            un = math.sqrt(u0 * u0 + u1_ * u1_ + u2_ * u2_)
            u0 /= un
            u1_ /= un
            u2_ /= un
            w0 = v1 * u2_ - v2 * u1_
            w1 = v2 * u0 - v0 * u2_
            w2 = v0 * u1_ - v1 * u0
            lv = _form(v0, v1, v2, v0, v1, v2, c00, c01, c02, c11, c12, c22)
            a = _form(u0, u1_, u2_, u0, u1_, u2_, c00, c01, c02, c11, c12, c22)
            b = _form(u0, u1_, u2_, w0, w1, w2, c00, c01, c02, c11, c12, c22)
            d = _form(w0, w1, w2, w0, w1, w2, c00, c01, c02, c11, c12, c22)
            mid = 0.5 * (a + d)
            rad = math.hypot(0.5 * (a - d), b)
            e1 = lv
            e2 = mid + rad
            e3 = mid - rad
    else:
        e1 = q
        e2 = q
        e3 = q
    # sort descending
    if e1 < e2:
        e1, e2 = e2, e1
    if e2 < e3:
        e2, e3 = e3, e2
    if e1 < e2:
        e1, e2 = e2, e1
    out[0] = max(e1, 0.0)
    out[1] = max(e2, 0.0)
    out[2] = max(e3, 0.0)


@njit(cache=True, nogil=True)
def neighborhood_eigenvalues_numba(positions, neighbors):
    m, k = neighbors.shape
    out = np.empty((m, 3))
    for i in range(m):
        cx = 0.0
        cy = 0.0
        cz = 0.0
        for j in range(k):
            idx = neighbors[i, j]
            cx += positions[idx, 0]
            cy += positions[idx, 1]
            cz += positions[idx, 2]
        cx /= k
        cy /= k
        cz /= k
        s00 = 0.0
        s01 = 0.0
        s02 = 0.0
        s11 = 0.0
        s12 = 0.0
        s22 = 0.0
        for j in range(k):
            idx = neighbors[i, j]
            dx = positions[idx, 0] - cx
            dy = positions[idx, 1] - cy
            dz = positions[idx, 2] - cz
            s00 += dx * dx
            s01 += dx * dy
            s02 += dx * dz
            s11 += dy * dy
            s12 += dy * dz
            s22 += dz * dz
        _sym3_eig_scalar(s00 / k, s01 / k, s02 / k, s11 / k, s12 / k, s22 / k, out[i])
    return out
