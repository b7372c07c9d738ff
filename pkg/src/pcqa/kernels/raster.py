"""Square-splat z-buffer rasterisation.

Both paths take pixel coordinates already computed by the caller and a
``nearness`` key (larger is closer to the camera). A pixel keeps the nearest
covering point; equal nearness goes to the lower point index.
"""
import numpy as np

from .._accel import njit


def splat_numpy(cols, rows, nearness, colors, resolution, radius, background):
    img = np.empty((resolution, resolution, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    n = cols.shape[0]
    if n == 0:
        return img
    offs = np.arange(-radius, radius + 1)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    pr = (rows[:, None] + oy.ravel()[None, :]).ravel()
    pc = (cols[:, None] + ox.ravel()[None, :]).ravel()
    owner = np.repeat(np.arange(n), offs.size * offs.size)
    keep = (pr >= 0) & (pr < resolution) & (pc >= 0) & (pc < resolution)
    pr, pc, owner = pr[keep], pc[keep], owner[keep]
    flat = pr * resolution + pc
    # primary: pixel, then nearest first, then lowest index
    order = np.lexsort((owner, -nearness[owner], flat))
    flat_sorted = flat[order]
    first = np.ones(flat_sorted.shape[0], dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win_pix = flat_sorted[first]
    win_pt = owner[order][first]
    img.reshape(-1, 3)[win_pix] = colors[win_pt]
    return img


@njit(cache=True, nogil=True)
def _splat_numba_core(cols, rows, nearness, resolution, radius):
    zbuf = np.full((resolution, resolution), -np.inf)
    ibuf = np.full((resolution, resolution), -1, dtype=np.int64)
    for i in range(cols.shape[0]):
        z = nearness[i]
        for dr in range(-radius, radius + 1):
            r = rows[i] + dr
            if r < 0 or r >= resolution:
                continue
            for dc in range(-radius, radius + 1):
                c = cols[i] + dc
                if c < 0 or c >= resolution:
                    continue
                # strict comparison: earlier index keeps ties
                if ibuf[r, c] < 0 or z > zbuf[r, c]:
                    zbuf[r, c] = z
                    ibuf[r, c] = i
    return ibuf


def splat_numba(cols, rows, nearness, colors, resolution, radius, background):
    ibuf = _splat_numba_core(cols.astype(np.int64), rows.astype(np.int64),
                             nearness.astype(np.float64), resolution, radius)
    img = np.empty((resolution, resolution, 3), dtype=np.uint8)
    img[:] = np.asarray(background, dtype=np.uint8)
    hit = ibuf >= 0
    img[hit] = colors[ibuf[hit]]
    return img
