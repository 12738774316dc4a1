"""Pure-Python versions of the kernels in ``_core.pyx``.

Used when the extension is not built, or when ``SVMSHAPE_PURE_PYTHON=1``.
The SMO loop follows the compiled one step for step; the marching cubes
sweep is vectorized over cells and then put back into cell order.
"""

import numpy as np

from ._mc_tables import TRI_TABLE

TAU = 1e-12
INF = 1e300

_EDGE_KEY = np.array([
    [0, 0, 0, 0], [1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 0, 1],
    [0, 0, 1, 0], [1, 0, 1, 1], [0, 1, 1, 0], [0, 0, 1, 1],
    [0, 0, 0, 2], [1, 0, 0, 2], [1, 1, 0, 2], [0, 1, 0, 2],
])
_CORNER = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
])


def smo(Q, y, C, tol, max_iter, alpha, G):
    n = len(y)
    Q = np.asarray(Q)
    yl = [float(v) for v in y]
    a = [float(v) for v in alpha]
    g = [float(v) for v in G]
    it = 0
    violation = INF
    while it < max_iter:
        gmax = -INF
        gmax2 = -INF
        i = j = -1
        obj_min = INF
        for t in range(n):
            if yl[t] > 0:
                if a[t] < C and -g[t] >= gmax:
                    gmax = -g[t]
                    i = t
            elif a[t] > 0 and g[t] >= gmax:
                gmax = g[t]
                i = t
        if i < 0:
            violation = 0.0
            break
        Qi = Q[i]
        for t in range(n):
            if yl[t] > 0:
                if a[t] > 0:
                    grad_diff = gmax + g[t]
                    if g[t] >= gmax2:
                        gmax2 = g[t]
                    if grad_diff > 0:
                        quad = Qi[i] + Q[t, t] - 2.0 * yl[i] * Qi[t]
                        if quad <= 0:
                            quad = TAU
                        obj = -(grad_diff * grad_diff) / quad
                        if obj <= obj_min:
                            j = t
                            obj_min = obj
            elif a[t] < C:
                grad_diff = gmax - g[t]
                if -g[t] >= gmax2:
                    gmax2 = -g[t]
                if grad_diff > 0:
                    quad = Qi[i] + Q[t, t] + 2.0 * yl[i] * Qi[t]
                    if quad <= 0:
                        quad = TAU
                    obj = -(grad_diff * grad_diff) / quad
                    if obj <= obj_min:
                        j = t
                        obj_min = obj
        violation = gmax + gmax2
        if violation < tol or j < 0:
            break
        old_i, old_j = a[i], a[j]
        if yl[i] != yl[j]:
            quad = Qi[i] + Q[j, j] + 2.0 * Qi[j]
            if quad <= 0:
                quad = TAU
            delta = (-g[i] - g[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            elif a[j] > C:
                a[j] = C
                a[i] = C + diff
        else:
            quad = Qi[i] + Q[j, j] - 2.0 * Qi[j]
            if quad <= 0:
                quad = TAU
            delta = (g[i] - g[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        d_i = a[i] - old_i
        d_j = a[j] - old_j
        col_i = Q[:, i]
        col_j = Q[:, j]
        for t in range(n):
            g[t] += col_i[t] * d_i + col_j[t] * d_j
        it += 1
    alpha[:] = a
    G[:] = g
    return it, violation


def mc_triangles(values, iso):
    values = np.ascontiguousarray(values, dtype=float)
    nx, ny, nz = values.shape
    below = values < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for c, (dx, dy, dz) in enumerate(_CORNER):
        case |= below[dx:nx - 1 + dx, dy:ny - 1 + dy, dz:nz - 1 + dz].astype(np.int64) << c
    flat = case.ravel()
    active = np.nonzero((flat != 0) & (flat != 255))[0]
    if active.size == 0:
        return np.empty((0, 3), dtype=np.int64)
    cx, cy, cz = np.unravel_index(active, case.shape)
    keys, order_cell, order_tri = [], [], []
    codes = flat[active]
    for code in np.unique(codes):
        tri = np.asarray(TRI_TABLE[code], dtype=np.int64).reshape(-1, 3)
        sel = codes == code
        sx, sy, sz = cx[sel], cy[sel], cz[sel]
        ek = _EDGE_KEY[tri]  # (T, 3, 4)
        kx = sx[:, None, None] + ek[None, :, :, 0]
        ky = sy[:, None, None] + ek[None, :, :, 1]
        kz = sz[:, None, None] + ek[None, :, :, 2]
        k = ((kx * ny + ky) * nz + kz) * 3 + ek[None, :, :, 3]
        keys.append(k.reshape(-1, 3))
        order_cell.append(np.repeat(active[sel], len(tri)))
        order_tri.append(np.tile(np.arange(len(tri)), sel.sum()))
    keys = np.concatenate(keys)
    order = np.lexsort((np.concatenate(order_tri), np.concatenate(order_cell)))
    return keys[order]
