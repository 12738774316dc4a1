# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: the SMO inner loop and the marching cubes cell sweep.

Both functions mirror :mod:`svmshape._fallback` operation for operation so the
two backends produce the same floating point results.
"""

import numpy as np
cimport numpy as cnp

from ._mc_tables import TRI_TABLE

cnp.import_array()

cdef double TAU = 1e-12
cdef double INF = 1e300

cdef int[256][16] _TRI
cdef int _k, _m
for _k in range(256):
    for _m in range(16):
        _TRI[_k][_m] = TRI_TABLE[_k][_m] if _m < len(TRI_TABLE[_k]) else -1

cdef int[12][4] _EDGE_KEY = [
    # (dx, dy, dz, axis) of the lattice edge carrying each cell edge
    [0, 0, 0, 0], [1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 0, 1],
    [0, 0, 1, 0], [1, 0, 1, 1], [0, 1, 1, 0], [0, 0, 1, 1],
    [0, 0, 0, 2], [1, 0, 0, 2], [1, 1, 0, 2], [0, 1, 0, 2],
]
cdef int[8][3] _CORNER = [
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
]


def smo(double[:, ::1] Q, double[::1] y, double C, double tol, long max_iter,
        double[::1] alpha, double[::1] G):
    """Run SMO in place on ``alpha`` and ``G``; return (iterations, violation)."""
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t t, i, j
    cdef long it = 0
    cdef double gmax, gmax2, obj_min, grad_diff, quad, obj, violation = INF
    cdef double old_i, old_j, delta, diff, total, d_i, d_j
    with nogil:
        while it < max_iter:
            gmax = -INF
            gmax2 = -INF
            i = -1
            j = -1
            obj_min = INF
            for t in range(n):
                if y[t] > 0:
                    if alpha[t] < C and -G[t] >= gmax:
                        gmax = -G[t]
                        i = t
                else:
                    if alpha[t] > 0 and G[t] >= gmax:
                        gmax = G[t]
                        i = t
            if i < 0:
                violation = 0.0
                break
            for t in range(n):
                if y[t] > 0:
                    if alpha[t] > 0:
                        grad_diff = gmax + G[t]
                        if G[t] >= gmax2:
                            gmax2 = G[t]
                        if grad_diff > 0:
                            quad = Q[i, i] + Q[t, t] - 2.0 * y[i] * Q[i, t]
                            if quad <= 0:
                                quad = TAU
                            obj = -(grad_diff * grad_diff) / quad
                            if obj <= obj_min:
                                j = t
                                obj_min = obj
                else:
                    if alpha[t] < C:
                        grad_diff = gmax - G[t]
                        if -G[t] >= gmax2:
                            gmax2 = -G[t]
                        if grad_diff > 0:
                            quad = Q[i, i] + Q[t, t] + 2.0 * y[i] * Q[i, t]
                            if quad <= 0:
                                quad = TAU
                            obj = -(grad_diff * grad_diff) / quad
                            if obj <= obj_min:
                                j = t
                                obj_min = obj
            violation = gmax + gmax2
            if violation < tol or j < 0:
                break
            old_i = alpha[i]
            old_j = alpha[j]
            if y[i] != y[j]:
                quad = Q[i, i] + Q[j, j] + 2.0 * Q[i, j]
                if quad <= 0:
                    quad = TAU
                delta = (-G[i] - G[j]) / quad
                diff = alpha[i] - alpha[j]
                alpha[i] += delta
                alpha[j] += delta
                if diff > 0:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = diff
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = -diff
                if diff > 0:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = C - diff
                else:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = C + diff
            else:
                quad = Q[i, i] + Q[j, j] - 2.0 * Q[i, j]
                if quad <= 0:
                    quad = TAU
                delta = (G[i] - G[j]) / quad
                total = alpha[i] + alpha[j]
                alpha[i] -= delta
                alpha[j] += delta
                if total > C:
                    if alpha[i] > C:
                        alpha[i] = C
                        alpha[j] = total - C
                else:
                    if alpha[j] < 0:
                        alpha[j] = 0
                        alpha[i] = total
                if total > C:
                    if alpha[j] > C:
                        alpha[j] = C
                        alpha[i] = total - C
                else:
                    if alpha[i] < 0:
                        alpha[i] = 0
                        alpha[j] = total
            d_i = alpha[i] - old_i
            d_j = alpha[j] - old_j
            for t in range(n):
                G[t] += Q[t, i] * d_i + Q[t, j] * d_j
            it += 1
    return it, violation


def mc_triangles(double[:, :, ::1] values, double iso):
    """Triangles of the iso-surface as triples of global lattice-edge keys.

    Key of the edge leaving lattice node (x, y, z) along ``axis`` is
    ``((x * ny + y) * nz + z) * 3 + axis``.  Triangles come out in cell order.
    """
    cdef Py_ssize_t nx = values.shape[0], ny = values.shape[1], nz = values.shape[2]
    cdef Py_ssize_t x, y, z, c, m, count = 0, cap = 1024
    cdef int case, e
    cdef long long key
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.empty((cap, 3), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] buf = out
    for x in range(nx - 1):
        for y in range(ny - 1):
            for z in range(nz - 1):
                case = 0
                for c in range(8):
                    if values[x + _CORNER[c][0], y + _CORNER[c][1], z + _CORNER[c][2]] < iso:
                        case |= 1 << c
                if case == 0 or case == 255:
                    continue
                m = 0
                while _TRI[case][m] >= 0:
                    if count == cap:
                        cap *= 2
                        out = np.resize(out, (cap, 3))
                        buf = out
                    for c in range(3):
                        e = _TRI[case][m + c]
                        key = ((x + _EDGE_KEY[e][0]) * ny + (y + _EDGE_KEY[e][1])) * nz
                        key = (key + z + _EDGE_KEY[e][2]) * 3 + _EDGE_KEY[e][3]
                        buf[count, c] = key
                    count += 1
                    m += 3
    return out[:count].copy()
