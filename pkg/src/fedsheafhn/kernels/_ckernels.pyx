# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp

BACKEND = "cython"


def sheaf_laplacian(double[:, ::1] f_src, double[:, ::1] f_dst,
                    cnp.int64_t[::1] src, cnp.int64_t[::1] dst, Py_ssize_t n):
    cdef Py_ssize_t m = f_src.shape[0], ds = f_src.shape[1]
    out_arr = np.zeros((n * ds, n * ds))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t e, k, r, c
    cdef double a, b
    for e in range(m):
        for k in range(ds):
            r = src[e] * ds + k
            c = dst[e] * ds + k
            a = f_src[e, k]
            b = f_dst[e, k]
            out[r, r] += a * a
            out[c, c] += b * b
            out[r, c] -= a * b
            out[c, r] -= a * b
    return out_arr


def sheaf_laplacian_backward(double[:, ::1] grad, double[:, ::1] f_src,
                             double[:, ::1] f_dst, cnp.int64_t[::1] src,
                             cnp.int64_t[::1] dst):
    cdef Py_ssize_t m = f_src.shape[0], ds = f_src.shape[1]
    gs_arr = np.empty((m, ds))
    gd_arr = np.empty((m, ds))
    cdef double[:, ::1] gs = gs_arr
    cdef double[:, ::1] gd = gd_arr
    cdef Py_ssize_t e, k, r, c
    cdef double gx
    for e in range(m):
        for k in range(ds):
            r = src[e] * ds + k
            c = dst[e] * ds + k
            gx = grad[r, c] + grad[c, r]
            gs[e, k] = 2.0 * f_src[e, k] * grad[r, r] - f_dst[e, k] * gx
            gd[e, k] = 2.0 * f_dst[e, k] * grad[c, c] - f_src[e, k] * gx
    return gs_arr, gd_arr


def grow_partition(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                   cnp.int64_t[::1] sizes, cnp.int64_t[::1] order):
    cdef Py_ssize_t n = order.shape[0], nparts = sizes.shape[0]
    parts_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] parts = parts_arr
    cdef cnp.int64_t[::1] rank = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] conn = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] frontier = np.empty(n, dtype=np.int64)
    cdef Py_ssize_t nf, i, j, p, best_i, cursor = 0, size
    cdef cnp.int64_t v, u, target
    for i in range(n):
        rank[order[i]] = i
    for p in range(nparts):
        target = sizes[p]
        nf = 0
        size = 0
        while size < target:
            if nf > 0:
                best_i = 0
                for i in range(1, nf):
                    u = frontier[i]
                    v = frontier[best_i]
                    if conn[u] > conn[v] or (conn[u] == conn[v] and rank[u] < rank[v]):
                        best_i = i
                v = frontier[best_i]
                nf -= 1
                frontier[best_i] = frontier[nf]
            else:
                while parts[order[cursor]] != -1:
                    cursor += 1
                v = order[cursor]
            parts[v] = p
            conn[v] = 0
            size += 1
            for j in range(indptr[v], indptr[v + 1]):
                u = indices[j]
                if parts[u] == -1:
                    if conn[u] == 0:
                        frontier[nf] = u
                        nf += 1
                    conn[u] += 1
        for i in range(nf):
            conn[frontier[i]] = 0
    return parts_arr


def refine_partition(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
                     cnp.int64_t[::1] parts, Py_ssize_t nparts,
                     Py_ssize_t min_size, Py_ssize_t max_size, Py_ssize_t max_passes):
    cdef Py_ssize_t n = parts.shape[0]
    cdef cnp.int64_t[::1] sizes = np.zeros(nparts, dtype=np.int64)
    cdef cnp.int64_t[::1] cnt = np.zeros(nparts, dtype=np.int64)
    cdef cnp.int64_t[::1] touched = np.empty(nparts, dtype=np.int64)
    cdef Py_ssize_t v, j, t, nt, moved, total = 0, it
    cdef cnp.int64_t a, b, best, gain, best_gain, internal
    for v in range(n):
        sizes[parts[v]] += 1
    for it in range(max_passes):
        moved = 0
        for v in range(n):
            a = parts[v]
            if sizes[a] <= min_size:
                continue
            nt = 0
            for j in range(indptr[v], indptr[v + 1]):
                b = parts[indices[j]]
                if cnt[b] == 0:
                    touched[nt] = b
                    nt += 1
                cnt[b] += 1
            internal = cnt[a]
            best = -1
            best_gain = 0
            for t in range(nt):
                b = touched[t]
                if b != a and sizes[b] < max_size:
                    gain = cnt[b] - internal
                    if gain > best_gain or (gain == best_gain and gain > 0 and b < best):
                        best = b
                        best_gain = gain
            for t in range(nt):
                cnt[touched[t]] = 0
            if best >= 0:
                parts[v] = best
                sizes[a] -= 1
                sizes[best] += 1
                moved += 1
        total += moved
        if moved == 0:
            break
    return total
