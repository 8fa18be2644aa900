"""Pure-Python/numpy kernels; reference implementation for the compiled twin."""
import numpy as np

BACKEND = "python"


def sheaf_laplacian(f_src, f_dst, src, dst, n):
    """Dense sheaf Laplacian from diagonal restriction maps.

    ``f_src[e]`` is the diagonal of F_{src[e] <| e}, ``f_dst[e]`` that of
    F_{dst[e] <| e}.  Rows/columns are indexed node-major, stalk-minor.
    """
    f_src = np.asarray(f_src, dtype=np.float64)
    f_dst = np.asarray(f_dst, dtype=np.float64)
    ds = f_src.shape[1]
    out = np.zeros((n * ds, n * ds))
    k = np.arange(ds)
    rs = (np.asarray(src)[:, None] * ds + k).ravel()
    rd = (np.asarray(dst)[:, None] * ds + k).ravel()
    a = f_src.ravel()
    b = f_dst.ravel()
    np.add.at(out, (rs, rs), a * a)
    np.add.at(out, (rd, rd), b * b)
    np.add.at(out, (rs, rd), -a * b)
    np.add.at(out, (rd, rs), -a * b)
    return out


def sheaf_laplacian_backward(grad, f_src, f_dst, src, dst):
    f_src = np.asarray(f_src, dtype=np.float64)
    f_dst = np.asarray(f_dst, dtype=np.float64)
    ds = f_src.shape[1]
    k = np.arange(ds)
    rs = np.asarray(src)[:, None] * ds + k
    rd = np.asarray(dst)[:, None] * ds + k
    g_ss = grad[rs, rs]
    g_dd = grad[rd, rd]
    g_x = grad[rs, rd] + grad[rd, rs]
    return 2.0 * f_src * g_ss - f_dst * g_x, 2.0 * f_dst * g_dd - f_src * g_x


def grow_partition(indptr, indices, sizes, order):
    """Greedy graph growing: each part is grown from a seed, always absorbing
    the frontier node with the most edges into the part (ties: earliest in
    ``order``).  A part whose frontier empties jumps to the next unassigned
    node in ``order``."""
    n = len(order)
    parts = [-1] * n
    rank = [0] * n
    for i, v in enumerate(order):
        rank[v] = i
    cursor = 0
    for p, target in enumerate(sizes):
        conn = {}
        size = 0
        while size < target:
            if conn:
                v = max(conn, key=lambda u: (conn[u], -rank[u]))
                del conn[v]
            else:
                while parts[order[cursor]] != -1:
                    cursor += 1
                v = order[cursor]
            parts[v] = p
            size += 1
            for j in range(indptr[v], indptr[v + 1]):
                u = indices[j]
                if parts[u] == -1:
                    conn[u] = conn.get(u, 0) + 1
    return np.asarray(parts, dtype=np.int64)


def refine_partition(indptr, indices, parts, nparts, min_size, max_size, max_passes):
    """Boundary refinement: move a node to the neighbouring part with the
    largest strictly positive cut gain while sizes stay in
    [min_size, max_size].  Mutates ``parts``; returns the number of moves."""
    n = len(parts)
    sizes = [0] * nparts
    for v in range(n):
        sizes[parts[v]] += 1
    total = 0
    for _ in range(max_passes):
        moved = 0
        for v in range(n):
            a = int(parts[v])
            if sizes[a] <= min_size:
                continue
            cnt = {}
            for j in range(indptr[v], indptr[v + 1]):
                b = int(parts[indices[j]])
                cnt[b] = cnt.get(b, 0) + 1
            internal = cnt.get(a, 0)
            best, best_gain = -1, 0
            for b in sorted(cnt):
                if b == a or sizes[b] >= max_size:
                    continue
                gain = cnt[b] - internal
                if gain > best_gain:
                    best, best_gain = b, gain
            if best >= 0:
                parts[v] = best
                sizes[a] -= 1
                sizes[best] += 1
                moved += 1
        total += moved
        if moved == 0:
            break
    return total
