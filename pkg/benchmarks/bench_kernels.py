"""Compiled vs pure-Python kernel timings.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from fedsheafhn import kernels
from fedsheafhn.graphdata import SyntheticTaskSpec, generate_synthetic
from fedsheafhn.sheaf import complete_edges


def laplacian_case(n, ds, seed=0):
    rng = np.random.default_rng(seed)
    src, dst = complete_edges(n)
    fs = np.tanh(rng.normal(size=(len(src), ds)))
    fd = np.tanh(rng.normal(size=(len(src), ds)))
    grad = rng.normal(size=(n * ds, n * ds))
    return fs, fd, src, dst, grad


def partition_case(blocks, seed=0):
    graph, _, _ = generate_synthetic(SyntheticTaskSpec(nodes_per_block=100, num_blocks=blocks, p_in=0.1,
                                                       p_out=0.005, feature_dim=blocks, seed=seed))
    indptr, indices = graph.csr()
    order = np.random.default_rng(seed).permutation(graph.n).astype(np.int64)
    return graph.n, indptr, indices, order


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    return label, best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    backends = [("python", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("cython", kernels.compiled_backend))
    else:
        print("compiled backend not built; timing the fallback only")

    rows = []
    for n, ds in ((10, 2), (50, 2), (100, 4)):
        fs, fd, src, dst, grad = laplacian_case(n, ds)
        for name, mod in backends:
            rows.append(bench(f"laplacian      N={n:<4} d_s={ds} {name}",
                              lambda: mod.sheaf_laplacian(fs, fd, src, dst, n), args.repeat))
            rows.append(bench(f"laplacian_bwd  N={n:<4} d_s={ds} {name}",
                              lambda: mod.sheaf_laplacian_backward(grad, fs, fd, src, dst), args.repeat))
    for blocks in (5, 20):
        n, indptr, indices, order = partition_case(blocks)
        parts_n = blocks * 2
        sizes = np.full(parts_n, n // parts_n, dtype=np.int64)
        sizes[: n % parts_n] += 1
        for name, mod in backends:
            rows.append(bench(f"grow_partition n={n:<5} k={parts_n} {name}",
                              lambda: mod.grow_partition(indptr, indices, sizes, order), args.repeat))
            parts = mod.grow_partition(indptr, indices, sizes, order)
            lo, hi = int(0.9 * n / parts_n), int(np.ceil(1.1 * n / parts_n))
            rows.append(bench(f"refine         n={n:<5} k={parts_n} {name}",
                              lambda: mod.refine_partition(indptr, indices, parts.copy(), parts_n, lo, hi, 10),
                              args.repeat))
    for label, t in rows:
        print(f"{label:<40} {t * 1e3:9.3f} ms")


if __name__ == "__main__":
    main()
