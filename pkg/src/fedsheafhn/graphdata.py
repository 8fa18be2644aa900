"""Graphs, client datasets, synthetic tasks, partitioning and file I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.spatial.distance import jensenshannon

from . import kernels
from .errors import ConfigError, ParseError, PartitionError, ValidationError

SPLITS = ("train", "val", "test")


class Graph:
    """Undirected simple graph on nodes ``0..n-1``.

    Edges are stored once as ``(u, v)`` with ``u < v``; self-loops and
    duplicates are dropped on construction.
    """

    def __init__(self, n, edges=()):
        if n < 0:
            raise ValidationError("node count must be non-negative")
        e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        e = e.reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise ValidationError(f"edge endpoint outside [0, {n})")
        e = np.sort(e, axis=1)
        e = e[e[:, 0] != e[:, 1]]
        self.n = int(n)
        self.edges = np.unique(e, axis=0) if e.size else np.zeros((0, 2), dtype=np.int64)

    @property
    def num_edges(self):
        return len(self.edges)

    def csr(self):
        """(indptr, indices) of the symmetric adjacency, neighbours sorted."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        rows = np.concatenate([u, v])
        cols = np.concatenate([v, u])
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.add.at(indptr, rows + 1, 1)
        return np.cumsum(indptr), np.ascontiguousarray(cols, dtype=np.int64)

    def adjacency(self):
        a = np.zeros((self.n, self.n))
        a[self.edges[:, 0], self.edges[:, 1]] = 1.0
        a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a

    def induced(self, nodes):
        """Subgraph on ``nodes`` (sorted), re-indexed by position."""
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(self.n, -1, dtype=np.int64)
        local[nodes] = np.arange(len(nodes))
        keep = (local[self.edges[:, 0]] >= 0) & (local[self.edges[:, 1]] >= 0)
        return Graph(len(nodes), local[self.edges[keep]])

    def edge_set(self):
        return {(int(u), int(v)) for u, v in self.edges}

    def __eq__(self, other):
        return isinstance(other, Graph) and self.n == other.n and np.array_equal(self.edges, other.edges)

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.num_edges})"


@dataclass
class SubgraphDataset:
    graph: Graph
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    global_ids: np.ndarray | None = None

    def __post_init__(self):
        n = self.graph.n
        if self.features.shape[0] != n or len(self.labels) != n:
            raise ValidationError("features/labels do not match node count")
        masks = np.stack([self.train_mask, self.val_mask, self.test_mask])
        if masks.shape != (3, n) or np.any(masks.sum(axis=0) != 1):
            raise ValidationError("train/val/test masks must partition the nodes")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError("label outside [0, num_classes)")

    @property
    def n(self):
        return self.graph.n

    def label_histogram(self):
        return np.bincount(self.labels, minlength=self.num_classes).astype(np.float64)


@dataclass
class PartitionSpec:
    scenario: str = "non_overlapping"
    num_parts: int = 10
    samples_per_part: int = 5
    sample_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.scenario not in ("non_overlapping", "overlapping"):
            raise ConfigError(f"unknown partition scenario {self.scenario!r}")
        if self.num_parts < 1:
            raise ConfigError("num_parts must be >= 1")
        if not 0.0 < self.sample_fraction <= 1.0:
            raise ConfigError("sample_fraction must lie in (0, 1]")
        if self.samples_per_part < 1:
            raise ConfigError("samples_per_part must be >= 1")

    @property
    def num_clients(self):
        return self.num_parts * (self.samples_per_part if self.scenario == "overlapping" else 1)


@dataclass
class SyntheticTaskSpec:
    """Planted-partition node-classification task.

    ``label_skew`` is the probability that a node sits in the community of
    its own class; otherwise its community is drawn uniformly.  Since
    partitions follow communities, it sets how concentrated each client's
    label distribution is (1.0 = pure blocks).
    """

    nodes_per_block: int = 40
    num_blocks: int = 5
    p_in: float = 0.2
    p_out: float = 0.01
    feature_dim: int = 8
    feature_noise: float = 1.0
    label_skew: float = 1.0
    seed: int = 0

    def validate(self):
        if self.nodes_per_block < 1 or self.num_blocks < 1:
            raise ConfigError("synthetic task needs at least one node")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ConfigError("need 0 <= p_out <= p_in <= 1")
        if self.feature_dim < self.num_blocks:
            raise ConfigError("feature_dim must be >= num_blocks")
        if self.feature_noise < 0:
            raise ConfigError("feature_noise must be >= 0")
        if not 0.0 <= self.label_skew <= 1.0:
            raise ConfigError("label_skew must lie in [0, 1]")


def generate_synthetic(spec: SyntheticTaskSpec):
    """Sample (graph, features, labels) from the planted-partition model."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k = spec.num_blocks
    n = spec.nodes_per_block * k
    labels = np.repeat(np.arange(k), spec.nodes_per_block)
    community = labels.copy()
    moved = rng.random(n) >= spec.label_skew
    community[moved] = rng.integers(0, k, size=int(moved.sum()))

    edges = []
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        p = np.where(community[j] == community[i], spec.p_in, spec.p_out)
        hit = j[rng.random(n - i - 1) < p]
        edges.extend((i, int(v)) for v in hit)

    features = np.zeros((n, spec.feature_dim))
    features[np.arange(n), labels] = 1.0
    if spec.feature_noise > 0:
        features += rng.normal(scale=spec.feature_noise, size=features.shape)
    return Graph(n, edges), features, labels


def split_masks(n, rng, ratios=(0.4, 0.3, 0.3)):
    """Uniform random train/val/test masks; rounding remainder goes to train."""
    n_val = int(math.floor(ratios[1] * n))
    n_test = int(math.floor(ratios[2] * n))
    perm = rng.permutation(n)
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    val[perm[:n_val]] = True
    test[perm[n_val : n_val + n_test]] = True
    train[perm[n_val + n_test :]] = True
    return train, val, test


def partition_nodes(graph: Graph, num_parts, seed=0, tolerance=0.1, max_passes=10):
    """Balanced edge-cut assignment of nodes to ``num_parts`` disjoint parts.

    Greedy graph growing from seeds followed by boundary refinement; a cheap
    stand-in for multilevel partitioners.
    """
    n = graph.n
    if not 1 <= num_parts <= n:
        raise PartitionError(f"cannot split {n} nodes into {num_parts} parts")
    rng = np.random.default_rng(seed)
    order = np.ascontiguousarray(rng.permutation(n), dtype=np.int64)
    sizes = np.full(num_parts, n // num_parts, dtype=np.int64)
    sizes[: n % num_parts] += 1
    indptr, indices = graph.csr()
    parts = kernels.grow_partition(indptr, indices, sizes, order)
    target = n / num_parts
    max_size = max(int(sizes.max()), int(math.floor(target * (1 + tolerance))))
    min_size = min(int(sizes.min()), int(math.ceil(target * (1 - tolerance))))
    parts = np.ascontiguousarray(parts, dtype=np.int64)
    kernels.refine_partition(indptr, indices, parts, num_parts, min_size, max_size, max_passes)
    if np.any(np.bincount(parts, minlength=num_parts) == 0):
        raise PartitionError("partitioner produced an empty part")
    return parts


def edge_cut(graph: Graph, parts):
    parts = np.asarray(parts)
    return int(np.sum(parts[graph.edges[:, 0]] != parts[graph.edges[:, 1]]))


def _client(graph, features, labels, num_classes, nodes, mask_seed):
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    if nodes.size == 0:
        raise PartitionError("empty part")
    train, val, test = split_masks(len(nodes), np.random.default_rng(mask_seed))
    return SubgraphDataset(
        graph=graph.induced(nodes),
        features=features[nodes].copy(),
        labels=np.asarray(labels)[nodes].copy(),
        num_classes=num_classes,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        global_ids=nodes,
    )


def partition(graph: Graph, features, labels, spec: PartitionSpec, num_classes=None):
    """Split a global graph into per-client datasets.

    Masks for client ``i`` are drawn from seed ``spec.seed + i``, independently
    per client even when overlapping clients share nodes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    parts = partition_nodes(graph, spec.num_parts, spec.seed)
    groups = [np.flatnonzero(parts == p) for p in range(spec.num_parts)]
    if spec.scenario == "non_overlapping":
        node_sets = groups
    else:
        rng = np.random.default_rng(spec.seed + 7919)
        node_sets = []
        for group in groups:
            size = int(math.ceil(spec.sample_fraction * len(group)))
            for _ in range(spec.samples_per_part):
                node_sets.append(rng.choice(group, size=size, replace=False))
    return [_client(graph, features, labels, num_classes, s, spec.seed + i) for i, s in enumerate(node_sets)]


def heterogeneity(datasets):
    """Median pairwise Jensen-Shannon divergence (base 2) of label histograms."""
    hists = [d.label_histogram() for d in datasets]
    if len(hists) < 2:
        raise ValueError("heterogeneity needs at least two clients")
    vals = [jensenshannon(p, q, base=2) ** 2 for p, q in combinations(hists, 2)]
    return float(np.median(vals))


# -- files ------------------------------------------------------------------

def save_dataset(path, graph: Graph, features, labels):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    with open(path / "graph.edges", "w", newline="\n") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")
    with open(path / "nodes.tsv", "w", newline="\n") as fh:
        fh.write("\t".join(["id", "label"] + [f"f{j}" for j in range(features.shape[1])]) + "\n")
        for i in range(graph.n):
            fh.write("\t".join([str(i), str(int(labels[i]))] + [repr(float(x)) for x in features[i]]) + "\n")


def _read_nodes(path):
    rows = {}
    width = None
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:2] != ["id", "label"]:
            raise ParseError(path, 1, "header must start with 'id<TAB>label'")
        width = len(header) - 2
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != width + 2:
                raise ParseError(path, lineno, f"expected {width + 2} columns, got {len(cols)}")
            try:
                idx, lab = int(cols[0]), int(cols[1])
                feats = [float(x) for x in cols[2:]]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if idx in rows:
                raise ValidationError(f"{path}: duplicate node id {idx}")
            rows[idx] = (lab, feats)
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValidationError(f"{path}: node ids must be exactly 0..{n - 1}")
    labels = np.array([rows[i][0] for i in range(n)], dtype=np.int64)
    features = np.array([rows[i][1] for i in range(n)], dtype=np.float64).reshape(n, width)
    if np.any(labels < 0):
        raise ValidationError(f"{path}: negative label")
    return features, labels


def _read_edges(path, n):
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, "expected 'u v'")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(f"{path}:{lineno}: edge ({u}, {v}) references a missing node")
            edges.append((u, v))
    return edges


def load_dataset(path):
    """Read ``graph.edges`` + ``nodes.tsv`` from a directory."""
    path = Path(path)
    features, labels = _read_nodes(path / "nodes.tsv")
    edges = _read_edges(path / "graph.edges", len(labels))
    return Graph(len(labels), edges), features, labels


def save_partition(path, datasets):
    """One directory per client: ``client_000/{graph.edges,nodes.tsv,masks.tsv}``."""
    path = Path(path)
    for i, ds in enumerate(datasets):
        d = path / f"client_{i:03d}"
        save_dataset(d, ds.graph, ds.features, ds.labels)
        with open(d / "masks.tsv", "w", newline="\n") as fh:
            fh.write("id\tsplit\n")
            for j in range(ds.n):
                split = "train" if ds.train_mask[j] else "val" if ds.val_mask[j] else "test"
                fh.write(f"{j}\t{split}\n")


def _read_masks(path, n):
    split = [None] * n
    with open(path) as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 2 or cols[1] not in SPLITS:
                raise ParseError(path, lineno, "expected 'id<TAB>train|val|test'")
            try:
                idx = int(cols[0])
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from None
            if not 0 <= idx < n:
                raise ValidationError(f"{path}:{lineno}: node {idx} out of range")
            split[idx] = cols[1]
    if any(s is None for s in split):
        raise ValidationError(f"{path}: every node needs a split")
    split = np.array(split)
    return split == "train", split == "val", split == "test"


def load_partition(path):
    """Load every ``client_*`` directory written by :func:`save_partition`."""
    dirs = sorted(p for p in Path(path).iterdir() if p.is_dir() and p.name.startswith("client_"))
    if not dirs:
        raise ValidationError(f"{path}: no client directories")
    raw = []
    for d in dirs:
        graph, features, labels = load_dataset(d)
        raw.append((graph, features, labels, _read_masks(d / "masks.tsv", graph.n)))
    num_classes = max(int(r[2].max()) + 1 for r in raw if r[0].n)
    return [SubgraphDataset(g, f, lab, num_classes, *m) for g, f, lab, m in raw]
