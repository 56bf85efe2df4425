"""Signed graph partitioning.

Two partitioners over the same edge-list shape: connected components of the
positive subgraph, and the mutex watershed, a Kruskal-style greedy pass over
edges by decreasing magnitude where positive edges merge clusters and
negative edges forbid future merges.  Also the pixel-level baseline that
feeds raw patch probabilities straight into the mutex watershed as dense
affinities, bypassing consensus and selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .consensus import _spatial_tables
from .core import ForegroundMask, PredictionBundle
from .patchgraph import EdgeList


@dataclass
class Partition:
    """Dense component labels, one per node, numbered from 0."""

    labels: np.ndarray

    @property
    def num_components(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    @property
    def num_nodes(self) -> int:
        return len(self.labels)


class UnionFind:
    """Array union-find with union by rank and full path compression.

    ``parent_rewrites`` counts compression writes (parent pointer changes
    during find), which bounds the amortized cost empirically.
    """

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.rank = np.zeros(n, dtype=np.int8)
        self.parent_rewrites = 0
        self.finds = 0

    def find(self, v: int) -> int:
        self.finds += 1
        parent = self.parent
        root = v
        while parent[root] != root:
            root = parent[root]
        while parent[v] != root:
            nxt = parent[v]
            parent[v] = root
            self.parent_rewrites += 1
            v = nxt
        return int(root)

    def union(self, a: int, b: int) -> int:
        """Merge the sets of a and b, returns the surviving root."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return ra


class MutexForest:
    """Union-find plus symmetric merge-forbidden constraints between roots.

    Constraint sets are re-hung onto the surviving root at every union, so
    the relation stays consistent as clusters grow.
    """

    def __init__(self, n: int):
        self.uf = UnionFind(n)
        self.mutex: dict[int, set[int]] = {}

    def is_mutex(self, ra: int, rb: int) -> bool:
        return rb in self.mutex.get(ra, ())

    def add_mutex(self, ra: int, rb: int) -> None:
        if ra == rb:
            raise ValueError("a cluster cannot be mutex with itself")
        self.mutex.setdefault(ra, set()).add(rb)
        self.mutex.setdefault(rb, set()).add(ra)

    def merge(self, ra: int, rb: int) -> int:
        survivor = self.uf.union(ra, rb)
        loser = rb if survivor == ra else ra
        dropped = self.mutex.pop(loser, None)
        if dropped:
            keep = self.mutex.setdefault(survivor, set())
            for other in dropped:
                self.mutex[other].discard(loser)
                self.mutex[other].add(survivor)
                keep.add(other)
        return survivor


def _labels_from_roots(uf: UnionFind, n: int) -> np.ndarray:
    labels = np.empty(n, dtype=np.int64)
    seen: dict[int, int] = {}
    for v in range(n):
        root = uf.find(v)
        if root not in seen:
            seen[root] = len(seen)
        labels[v] = seen[root]
    return labels


def cc_positive(graph) -> Partition:
    """Connected components of the subgraph with strictly positive weights."""
    n = graph.num_nodes
    uf = UnionFind(n)
    for a, b, w in zip(graph.edge_a, graph.edge_b, graph.edge_w):
        if w > 0.0:
            uf.union(int(a), int(b))
    return Partition(labels=_labels_from_roots(uf, n))


def _mutex_edge_order(edge_w: np.ndarray, edge_a, edge_b) -> np.ndarray:
    # decreasing magnitude; ties prefer the positive edge, then the smaller
    # endpoint pair
    return np.lexsort((edge_b, edge_a, -edge_w, -np.abs(edge_w)))


def mutex_watershed(graph) -> Partition:
    """Greedy signed partitioning with merge constraints.

    Edges are visited by decreasing absolute weight (ties: higher weight,
    then endpoint pair).  A positive edge merges the two clusters unless
    they are constrained apart; a negative edge constrains them apart unless
    they are already merged.  Zero-weight edges are inert and skipped.
    """
    n = graph.num_nodes
    forest = MutexForest(n)
    order = _mutex_edge_order(graph.edge_w, graph.edge_a, graph.edge_b)
    edge_a, edge_b, edge_w = graph.edge_a, graph.edge_b, graph.edge_w
    for e in order:
        w = edge_w[e]
        if w == 0.0:
            continue
        ra = forest.uf.find(int(edge_a[e]))
        rb = forest.uf.find(int(edge_b[e]))
        if ra == rb:
            continue
        if w > 0.0:
            if not forest.is_mutex(ra, rb):
                forest.merge(ra, rb)
        else:
            forest.add_mutex(ra, rb)
    return Partition(labels=_labels_from_roots(forest.uf, n))


@dataclass
class PixelPartition:
    """Partition whose nodes are foreground pixels rather than patches."""

    partition: Partition
    node_flat: np.ndarray
    spatial_shape: tuple[int, ...]

    def label_map(self) -> np.ndarray:
        out = np.zeros(int(np.prod(self.spatial_shape)), dtype=np.uint32)
        out[self.node_flat] = self.partition.labels + 1
        return out.reshape(self.spatial_shape)

    def masks(self) -> list[np.ndarray]:
        out = []
        for i in range(self.partition.num_components):
            mask = np.zeros(int(np.prod(self.spatial_shape)), dtype=bool)
            mask[self.node_flat[self.partition.labels == i]] = True
            out.append(mask.reshape(self.spatial_shape))
        return out


def mws_dense(
    bundle: PredictionBundle,
    fg,
    *,
    prob_to_weight=None,
) -> PixelPartition:
    """Baseline: mutex watershed directly on the per-pixel patch predictions.

    Every foreground pixel is a node; every patch offset contributes the
    signed weight ``2 p - 1`` between the pixel and its neighbor (the two
    directed duplicates of a pair are averaged).  ``prob_to_weight`` can
    replace the default affine map; it receives the averaged probability.
    """
    geometry = bundle.geometry
    shape = bundle.spatial_shape
    fg_mask = fg.mask if isinstance(fg, ForegroundMask) else np.asarray(fg, dtype=bool)
    if fg_mask.shape != shape:
        raise ValueError(f"foreground shape {fg_mask.shape} != bundle spatial {shape}")

    node_flat = np.flatnonzero(fg_mask)
    n_nodes = len(node_flat)
    compact = np.full(fg_mask.size, -1, dtype=np.int64)
    compact[node_flat] = np.arange(n_nodes, dtype=np.int64)

    strides, offflat, coords = _spatial_tables(geometry, shape)
    probs2 = bundle.patch_probs.reshape(geometry.num_channels, -1)
    active = fg_mask.ravel()
    shape_arr = np.array(shape, dtype=np.int64)

    parts_a, parts_b, parts_w = [], [], []
    for c, dx in enumerate(geometry.offsets):
        if not _lex_positive(dx):
            continue
        c_neg = geometry.channel_of(-dx)
        lo = coords[node_flat] + dx
        ok = ((lo >= 0) & (lo < shape_arr)).all(axis=1)
        src = node_flat[ok]
        dst = src + int(offflat[c])
        both = active[dst]
        src, dst = src[both], dst[both]
        if not len(src):
            continue
        mean_p = (probs2[c, src].astype(np.float64) + probs2[c_neg, dst]) / 2.0
        if prob_to_weight is None:
            w = 2.0 * mean_p - 1.0
        else:
            w = np.asarray(prob_to_weight(mean_p), dtype=np.float64)
        parts_a.append(compact[src])
        parts_b.append(compact[dst])
        parts_w.append(w)

    if parts_a:
        edge_a = np.concatenate(parts_a).astype(np.int64)
        edge_b = np.concatenate(parts_b).astype(np.int64)
        edge_w = np.concatenate(parts_w)
    else:
        edge_a = np.zeros(0, dtype=np.int64)
        edge_b = np.zeros(0, dtype=np.int64)
        edge_w = np.zeros(0, dtype=np.float64)

    graph = EdgeList(n_nodes, edge_a, edge_b, edge_w)
    return PixelPartition(
        partition=mutex_watershed(graph),
        node_flat=node_flat,
        spatial_shape=shape,
    )


def _lex_positive(vec) -> bool:
    for v in vec:
        if v != 0:
            return v > 0
    return False
