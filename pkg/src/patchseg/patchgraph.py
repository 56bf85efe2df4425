"""Signed affinity graph over the selected patches.

An edge weight between two selected patches is the mean consensus affinity
over all pixel pairs drawn from their two foregrounds, counting only pairs
some informative patch actually voted on.  Structurally, two patches can
only interact when their predicting pixels are within twice the patch
extent (minus two) per axis, so candidate pairs come from a uniform spatial
grid hash instead of the full quadratic enumeration.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _kernels
from .consensus import ConsensusField, aff, _spatial_tables
from .core import PixelClass, PredictionBundle, classify
from .selection import PatchSelection


@dataclass
class PatchGraph:
    """Simple undirected graph: selected patches as nodes, signed weights."""

    node_pixels: np.ndarray  # [n, dims]
    node_flat: np.ndarray    # [n]
    edge_a: np.ndarray       # [m] node index, edge_a < edge_b
    edge_b: np.ndarray       # [m]
    edge_w: np.ndarray       # [m] float64 in [-1, 1]
    spatial_shape: tuple[int, ...]

    @property
    def num_nodes(self) -> int:
        return len(self.node_flat)

    @property
    def num_edges(self) -> int:
        return len(self.edge_w)

    @cached_property
    def _adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        ends = np.concatenate([self.edge_a, self.edge_b])
        others = np.concatenate([self.edge_b, self.edge_a])
        weights = np.concatenate([self.edge_w, self.edge_w])
        order = np.argsort(ends, kind="stable")
        ptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.add.at(ptr[1:], ends, 1)
        np.cumsum(ptr, out=ptr)
        return ptr, others[order], weights[order]

    def neighbors(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Adjacent node indices and edge weights of node i."""
        ptr, others, weights = self._adjacency
        return others[ptr[i]:ptr[i + 1]], weights[ptr[i]:ptr[i + 1]]


def paff(field: ConsensusField, bundle: PredictionBundle, a, b) -> float | None:
    """Mean consensus affinity between two patches, None when no pixel pair
    of their foregrounds was ever voted on."""
    fa = _classified_foreground(bundle, a)
    fb = _classified_foreground(bundle, b)
    total = 0.0
    count = 0
    for v in fa:
        for w in fb:
            value = aff(field, v, w)
            if value is not None:
                total += value
                count += 1
    if count == 0:
        return None
    return total / count


def _classified_foreground(bundle, x):
    cls = classify(bundle, np.asarray(x, dtype=np.int64))
    return cls.positions[cls.classes == PixelClass.FOREGROUND]


def build_graph(
    field: ConsensusField,
    bundle: PredictionBundle,
    selection: PatchSelection,
    *,
    threads: int = 1,
) -> PatchGraph:
    """Evaluate pair affinities between all selected patches within reach.

    Candidates are enumerated through a grid hash with cell size equal to
    the patch extent; an edge is inserted exactly when the pair affinity is
    defined.  Edges come out sorted by node index pair, independent of
    enumeration order and thread count.
    """
    geometry = bundle.geometry
    shape = bundle.spatial_shape
    n = len(selection)
    if n == 0:
        raise ValueError("cannot build a patch graph from an empty selection")

    reach = np.array([2 * (e - 1) for e in geometry.extents], dtype=np.int64)
    cell = np.array(geometry.extents, dtype=np.int64)
    cells = selection.pixels // cell
    buckets: dict[tuple[int, ...], list[int]] = {}
    for i, c in enumerate(map(tuple, cells)):
        buckets.setdefault(c, []).append(i)

    # pairs of nodes whose cells are at most two apart per axis
    steps = list(itertools.product(range(-2, 3), repeat=geometry.dims))
    pa: list[int] = []
    pb: list[int] = []
    for c, members in buckets.items():
        for i in members:
            for j in members:
                if j > i:
                    pa.append(i)
                    pb.append(j)
        for step in steps:
            if step <= (0,) * geometry.dims:
                continue  # visit each unordered cell pair once
            other = tuple(int(v + s) for v, s in zip(c, step))
            if other not in buckets:
                continue
            for i in members:
                for j in buckets[other]:
                    a, b = (i, j) if i < j else (j, i)
                    pa.append(a)
                    pb.append(b)

    pa_arr = np.array(pa, dtype=np.int64)
    pb_arr = np.array(pb, dtype=np.int64)
    if len(pa_arr):
        # exact structural reach test on the predicting pixels
        da = np.abs(selection.pixels[pa_arr] - selection.pixels[pb_arr])
        ok = (da <= reach).all(axis=1)
        pa_arr, pb_arr = pa_arr[ok], pb_arr[ok]
        order = np.lexsort((pb_arr, pa_arr))
        pa_arr, pb_arr = pa_arr[order], pb_arr[order]

    out_sum = np.zeros(len(pa_arr), dtype=np.float64)
    out_cnt = np.zeros(len(pa_arr), dtype=np.int64)
    if len(pa_arr):
        _, _, coords = _spatial_tables(geometry, shape)
        plane_lut, swap_lut = geometry._pair_lut
        box_rad = np.array([e - 1 for e in geometry.extents], dtype=np.int64)
        _kernels.set_threads(threads)
        _kernels.pair_affinities(
            pa_arr, pb_arr, selection.fg_ptr, selection.fg_flat, coords,
            box_rad, plane_lut, swap_lut, field.compact,
            field.numerator, field.z_count,
            out_sum, out_cnt,
        )

    defined = out_cnt > 0
    return PatchGraph(
        node_pixels=selection.pixels.copy(),
        node_flat=selection.flat.copy(),
        edge_a=pa_arr[defined].astype(np.int32),
        edge_b=pb_arr[defined].astype(np.int32),
        edge_w=out_sum[defined] / out_cnt[defined],
        spatial_shape=shape,
    )


@dataclass
class EdgeList:
    """Plain signed edge list, the text interchange form of a patch graph."""

    num_nodes: int
    edge_a: np.ndarray
    edge_b: np.ndarray
    edge_w: np.ndarray


def write_edge_list(graph, path) -> None:
    """One line per edge: ``a_index b_index weight`` (9 significant digits)."""
    with open(path, "w", encoding="ascii") as fh:
        for a, b, w in zip(graph.edge_a, graph.edge_b, graph.edge_w):
            fh.write(f"{int(a)} {int(b)} {float(w):.9g}\n")


def read_edge_list(path, num_nodes: int | None = None) -> EdgeList:
    a: list[int] = []
    b: list[int] = []
    w: list[float] = []
    with open(path, "r", encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}:{line_no}: expected 'a b weight'")
            a.append(int(parts[0]))
            b.append(int(parts[1]))
            w.append(float(parts[2]))
    edge_a = np.array(a, dtype=np.int32)
    edge_b = np.array(b, dtype=np.int32)
    if num_nodes is None:
        num_nodes = int(max(edge_a.max(initial=-1), edge_b.max(initial=-1))) + 1
    return EdgeList(
        num_nodes=num_nodes,
        edge_a=edge_a,
        edge_b=edge_b,
        edge_w=np.array(w, dtype=np.float64),
    )
