"""From a partition of selected patches to the final instance segmentation.

Each component's instance mask is the union of its patches' foregrounds, so
a pixel claimed by patches from several components legitimately belongs to
several instances.  The flattened single-label view resolves such pixels to
the claim with the highest predicted probability (ties: higher patch score,
then patch pixel index).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import PredictionBundle
from .partition import Partition
from .selection import PatchSelection


@dataclass
class InstanceProvenance:
    """The selected patches one instance was assembled from."""

    patch_pixels: np.ndarray  # [k, dims] predicting pixels
    patch_flat: np.ndarray    # [k]
    scores: np.ndarray        # [k]
    fg_ptr: np.ndarray        # CSR over the patches' foregrounds
    fg_flat: np.ndarray
    fg_prob: np.ndarray


@dataclass
class InstanceSegmentation:
    """Overlap-capable result: mask stack plus a flattened label map.

    Instance ids are dense 1..N; ``label_map`` is 0 on background and one of
    the claiming instance ids elsewhere.
    """

    masks: list[np.ndarray]
    label_map: np.ndarray
    provenance: list[InstanceProvenance]
    spatial_shape: tuple[int, ...]

    @property
    def num_instances(self) -> int:
        return len(self.masks)

    def mask_stack(self) -> np.ndarray:
        """Masks as one uint8 tensor of shape [num_instances, spatial...]."""
        if not self.masks:
            return np.zeros((0, *self.spatial_shape), dtype=np.uint8)
        return np.stack([m.astype(np.uint8) for m in self.masks])


def assemble(
    selection: PatchSelection,
    partition: Partition,
    bundle: PredictionBundle,
) -> InstanceSegmentation:
    """Union the patch foregrounds of every component into instance masks."""
    if partition.num_nodes != len(selection):
        raise ValueError(
            f"partition covers {partition.num_nodes} nodes, selection has {len(selection)}"
        )
    shape = bundle.spatial_shape
    n_px = int(np.prod(shape))
    masks: list[np.ndarray] = []
    provenance: list[InstanceProvenance] = []
    sizes = selection.fg_ptr[1:] - selection.fg_ptr[:-1]
    for comp in range(partition.num_components):
        nodes = np.flatnonzero(partition.labels == comp)
        mask = np.zeros(n_px, dtype=bool)
        ptr = np.zeros(len(nodes) + 1, dtype=np.int64)
        np.cumsum(sizes[nodes], out=ptr[1:])
        fg_flat = np.zeros(int(ptr[-1]), dtype=np.int64)
        fg_prob = np.zeros(int(ptr[-1]), dtype=np.float32)
        for k, i in enumerate(nodes):
            lo, hi = selection.fg_ptr[i], selection.fg_ptr[i + 1]
            fg_flat[ptr[k]:ptr[k + 1]] = selection.fg_flat[lo:hi]
            fg_prob[ptr[k]:ptr[k + 1]] = selection.fg_prob[lo:hi]
        mask[fg_flat] = True
        masks.append(mask.reshape(shape))
        provenance.append(
            InstanceProvenance(
                patch_pixels=selection.pixels[nodes],
                patch_flat=selection.flat[nodes],
                scores=selection.scores[nodes],
                fg_ptr=ptr,
                fg_flat=fg_flat,
                fg_prob=fg_prob,
            )
        )
    label_map = _flatten_records(provenance, shape)
    return InstanceSegmentation(
        masks=masks,
        label_map=label_map,
        provenance=provenance,
        spatial_shape=shape,
    )


def _flatten_records(provenance: list[InstanceProvenance], shape) -> np.ndarray:
    """Resolve multi-claimed pixels: highest probability, then score, then
    the claiming patch's pixel index."""
    n_px = int(np.prod(shape))
    best_p = np.full(n_px, -1.0, dtype=np.float32)
    best_score = np.full(n_px, -np.inf, dtype=np.float64)
    best_patch = np.full(n_px, np.iinfo(np.int64).max, dtype=np.int64)
    out = np.zeros(n_px, dtype=np.uint32)
    for inst_id, prov in enumerate(provenance, start=1):
        for k in range(len(prov.patch_flat)):
            lo, hi = prov.fg_ptr[k], prov.fg_ptr[k + 1]
            pos = prov.fg_flat[lo:hi]
            p = prov.fg_prob[lo:hi]
            score = float(prov.scores[k])
            pflat = int(prov.patch_flat[k])
            cur_p = best_p[pos]
            cur_s = best_score[pos]
            cur_x = best_patch[pos]
            better = (p > cur_p) | (
                (p == cur_p)
                & ((score > cur_s) | ((score == cur_s) & (pflat < cur_x)))
            )
            idx = pos[better]
            best_p[idx] = p[better]
            best_score[idx] = score
            best_patch[idx] = pflat
            out[idx] = inst_id
    return out.reshape(shape)


def flatten(seg: InstanceSegmentation, bundle: PredictionBundle) -> np.ndarray:
    """Single-label view of an overlap-capable segmentation."""
    if bundle.spatial_shape != seg.spatial_shape:
        raise ValueError("segmentation and bundle disagree on spatial shape")
    return _flatten_records(seg.provenance, seg.spatial_shape)


def filter_small(seg: InstanceSegmentation, min_size: int) -> InstanceSegmentation:
    """Drop instances smaller than ``min_size`` pixels and re-densify ids."""
    if min_size < 0:
        raise ValueError("min_size must be non-negative")
    keep = [i for i, m in enumerate(seg.masks) if int(np.count_nonzero(m)) >= min_size]
    if len(keep) == len(seg.masks):
        return seg
    masks = [seg.masks[i] for i in keep]
    provenance = [seg.provenance[i] for i in keep]
    if any(len(p.patch_flat) for p in provenance):
        label_map = _flatten_records(provenance, seg.spatial_shape)
    else:
        label_map = _paint_label_map(masks, seg.spatial_shape)
    return InstanceSegmentation(
        masks=masks,
        label_map=label_map,
        provenance=provenance,
        spatial_shape=seg.spatial_shape,
    )


def _paint_label_map(masks, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=np.uint32)
    for inst_id, mask in enumerate(masks, start=1):
        out[mask & (out == 0)] = inst_id
    return out


def _empty_provenance(dims: int) -> InstanceProvenance:
    return InstanceProvenance(
        patch_pixels=np.zeros((0, dims), dtype=np.int64),
        patch_flat=np.zeros(0, dtype=np.int64),
        scores=np.zeros(0, dtype=np.float64),
        fg_ptr=np.zeros(1, dtype=np.int64),
        fg_flat=np.zeros(0, dtype=np.int64),
        fg_prob=np.zeros(0, dtype=np.float32),
    )


def from_masks(masks: list[np.ndarray], shape) -> InstanceSegmentation:
    """Wrap plain masks (no patch provenance, e.g. a pixel-level baseline)."""
    masks = [np.asarray(m, dtype=bool) for m in masks]
    dims = len(shape)
    return InstanceSegmentation(
        masks=masks,
        label_map=_paint_label_map(masks, tuple(shape)),
        provenance=[_empty_provenance(dims) for _ in masks],
        spatial_shape=tuple(shape),
    )
