"""Consensus affinity accumulation.

Every predicting pixel casts votes on the pixel pairs inside its patch:
agreement for pairs it classifies foreground-foreground, disagreement for
foreground-background pairs, weighted by the prediction confidences.  A pair
is counted by a patch whenever the patch contains both pixels and classifies
at least one of them foreground ("informative"), regardless of whether the
vote itself is zero (an undecided partner).  The normalized vote average is
the consensus affinity in [-1, 1]; pairs no informative patch ever saw stay
undefined.

Storage: one accumulator plane per canonical pair difference (the zero
difference first, then the lexicographically positive half of the
neighborhood), each plane indexed by a compacted table of the active pixels.
Only active pixels can be pair endpoints, so nothing is lost, and sparse
foregrounds shrink the field by the foreground fraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .core import ForegroundMask, PatchGeometry, PredictionBundle


@dataclass
class ConsensusField:
    """Accumulated pair votes: ``numerator / z_count`` is the affinity.

    ``numerator[h, s]`` and ``z_count[h, s]`` describe the pair
    ``(p, p + pair_offsets[h])`` where ``p`` is the active pixel in slot
    ``s``.  ``z_count`` of zero marks an undefined affinity.
    """

    geometry: PatchGeometry
    spatial_shape: tuple[int, ...]
    active_flat: np.ndarray   # sorted flat indices of active pixels
    compact: np.ndarray       # flat index -> slot, -1 where inactive
    numerator: np.ndarray     # float64 [num_planes, num_active]
    z_count: np.ndarray       # uint32  [num_planes, num_active]
    sparse: bool
    t: float

    @property
    def pair_offsets(self) -> np.ndarray:
        return self.geometry.pair_offsets

    @property
    def num_active(self) -> int:
        return len(self.active_flat)

    def aff(self, y, z) -> float | None:
        return aff(self, y, z)


def _spatial_tables(geometry: PatchGeometry, shape: tuple[int, ...]):
    """Strides, flat channel offsets and the coordinate table for ``shape``."""
    dims = geometry.dims
    strides = np.ones(dims, dtype=np.int64)
    for k in range(dims - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    offflat = geometry.offsets @ strides
    n = int(np.prod(shape))
    coords = np.stack(
        np.unravel_index(np.arange(n, dtype=np.int64), shape), axis=1
    ).astype(np.int64)
    return strides, offflat, coords


def _color_tiles(coords: np.ndarray, xflat: np.ndarray, shape, radii):
    """Group predicting pixels into same-color tile runs.

    Tile side is at least twice the patch radius per axis, so tiles two
    steps apart (same color) write to disjoint accumulator regions.  Yields
    (xlist, tile_ptr) per color, colors in fixed ascending order.
    """
    dims = len(shape)
    tile = np.array([max(2 * r, 8) for r in radii], dtype=np.int64)
    tcoord = coords[xflat] // tile
    ntiles = np.array([(s + t - 1) // t for s, t in zip(shape, tile)], dtype=np.int64)
    tid = np.zeros(len(xflat), dtype=np.int64)
    color = np.zeros(len(xflat), dtype=np.int64)
    for k in range(dims):
        tid = tid * ntiles[k] + tcoord[:, k]
        color = color * 2 + (tcoord[:, k] & 1)
    order = np.lexsort((xflat, tid, color))
    xs = xflat[order]
    tid = tid[order]
    color = color[order]
    out = []
    for col in range(2 ** dims):
        lo, hi = np.searchsorted(color, [col, col + 1])
        if lo == hi:
            continue
        xl = xs[lo:hi]
        boundaries = np.flatnonzero(np.diff(tid[lo:hi])) + 1
        ptr = np.concatenate(
            [[0], boundaries, [hi - lo]]
        ).astype(np.int64)
        out.append((xl, ptr))
    return out


def _resolve_masks(bundle, fg, discard):
    shape = bundle.spatial_shape
    fg_mask = fg.mask if isinstance(fg, ForegroundMask) else np.asarray(fg, dtype=bool)
    if fg_mask.shape != shape:
        raise ValueError(f"foreground shape {fg_mask.shape} != bundle spatial {shape}")
    if discard is None:
        discard = np.zeros(shape, dtype=bool)
    else:
        discard = np.asarray(discard, dtype=bool)
        if discard.shape != shape:
            raise ValueError(f"discard shape {discard.shape} != bundle spatial {shape}")
    return fg_mask, discard


def accumulate(
    bundle: PredictionBundle,
    fg,
    discard=None,
    *,
    sparse: bool = False,
    threads: int = 1,
) -> ConsensusField:
    """Accumulate the consensus over all predicting pixels.

    Predicting pixels and pair endpoints are the non-discarded pixels; with
    ``sparse`` both are additionally restricted to the image foreground
    ``fg`` (patches are intersected with it).  Pairs touching a discarded
    pixel end up with ``z_count`` zero.  ``threads`` only distributes work,
    the result is bit-identical for any value.
    """
    geometry = bundle.geometry
    shape = bundle.spatial_shape
    fg_mask, discard = _resolve_masks(bundle, fg, discard)

    active = ~discard
    if sparse:
        active &= fg_mask
    active_flat = np.flatnonzero(active)
    n = active.size
    compact = np.full(n, -1, dtype=np.int64)
    compact[active_flat] = np.arange(len(active_flat), dtype=np.int64)

    numerator = np.zeros((geometry.num_planes, len(active_flat)), dtype=np.float64)
    z_count = np.zeros((geometry.num_planes, len(active_flat)), dtype=np.uint32)

    _, offflat, coords = _spatial_tables(geometry, shape)
    pair_plane, pair_swap = geometry.channel_pair_tables
    probs2 = bundle.patch_probs.reshape(geometry.num_channels, -1)
    active_u8 = active.astype(np.uint8).ravel()
    shape_arr = np.array(shape, dtype=np.int64)

    _kernels.set_threads(threads)
    for xlist, tile_ptr in _color_tiles(coords, active_flat, shape, geometry.radii):
        _kernels.accumulate_tiles(
            xlist, tile_ptr,
            probs2, active_u8, coords, shape_arr,
            geometry.offsets, offflat,
            pair_plane, pair_swap, compact, float(bundle.t),
            numerator, z_count,
        )

    return ConsensusField(
        geometry=geometry,
        spatial_shape=shape,
        active_flat=active_flat,
        compact=compact,
        numerator=numerator,
        z_count=z_count,
        sparse=sparse,
        t=float(bundle.t),
    )


def aff(field: ConsensusField, y, z) -> float | None:
    """Consensus affinity of a pixel pair, or None where undefined.

    Undefined covers pairs outside the pairwise neighborhood, pairs with an
    inactive endpoint and pairs no informative patch voted on.  The lookup
    is symmetric in (y, z).
    """
    y = np.asarray(y, dtype=np.int64)
    z = np.asarray(z, dtype=np.int64)
    d = z - y
    for v, e in zip(d, field.geometry.extents):
        if abs(int(v)) > e - 1:
            return None
    plane, swap = field.geometry.pair_plane(d)
    base = z if swap else y
    shape = field.spatial_shape
    if (base < 0).any() or (base >= np.array(shape)).any():
        return None
    flat = int(np.ravel_multi_index(tuple(base), shape))
    slot = field.compact[flat]
    if slot < 0:
        return None
    count = field.z_count[plane, slot]
    if count == 0:
        return None
    return float(field.numerator[plane, slot] / count)
