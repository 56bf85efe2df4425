"""Patch geometry and per-pixel prediction containers.

Dimension-agnostic (1d, 2d, 3d) foundations shared by the whole pipeline:
the fixed offset window around each predicting pixel, channel/offset
bookkeeping, threshold classification of patch entries, and foreground /
overlap masks derived from the raw prediction tensors.  Everything here is
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np


class PixelClass(IntEnum):
    """Tri-state classification of one patch entry."""

    BACKGROUND = -1
    UNCERTAIN = 0
    FOREGROUND = 1


def _first_nonzero_positive(vec) -> bool:
    for v in vec:
        if v != 0:
            return v > 0
    return False


@dataclass(frozen=True)
class PatchGeometry:
    """Centered box of integer offsets around a predicting pixel.

    ``extents`` are the per-axis side lengths of the offset box and must all
    be odd so the box has a unique center.  Channel ``c`` of a prediction
    tensor holds the probability for ``offsets[c]``; channels enumerate the
    box lexicographically by axis, so channel <-> offset round-trips exactly
    and the zero offset sits at ``center_channel``.

    Derived from the box is the pairwise neighborhood (all differences of
    two offsets): pairs of pixels can only interact when their difference
    lies inside it.  A canonical half of that neighborhood (plus the zero
    difference) indexes the consensus accumulator planes.
    """

    extents: tuple[int, ...]

    def __post_init__(self):
        if not isinstance(self.extents, tuple):
            object.__setattr__(self, "extents", tuple(int(e) for e in self.extents))
        if not 1 <= len(self.extents) <= 3:
            raise ValueError(f"spatial rank must be 1..3, got {len(self.extents)}")
        for e in self.extents:
            if e < 1 or e % 2 == 0:
                raise ValueError(f"extents must be odd and >= 1, got {self.extents}")

    @property
    def dims(self) -> int:
        return len(self.extents)

    @property
    def radii(self) -> tuple[int, ...]:
        return tuple(e // 2 for e in self.extents)

    @property
    def num_channels(self) -> int:
        return int(np.prod(self.extents))

    @cached_property
    def offsets(self) -> np.ndarray:
        """All offsets of the box, shape [num_channels, dims], lexicographic."""
        ranges = [range(-(e // 2), e // 2 + 1) for e in self.extents]
        out = np.array(list(itertools.product(*ranges)), dtype=np.int64)
        out.setflags(write=False)
        return out

    @property
    def center_channel(self) -> int:
        return self.num_channels // 2

    def channel_of(self, offset) -> int:
        """Channel index of an offset vector (inverse of ``offset_of``)."""
        off = tuple(int(v) for v in offset)
        if len(off) != self.dims:
            raise ValueError(f"offset rank {len(off)} != geometry rank {self.dims}")
        idx = 0
        for v, e in zip(off, self.extents):
            r = e // 2
            if not -r <= v <= r:
                raise ValueError(f"offset {off} outside patch extents {self.extents}")
            idx = idx * e + (v + r)
        return idx

    def offset_of(self, channel: int) -> tuple[int, ...]:
        if not 0 <= channel < self.num_channels:
            raise ValueError(f"channel {channel} out of range")
        return tuple(int(v) for v in self.offsets[channel])

    @property
    def pair_extents(self) -> tuple[int, ...]:
        """Per-axis side lengths of the pairwise neighborhood box."""
        return tuple(2 * e - 1 for e in self.extents)

    @cached_property
    def pair_offsets(self) -> np.ndarray:
        """Zero plus the canonical half of the pairwise neighborhood.

        Row 0 is the zero difference; the remaining rows are the differences
        whose first nonzero component is positive, in lexicographic order.
        Every pixel pair within reach maps to exactly one row (possibly
        after negating the difference).
        """
        ranges = [range(-(e - 1), e) for e in self.extents]
        half = [(0,) * self.dims]
        for d in itertools.product(*ranges):
            if any(d) and _first_nonzero_positive(d):
                half.append(d)
        out = np.array(half, dtype=np.int64)
        out.setflags(write=False)
        return out

    @property
    def num_planes(self) -> int:
        return len(self.pair_offsets)

    @cached_property
    def _pair_lut(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat lookup over the neighborhood box: difference -> (plane, swap).

        ``swap`` is 1 when the difference itself is not canonical, meaning
        the pair is stored at its second pixel under the negated difference.
        """
        pshape = self.pair_extents
        n = int(np.prod(pshape))
        plane = np.full(n, -1, dtype=np.int32)
        swap = np.zeros(n, dtype=np.uint8)
        index_of = {tuple(d): i for i, d in enumerate(self.pair_offsets)}
        for flat, d in enumerate(itertools.product(*[range(-(e - 1), e) for e in self.extents])):
            if d in index_of:
                plane[flat] = index_of[d]
            else:
                neg = tuple(-v for v in d)
                plane[flat] = index_of[neg]
                swap[flat] = 1
        plane.setflags(write=False)
        swap.setflags(write=False)
        return plane, swap

    def pair_plane(self, diff) -> tuple[int, bool]:
        """Accumulator plane and swap flag for a pixel difference vector."""
        d = tuple(int(v) for v in diff)
        for v, e in zip(d, self.extents):
            if abs(v) > e - 1:
                raise ValueError(f"difference {d} outside pair neighborhood")
        flat = 0
        for v, pe in zip(d, self.pair_extents):
            flat = flat * pe + (v + pe // 2)
        plane, swap = self._pair_lut
        return int(plane[flat]), bool(swap[flat])

    @cached_property
    def channel_pair_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Per channel pair (cy, cz): accumulator plane and swap flag."""
        offs = self.offsets
        c = self.num_channels
        plane_lut, swap_lut = self._pair_lut
        pshape = np.array(self.pair_extents, dtype=np.int64)
        centers = pshape // 2
        diffs = offs[None, :, :] - offs[:, None, :] + centers  # [cy, cz, dims]
        flat = np.zeros((c, c), dtype=np.int64)
        for k in range(self.dims):
            flat = flat * pshape[k] + diffs[:, :, k]
        plane = plane_lut[flat].astype(np.int32)
        swap = swap_lut[flat]
        plane.setflags(write=False)
        swap.setflags(write=False)
        return plane, swap


@dataclass
class GroundTruth:
    """Per-instance binary masks over one image; masks may overlap."""

    masks: list[np.ndarray]

    def __post_init__(self):
        if not self.masks:
            raise ValueError("ground truth needs at least one instance mask")
        self.masks = [np.asarray(m, dtype=bool) for m in self.masks]
        shape = self.masks[0].shape
        for i, m in enumerate(self.masks):
            if m.shape != shape:
                raise ValueError(f"mask {i} shape {m.shape} != {shape}")
            if not m.any():
                raise ValueError(f"mask {i} is empty")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.masks[0].shape

    @property
    def num_instances(self) -> int:
        return len(self.masks)

    @cached_property
    def union_mask(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        for m in self.masks:
            out |= m
        return out

    @cached_property
    def count_map(self) -> np.ndarray:
        """Number of instances claiming each pixel."""
        out = np.zeros(self.shape, dtype=np.int32)
        for m in self.masks:
            out += m
        return out

    @classmethod
    def from_label_map(cls, labels: np.ndarray) -> "GroundTruth":
        labels = np.asarray(labels)
        ids = np.unique(labels)
        return cls([labels == i for i in ids if i != 0])


@dataclass
class PredictionBundle:
    """Dense per-pixel patch predictions plus the auxiliary channels.

    ``patch_probs[c]`` holds, for every pixel x, the probability that
    x + offsets[c] belongs to the same instance as x.  ``fg_probs`` is the
    image-foreground estimate, ``ninst_probs`` the optional per-pixel
    instance-count class probabilities (class k = "k instances", last class
    = "k or more").  ``t`` is the patch classification threshold: entries
    above ``t`` are patch foreground, below ``1 - t`` patch background,
    anything else undecided, so ``t >= 0.5`` keeps the two disjoint.
    """

    geometry: PatchGeometry
    patch_probs: np.ndarray
    fg_probs: np.ndarray
    ninst_probs: np.ndarray | None = None
    t: float = 0.9
    fg_threshold: float = 0.5

    def __post_init__(self):
        self.patch_probs = _as_prob_tensor(self.patch_probs, "patch_probs")
        self.fg_probs = _as_prob_tensor(self.fg_probs, "fg_probs")
        if self.ninst_probs is not None:
            self.ninst_probs = _as_prob_tensor(self.ninst_probs, "ninst_probs")
        if not 0.5 <= self.t <= 1.0:
            raise ValueError(f"patch threshold t must lie in [0.5, 1.0], got {self.t}")
        if not 0.0 < self.fg_threshold < 1.0:
            raise ValueError(f"fg_threshold must lie in (0, 1), got {self.fg_threshold}")
        c = self.geometry.num_channels
        if self.patch_probs.ndim != self.geometry.dims + 1 or self.patch_probs.shape[0] != c:
            raise ValueError(
                f"patch_probs must have shape [{c}, spatial...], got {self.patch_probs.shape}"
            )
        spatial = self.patch_probs.shape[1:]
        if self.fg_probs.shape != spatial:
            raise ValueError(f"fg_probs shape {self.fg_probs.shape} != spatial {spatial}")
        if self.ninst_probs is not None and self.ninst_probs.shape[1:] != spatial:
            raise ValueError(
                f"ninst_probs spatial shape {self.ninst_probs.shape[1:]} != {spatial}"
            )

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.patch_probs.shape[1:]

    @property
    def num_pixels(self) -> int:
        return int(np.prod(self.spatial_shape))


def _as_prob_tensor(arr, name: str) -> np.ndarray:
    out = np.asarray(arr)
    if out.dtype != np.float32:
        out = out.astype(np.float32)
    if out.size and not np.isfinite(out).all():
        raise ValueError(f"{name} contains non-finite values")
    if out.size and (out.min() < 0.0 or out.max() > 1.0):
        raise ValueError(f"{name} contains values outside [0, 1]")
    return out


@dataclass(frozen=True)
class PatchClassification:
    """Tri-state map over the in-image part of one patch."""

    positions: np.ndarray  # [n, dims] absolute pixel coordinates
    channels: np.ndarray   # [n] channel index per position
    probs: np.ndarray      # [n] patch probabilities
    classes: np.ndarray    # [n] PixelClass values as int8

    @property
    def foreground(self) -> np.ndarray:
        return self.positions[self.classes == PixelClass.FOREGROUND]

    @property
    def background(self) -> np.ndarray:
        return self.positions[self.classes == PixelClass.BACKGROUND]

    @property
    def uncertain(self) -> np.ndarray:
        return self.positions[self.classes == PixelClass.UNCERTAIN]


def classify(bundle: PredictionBundle, x) -> PatchClassification:
    """Classify every in-image patch entry of the patch predicted at ``x``.

    Entries with probability strictly above ``t`` are foreground, strictly
    below ``1 - t`` background, everything else (boundary values included)
    undecided.  Offsets leaving the image are clipped out, so the three
    classes partition patch(x) intersected with the image domain.
    """
    x = np.asarray(x, dtype=np.int64)
    shape = bundle.spatial_shape
    if x.shape != (bundle.geometry.dims,):
        raise ValueError(f"pixel index must have rank {bundle.geometry.dims}")
    if (x < 0).any() or (x >= np.array(shape)).any():
        raise ValueError(f"pixel {tuple(x)} outside image of shape {shape}")
    positions = x[None, :] + bundle.geometry.offsets
    inside = ((positions >= 0) & (positions < np.array(shape))).all(axis=1)
    positions = positions[inside]
    channels = np.flatnonzero(inside)
    probs = bundle.patch_probs[(channels, *x)]
    classes = np.zeros(len(channels), dtype=np.int8)
    classes[probs > bundle.t] = PixelClass.FOREGROUND
    classes[probs < 1.0 - bundle.t] = PixelClass.BACKGROUND
    return PatchClassification(positions, channels, probs, classes)


@dataclass(frozen=True)
class ForegroundMask:
    """Image foreground as a dense mask plus sorted flat pixel indices."""

    mask: np.ndarray
    indices: np.ndarray

    @property
    def size(self) -> int:
        return len(self.indices)


def image_foreground(bundle: PredictionBundle) -> ForegroundMask:
    """Threshold the foreground estimate into the pixel set fg(I)."""
    mask = bundle.fg_probs > bundle.fg_threshold
    return ForegroundMask(mask=mask, indices=np.flatnonzero(mask))


def overlap_mask(bundle: PredictionBundle) -> np.ndarray:
    """Pixels whose predicted instance count is two or more.

    Takes the argmax over the instance-count class channels (ties resolve
    toward the lower count).  Without count predictions the mask is empty.
    """
    if bundle.ninst_probs is None:
        return np.zeros(bundle.spatial_shape, dtype=bool)
    return np.argmax(bundle.ninst_probs, axis=0) >= 2
