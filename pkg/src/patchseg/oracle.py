"""Synthetic ground truth and ideal predictions.

``synth`` renders the exact prediction a perfect network would produce for a
given ground truth: a patch entry is 1 when center and neighbor share an
instance, 0 otherwise, and pixels claimed by several instances get a
maximally uncertain patch (their local shape is ill-defined).  ``corrupt``
degrades such predictions reproducibly, which gives the whole pipeline an
end-to-end test bed without any trained network.

All randomness flows through numpy's Philox generator, a counter-based
64-bit RNG with a stable cross-platform stream, so identical seeds give
identical fixtures everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GroundTruth, PatchGeometry, PredictionBundle

_LOGIT_EPS = 1e-6


class PlacementFailure(RuntimeError):
    """Could not place the requested shapes after bounded retries."""


@dataclass(frozen=True)
class NoiseSpec:
    """Controlled corruption: entry flips, then additive logit noise."""

    flip_prob: float = 0.0
    jitter_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if self.jitter_sigma < 0.0:
            raise ValueError(f"jitter_sigma must be >= 0, got {self.jitter_sigma}")


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def synth(
    gt: GroundTruth,
    geometry: PatchGeometry,
    *,
    t: float = 0.9,
    fg_threshold: float = 0.5,
) -> PredictionBundle:
    """Ideal predictions for a ground truth.

    Patch entries are the same-instance indicator; overlap pixels (instance
    count >= 2) get every patch entry set to 0.5; the foreground channel is
    the union of the masks and the count channels one-hot encode the
    per-pixel instance count capped at "2 or more".
    """
    if geometry.dims != len(gt.shape):
        raise ValueError(f"geometry rank {geometry.dims} != ground truth rank {len(gt.shape)}")
    for e, s in zip(geometry.extents, gt.shape):
        if e > s:
            raise ValueError(f"patch extents {geometry.extents} exceed image shape {gt.shape}")
    shape = gt.shape
    probs = np.zeros((geometry.num_channels, *shape), dtype=np.float32)
    for mask in gt.masks:
        for c, dx in enumerate(geometry.offsets):
            probs[c][mask & _shifted(mask, dx)] = 1.0
    count = gt.count_map
    overlap = count >= 2
    if overlap.any():
        probs[:, overlap] = 0.5
    ninst = np.zeros((3, *shape), dtype=np.float32)
    capped = np.minimum(count, 2)
    for k in range(3):
        ninst[k][capped == k] = 1.0
    return PredictionBundle(
        geometry=geometry,
        patch_probs=probs,
        fg_probs=gt.union_mask.astype(np.float32),
        ninst_probs=ninst,
        t=t,
        fg_threshold=fg_threshold,
    )


def _shifted(mask: np.ndarray, dx) -> np.ndarray:
    """mask evaluated at x + dx, False where the offset leaves the image."""
    out = np.zeros_like(mask)
    src = []
    dst = []
    for d, s in zip(dx, mask.shape):
        d = int(d)
        if abs(d) >= s:
            return out
        if d >= 0:
            src.append(slice(d, s))
            dst.append(slice(0, s - d))
        else:
            src.append(slice(0, s + d))
            dst.append(slice(-d, s))
    out[tuple(dst)] = mask[tuple(src)]
    return out


def corrupt(bundle: PredictionBundle, noise: NoiseSpec) -> PredictionBundle:
    """Apply flips then logit jitter to the patch predictions only.

    Deterministic for a given seed.  With zero noise the patch tensor is
    returned bit-identical; flips alone map v to exactly 1 - v; the logit
    step clamps to [1e-6, 1 - 1e-6] so endpoints stay finite.
    """
    p = bundle.patch_probs
    if noise.flip_prob > 0.0 or noise.jitter_sigma > 0.0:
        rng = _rng(noise.seed)
        p = p.astype(np.float64)
        if noise.flip_prob > 0.0:
            flips = rng.random(p.shape) < noise.flip_prob
            p = np.where(flips, 1.0 - p, p)
        if noise.jitter_sigma > 0.0:
            p = np.clip(p, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
            z = np.log(p / (1.0 - p)) + rng.normal(0.0, noise.jitter_sigma, p.shape)
            p = 1.0 / (1.0 + np.exp(-z))
            p = np.clip(p, _LOGIT_EPS, 1.0 - _LOGIT_EPS)
        p = p.astype(np.float32)
    else:
        p = p.copy()
    return PredictionBundle(
        geometry=bundle.geometry,
        patch_probs=p,
        fg_probs=bundle.fg_probs,
        ninst_probs=bundle.ninst_probs,
        t=bundle.t,
        fg_threshold=bundle.fg_threshold,
    )


def make_shapes(kind: str, shape, seed: int, **params) -> GroundTruth:
    """Random ground truth of one of three families.

    ``blobs``: non-overlapping random ellipses (2d) or ellipsoids (3d).
    ``strips``: non-overlapping thick random polylines (2d).
    ``crossing-strips``: two oblique straight strips forced to intersect
    around the image center (2d); exactly their intersection has instance
    count two.
    """
    if kind == "blobs":
        return _make_blobs(shape, seed, **params)
    if kind == "strips":
        return _make_strips(shape, seed, **params)
    if kind == "crossing-strips":
        return _make_crossing_strips(shape, seed, **params)
    raise ValueError(f"unknown shape kind {kind!r}")


def _resolve_count(rng, value) -> int:
    if isinstance(value, int):
        return value
    lo, hi = value
    return int(rng.integers(lo, hi + 1))


def _make_blobs(shape, seed, num_instances=(3, 8), semi_axes=(2.5, 7.0), max_tries=60):
    rng = _rng(seed)
    dims = len(shape)
    n = _resolve_count(rng, num_instances)
    grids = np.indices(shape).astype(np.float64)
    union = np.zeros(shape, dtype=bool)
    masks = []
    for _ in range(n):
        placed = False
        for _ in range(max_tries):
            axes = rng.uniform(semi_axes[0], semi_axes[1], size=dims)
            margin = axes.max() + 1.0
            if any(s - 2 * margin <= 0 for s in shape):
                raise PlacementFailure(f"blobs of size {axes} do not fit into {shape}")
            center = np.array([rng.uniform(margin, s - margin) for s in shape])
            if dims == 2:
                theta = rng.uniform(0.0, math.pi)
                dy = grids[0] - center[0]
                dx = grids[1] - center[1]
                u = math.cos(theta) * dy + math.sin(theta) * dx
                v = -math.sin(theta) * dy + math.cos(theta) * dx
                mask = (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0
            else:
                q = np.zeros(shape, dtype=np.float64)
                for k in range(dims):
                    q += ((grids[k] - center[k]) / axes[k]) ** 2
                mask = q <= 1.0
            if mask.any() and not (mask & union).any():
                union |= mask
                masks.append(mask)
                placed = True
                break
        if not placed:
            raise PlacementFailure(
                f"could not place blob {len(masks) + 1} of {n} in {shape}"
            )
    return GroundTruth(masks)


def _disk_offsets(width: float) -> np.ndarray:
    r = width / 2.0
    ri = int(math.ceil(r))
    span = np.arange(-ri, ri + 1)
    dy, dx = np.meshgrid(span, span, indexing="ij")
    keep = dy * dy + dx * dx <= r * r
    return np.stack([dy[keep], dx[keep]], axis=1)


def _make_strips(shape, seed, num_instances=(2, 4), width=5, length=None,
                 segments=3, max_turn=0.5, max_tries=60):
    if len(shape) != 2:
        raise ValueError("strips are 2d shapes")
    rng = _rng(seed)
    n = _resolve_count(rng, num_instances)
    if length is None:
        length = 0.7 * min(shape)
    disk = _disk_offsets(width)
    margin = width / 2.0 + 1.0
    union = np.zeros(shape, dtype=bool)
    masks = []
    for _ in range(n):
        placed = False
        for _ in range(max_tries):
            pos = np.array([rng.uniform(margin, s - margin) for s in shape])
            heading = rng.uniform(0.0, 2.0 * math.pi)
            pts = [pos.copy()]
            ok = True
            for _ in range(segments):
                heading += rng.uniform(-max_turn, max_turn)
                step = np.array([math.sin(heading), math.cos(heading)])
                seg_len = length / segments
                for _ in range(int(seg_len / 0.5)):
                    pos = pos + 0.5 * step
                    if not all(margin <= p <= s - margin for p, s in zip(pos, shape)):
                        ok = False
                        break
                    pts.append(pos.copy())
                if not ok:
                    break
            if not ok:
                continue
            mask = np.zeros(shape, dtype=bool)
            centers = np.rint(np.array(pts)).astype(np.int64)
            stamped = centers[:, None, :] + disk[None, :, :]
            stamped = stamped.reshape(-1, 2)
            inside = ((stamped >= 0) & (stamped < np.array(shape))).all(axis=1)
            stamped = stamped[inside]
            mask[stamped[:, 0], stamped[:, 1]] = True
            if mask.any() and not (mask & union).any():
                union |= mask
                masks.append(mask)
                placed = True
                break
        if not placed:
            raise PlacementFailure(f"could not place strip {len(masks) + 1} of {n}")
    return GroundTruth(masks)


def _make_crossing_strips(shape, seed, width=5, angle_jitter=math.pi / 18):
    if len(shape) != 2:
        raise ValueError("crossing strips are 2d shapes")
    rng = _rng(seed)
    sy, sx = shape
    center = np.array([
        rng.uniform(0.3 * sy, 0.7 * sy),
        rng.uniform(0.3 * sx, 0.7 * sx),
    ])
    theta = rng.uniform(math.radians(35.0), math.radians(55.0))
    phi = theta + math.pi / 2.0 + rng.uniform(-angle_jitter, angle_jitter)
    grids = np.indices(shape).astype(np.float64)
    dy = grids[0] - center[0]
    dx = grids[1] - center[1]
    masks = []
    for ang in (theta, phi):
        # distance to the infinite line through the center with direction ang
        normal = (-math.cos(ang), math.sin(ang))
        dist = np.abs(normal[0] * dy + normal[1] * dx)
        masks.append(dist <= width / 2.0)
    if not (masks[0] & masks[1]).any():
        raise PlacementFailure("strips failed to intersect")
    return GroundTruth(masks)
