"""Patch scoring against the consensus, ranking and covering subset selection.

A patch's score averages how well its own foreground/background split agrees
with the consensus affinities, over all patch pixel pairs with at least one
foreground endpoint.  Ranked patches then cover the image foreground twice
over: a single high-to-low pass pre-selects every patch that still covers new
foreground, and a thin-out pass greedily re-picks the pre-selected patches by
remaining coverage, dropping the redundant ones.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .consensus import ConsensusField, _resolve_masks, _spatial_tables
from .core import PredictionBundle

log = logging.getLogger(__name__)


class EmptyForegroundError(ValueError):
    """Raised when asked to score a patch with an empty foreground."""


@dataclass(frozen=True)
class ScoredPatch:
    x: tuple[int, ...]
    score: float
    fg_size: int


class _PatchListMixin:
    def __len__(self) -> int:
        return len(self.flat)

    def __getitem__(self, i: int) -> ScoredPatch:
        return ScoredPatch(
            x=tuple(int(v) for v in self.pixels[i]),
            score=float(self.scores[i]),
            fg_size=int(self.fg_ptr[i + 1] - self.fg_ptr[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def patch_foreground(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Flat pixel indices and probabilities of patch i's foreground."""
        lo, hi = self.fg_ptr[i], self.fg_ptr[i + 1]
        return self.fg_flat[lo:hi], self.fg_prob[lo:hi]


@dataclass
class RankedPatches(_PatchListMixin):
    """Scored candidate patches, best first; carries their foregrounds."""

    pixels: np.ndarray    # [m, dims] predicting pixel coordinates
    flat: np.ndarray      # [m] flat predicting pixel indices
    scores: np.ndarray    # [m]
    fg_ptr: np.ndarray    # [m + 1] CSR bounds into fg_flat / fg_prob
    fg_flat: np.ndarray   # claimable foreground positions (flat)
    fg_prob: np.ndarray   # matching probabilities
    spatial_shape: tuple[int, ...]


@dataclass
class PatchSelection(_PatchListMixin):
    """An ordered subset of ranked patches plus its coverage bookkeeping."""

    pixels: np.ndarray
    flat: np.ndarray
    scores: np.ndarray
    fg_ptr: np.ndarray
    fg_flat: np.ndarray
    fg_prob: np.ndarray
    coverage: np.ndarray   # bool image mask of covered target foreground
    uncovered: np.ndarray  # flat indices of target pixels no patch covers
    spatial_shape: tuple[int, ...]


def _candidate_context(field: ConsensusField, bundle: PredictionBundle, fg, discard):
    geometry = bundle.geometry
    shape = bundle.spatial_shape
    if field.spatial_shape != shape:
        raise ValueError("consensus field and bundle disagree on spatial shape")
    fg_mask, discard = _resolve_masks(bundle, fg, discard)
    active = np.zeros(int(np.prod(shape)), dtype=np.uint8)
    active[field.active_flat] = 1
    # claimable positions: everything the pipeline may assign to an instance
    # later on; discarded pixels stay claimable, inactive background in
    # sparse mode does not.
    claim = fg_mask if field.sparse else np.ones(shape, dtype=bool)
    claim_u8 = claim.astype(np.uint8).ravel()
    _, offflat, coords = _spatial_tables(geometry, shape)
    pair_plane, pair_swap = geometry.channel_pair_tables
    probs2 = bundle.patch_probs.reshape(geometry.num_channels, -1)
    shape_arr = np.array(shape, dtype=np.int64)
    return fg_mask, discard, active, claim_u8, offflat, coords, pair_plane, pair_swap, probs2, shape_arr


def score_patch(field: ConsensusField, bundle: PredictionBundle, x) -> float:
    """Agreement of one patch with the consensus, in [-1, 1]."""
    from .core import image_foreground

    x = np.asarray(x, dtype=np.int64)
    flat = int(np.ravel_multi_index(tuple(x), bundle.spatial_shape))
    cands = np.array([flat], dtype=np.int64)
    (_, _, active, claim_u8, offflat, coords,
     pair_plane, pair_swap, probs2, shape_arr) = _candidate_context(
        field, bundle, image_foreground(bundle), None)
    scores = np.zeros(1, dtype=np.float64)
    fg_sizes = np.zeros(1, dtype=np.int64)
    _kernels.score_patches(
        cands, probs2, active, claim_u8, coords, shape_arr,
        bundle.geometry.offsets, offflat, pair_plane, pair_swap,
        field.compact, float(bundle.t),
        field.numerator, field.z_count,
        scores, fg_sizes,
    )
    if fg_sizes[0] == 0:
        raise EmptyForegroundError(f"patch at {tuple(int(v) for v in x)} has empty foreground")
    return float(scores[0])


def rank(
    field: ConsensusField,
    bundle: PredictionBundle,
    fg,
    discard=None,
    *,
    threads: int = 1,
) -> RankedPatches:
    """Score and order every non-discarded foreground patch.

    Order is score descending, then foreground size descending, then
    lexicographic pixel index, so the result is deterministic.
    """
    (fg_mask, discard_mask, active, claim_u8, offflat, coords,
     pair_plane, pair_swap, probs2, shape_arr) = _candidate_context(field, bundle, fg, discard)
    geometry = bundle.geometry
    cands = np.flatnonzero(fg_mask.ravel() & ~discard_mask.ravel())

    scores = np.zeros(len(cands), dtype=np.float64)
    fg_sizes = np.zeros(len(cands), dtype=np.int64)
    _kernels.set_threads(threads)
    _kernels.score_patches(
        cands, probs2, active, claim_u8, coords, shape_arr,
        geometry.offsets, offflat, pair_plane, pair_swap,
        field.compact, float(bundle.t),
        field.numerator, field.z_count,
        scores, fg_sizes,
    )

    keep = fg_sizes > 0
    cands, scores, fg_sizes = cands[keep], scores[keep], fg_sizes[keep]

    fg_ptr = np.zeros(len(cands) + 1, dtype=np.int64)
    np.cumsum(fg_sizes, out=fg_ptr[1:])
    fg_flat = np.zeros(int(fg_ptr[-1]), dtype=np.int64)
    fg_prob = np.zeros(int(fg_ptr[-1]), dtype=np.float32)
    _kernels.fill_patch_foregrounds(
        cands, probs2, claim_u8, coords, shape_arr,
        geometry.offsets, offflat, float(bundle.t),
        fg_ptr, fg_flat, fg_prob,
    )

    order = rank_order(scores, fg_sizes, cands)
    return RankedPatches(
        pixels=coords[cands[order]],
        flat=cands[order],
        scores=scores[order],
        fg_ptr=_permuted_csr_ptr(fg_sizes, order),
        fg_flat=_permute_csr_values(fg_flat, fg_ptr, fg_sizes, order),
        fg_prob=_permute_csr_values(fg_prob, fg_ptr, fg_sizes, order),
        spatial_shape=bundle.spatial_shape,
    )


def rank_order(scores, fg_sizes, flat) -> np.ndarray:
    """Ranking permutation: score desc, foreground size desc, pixel asc."""
    return np.lexsort((flat, -np.asarray(fg_sizes), -np.asarray(scores)))


def _permuted_csr_ptr(sizes, order):
    ptr = np.zeros(len(order) + 1, dtype=np.int64)
    np.cumsum(sizes[order], out=ptr[1:])
    return ptr


def _permute_csr_values(values, ptr, sizes, order):
    lengths = sizes[order]
    total = int(lengths.sum())
    if total == 0:
        return values[:0].copy()
    starts = ptr[:-1][order]
    new_ptr = np.concatenate([[0], np.cumsum(lengths)])
    gather = np.arange(total, dtype=np.int64)
    gather += np.repeat(starts - new_ptr[:-1], lengths)
    return values[gather]


def greedy_cover(ranked: RankedPatches, fg, discard=None) -> PatchSelection:
    """Pre-select ranked patches until the image foreground is covered.

    Walks the ranking once and keeps every patch that still covers
    uncovered foreground.  The whole foreground is the target, including
    discarded (overlap) pixels, which only neighboring patches can claim;
    foreground no candidate patch can cover remains uncovered and is
    reported (a warning for regular foreground, expected for overlap
    regions wider than the patch reach), never an error.
    """
    fg_mask = fg.mask if hasattr(fg, "mask") else np.asarray(fg, dtype=bool)
    if discard is None:
        discard = np.zeros(fg_mask.shape, dtype=bool)
    else:
        discard = np.asarray(discard, dtype=bool)
    target = fg_mask
    target_u8 = target.astype(np.uint8).ravel()

    covered = np.zeros(target_u8.size, dtype=bool)
    selected = np.zeros(len(ranked), dtype=np.uint8)
    _kernels.greedy_cover_walk(ranked.fg_ptr, ranked.fg_flat, target_u8, covered, selected)

    chosen = np.flatnonzero(selected)
    uncovered = np.flatnonzero(target.ravel() & ~covered)
    plain_uncovered = np.count_nonzero(~discard.ravel()[uncovered])
    if plain_uncovered:
        log.warning(
            "%d foreground pixels are coverable by no candidate patch", plain_uncovered
        )
    sizes = ranked.fg_ptr[1:] - ranked.fg_ptr[:-1]
    return PatchSelection(
        pixels=ranked.pixels[chosen],
        flat=ranked.flat[chosen],
        scores=ranked.scores[chosen],
        fg_ptr=_permuted_csr_ptr(sizes, chosen),
        fg_flat=_permute_csr_values(ranked.fg_flat, ranked.fg_ptr, sizes, chosen),
        fg_prob=_permute_csr_values(ranked.fg_prob, ranked.fg_ptr, sizes, chosen),
        coverage=covered.reshape(ranked.spatial_shape),
        uncovered=uncovered,
        spatial_shape=ranked.spatial_shape,
    )


def thin_out(preselection: PatchSelection, fg=None, discard=None) -> PatchSelection:
    """Drop redundant pre-selected patches while preserving coverage.

    Repeatedly picks the pre-selected patch covering the most still-uncovered
    foreground (ties: higher score, then pixel index) until coverage matches
    the pre-selection's.  Uses lazy gain re-evaluation, which reproduces the
    plain greedy loop exactly because gains only ever shrink.
    """
    target = preselection.coverage.ravel()
    want = int(np.count_nonzero(target))
    covered = np.zeros(target.size, dtype=bool)

    m = len(preselection)
    heap = []
    max_gain = 0
    for i in range(m):
        pos, _ = preselection.patch_foreground(i)
        gain = int(np.count_nonzero(target[pos]))
        max_gain = max(max_gain, gain)
        heap.append((-gain, -preselection.scores[i], int(preselection.flat[i]), i))
    heapq.heapify(heap)

    picked: list[int] = []
    have = 0
    guard = 0
    # each entry re-enters the heap with a strictly smaller integer gain, so
    # pops are bounded by m * (max_gain + 2)
    pop_limit = m * (max_gain + 2) + 1
    while have < want:
        guard += 1
        if guard > pop_limit:
            raise RuntimeError("thin-out failed to make progress")
        neg_gain, neg_score, flat, i = heapq.heappop(heap)
        pos, _ = preselection.patch_foreground(i)
        fresh = int(np.count_nonzero(target[pos] & ~covered[pos]))
        if fresh == -neg_gain:
            picked.append(i)
            covered[pos[target[pos]]] = True
            have += fresh
        else:
            heapq.heappush(heap, (-fresh, neg_score, flat, i))

    order = np.array(picked, dtype=np.int64)
    sizes = preselection.fg_ptr[1:] - preselection.fg_ptr[:-1]
    return PatchSelection(
        pixels=preselection.pixels[order],
        flat=preselection.flat[order],
        scores=preselection.scores[order],
        fg_ptr=_permuted_csr_ptr(sizes, order),
        fg_flat=_permute_csr_values(preselection.fg_flat, preselection.fg_ptr, sizes, order),
        fg_prob=_permute_csr_values(preselection.fg_prob, preselection.fg_ptr, sizes, order),
        coverage=preselection.coverage.copy(),
        uncovered=preselection.uncovered.copy(),
        spatial_shape=preselection.spatial_shape,
    )
