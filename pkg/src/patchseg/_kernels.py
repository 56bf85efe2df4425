"""Compiled inner loops for consensus accumulation, scoring and pair affinities.

All kernels operate on flattened spatial arrays (C-order) and are rank
agnostic: ``coords[x]`` carries the multi-index of pixel ``x`` and per-axis
bound checks replace any nd indexing.  Accumulation parallelism uses tile
coloring: the caller partitions predicting pixels into spatial tiles and
schedules one tile color at a time, so concurrently processed tiles write to
provably disjoint accumulator slots.  Per accumulator entry the contribution
order is therefore fixed (color, then tile, then pixel), which makes results
bit-identical for every thread count.
"""

from __future__ import annotations

import numba
import numpy as np
from numba import njit, prange


def effective_threads(requested: int) -> int:
    """Clamp a requested thread count to what the runtime provides."""
    return max(1, min(int(requested), numba.config.NUMBA_NUM_THREADS))


def set_threads(requested: int) -> int:
    n = effective_threads(requested)
    numba.set_num_threads(n)
    return n


@njit(parallel=True, cache=True)
def accumulate_tiles(
    xlist, tile_ptr,
    probs2, active, coords, shape, offs, offflat,
    pair_plane, pair_swap, compact, t,
    numerator, z_count,
):
    c_total = offs.shape[0]
    dims = offs.shape[1]
    for ti in prange(tile_ptr.size - 1):
        vch = np.empty(c_total, np.int64)
        vslot = np.empty(c_total, np.int64)
        vcls = np.empty(c_total, np.int8)
        vp = np.empty(c_total, np.float64)
        for xi in range(tile_ptr[ti], tile_ptr[ti + 1]):
            x = xlist[xi]
            nv = 0
            for c in range(c_total):
                ok = True
                for k in range(dims):
                    q = coords[x, k] + offs[c, k]
                    if q < 0 or q >= shape[k]:
                        ok = False
                        break
                if not ok:
                    continue
                qf = x + offflat[c]
                if active[qf] == 0:
                    continue
                p = np.float64(probs2[c, x])
                cls = np.int8(0)
                if p > t:
                    cls = np.int8(1)
                elif p < 1.0 - t:
                    cls = np.int8(-1)
                vch[nv] = c
                vslot[nv] = compact[qf]
                vcls[nv] = cls
                vp[nv] = p
                nv += 1
            for i in range(nv):
                if vcls[i] != 1:
                    continue
                ci = vch[i]
                si = vslot[i]
                pi = vp[i]
                # the pair of a foreground pixel with itself (zero plane)
                numerator[0, si] += pi * pi
                z_count[0, si] += 1
                for j in range(nv):
                    if j == i:
                        continue
                    cj = vcls[j]
                    if cj == 1 and j < i:
                        continue
                    cjch = vch[j]
                    pl = pair_plane[ci, cjch]
                    if pair_swap[ci, cjch]:
                        base = vslot[j]
                    else:
                        base = si
                    if cj == 1:
                        numerator[pl, base] += pi * vp[j]
                    elif cj == -1:
                        numerator[pl, base] -= pi * (1.0 - vp[j])
                    z_count[pl, base] += 1


@njit(parallel=True, cache=True)
def score_patches(
    cands,
    probs2, active, claim, coords, shape, offs, offflat,
    pair_plane, pair_swap, compact, t,
    numerator, z_count,
    out_score, out_fg,
):
    c_total = offs.shape[0]
    dims = offs.shape[1]
    for ii in prange(cands.size):
        vch = np.empty(c_total, np.int64)
        vslot = np.empty(c_total, np.int64)
        vcls = np.empty(c_total, np.int8)
        vp = np.empty(c_total, np.float64)
        x = cands[ii]
        nv = 0
        fgc = 0
        for c in range(c_total):
            ok = True
            for k in range(dims):
                q = coords[x, k] + offs[c, k]
                if q < 0 or q >= shape[k]:
                    ok = False
                    break
            if not ok:
                continue
            qf = x + offflat[c]
            p = np.float64(probs2[c, x])
            if p > t and claim[qf] != 0:
                fgc += 1
            if active[qf] == 0:
                continue
            cls = np.int8(0)
            if p > t:
                cls = np.int8(1)
            elif p < 1.0 - t:
                cls = np.int8(-1)
            vch[nv] = c
            vslot[nv] = compact[qf]
            vcls[nv] = cls
            vp[nv] = p
            nv += 1
        acc = 0.0
        zs = 0
        for i in range(nv):
            if vcls[i] != 1:
                continue
            ci = vch[i]
            si = vslot[i]
            for j in range(nv):
                if j == i:
                    continue
                cj = vcls[j]
                if cj == 1 and j < i:
                    continue
                cjch = vch[j]
                pl = pair_plane[ci, cjch]
                if pair_swap[ci, cjch]:
                    base = vslot[j]
                else:
                    base = si
                z = z_count[pl, base]
                if cj == 1:
                    if z > 0:
                        acc += numerator[pl, base] / z
                elif cj == -1:
                    if z > 0:
                        acc -= numerator[pl, base] / z
                zs += 1
        out_score[ii] = acc / zs if zs > 0 else 0.0
        out_fg[ii] = fgc


@njit(parallel=True, cache=True)
def fill_patch_foregrounds(
    cands,
    probs2, claim, coords, shape, offs, offflat, t,
    fg_ptr, fg_flat, fg_prob,
):
    c_total = offs.shape[0]
    dims = offs.shape[1]
    for ii in prange(cands.size):
        x = cands[ii]
        k_out = fg_ptr[ii]
        for c in range(c_total):
            ok = True
            for k in range(dims):
                q = coords[x, k] + offs[c, k]
                if q < 0 or q >= shape[k]:
                    ok = False
                    break
            if not ok:
                continue
            qf = x + offflat[c]
            p = probs2[c, x]
            if p > t and claim[qf] != 0:
                fg_flat[k_out] = qf
                fg_prob[k_out] = p
                k_out += 1


@njit(cache=True)
def greedy_cover_walk(fg_ptr, fg_flat, target, covered, selected):
    """Single ordered pass; selects patches that still cover new target pixels.

    ``covered`` must start all-False and is updated in place (only target
    pixels are ever marked).  Returns the number of target pixels covered.
    """
    remaining = 0
    for q in range(target.size):
        if target[q] != 0:
            remaining += 1
    total = remaining
    for i in range(fg_ptr.size - 1):
        if remaining == 0:
            break
        new = 0
        for k in range(fg_ptr[i], fg_ptr[i + 1]):
            q = fg_flat[k]
            if target[q] != 0 and not covered[q]:
                new += 1
        if new > 0:
            selected[i] = 1
            for k in range(fg_ptr[i], fg_ptr[i + 1]):
                q = fg_flat[k]
                if target[q] != 0:
                    covered[q] = True
            remaining -= new
    return total - remaining


@njit(parallel=True, cache=True)
def pair_affinities(
    pa, pb, node_ptr, node_flat, coords,
    box_rad, lut_plane, lut_swap, compact,
    numerator, z_count,
    out_sum, out_cnt,
):
    dims = coords.shape[1]
    for e in prange(pa.size):
        a = pa[e]
        b = pb[e]
        acc = 0.0
        n = 0
        for vi in range(node_ptr[a], node_ptr[a + 1]):
            v = node_flat[vi]
            for wi in range(node_ptr[b], node_ptr[b + 1]):
                w = node_flat[wi]
                flat = 0
                ok = True
                for k in range(dims):
                    d = coords[w, k] - coords[v, k]
                    if d < -box_rad[k] or d > box_rad[k]:
                        ok = False
                        break
                    flat = flat * (2 * box_rad[k] + 1) + (d + box_rad[k])
                if not ok:
                    continue
                pl = lut_plane[flat]
                if lut_swap[flat]:
                    base = w
                else:
                    base = v
                slot = compact[base]
                if slot < 0:
                    continue
                z = z_count[pl, slot]
                if z > 0:
                    acc += numerator[pl, slot] / z
                    n += 1
        out_sum[e] = acc
        out_cnt[e] = n
