"""Brute-force reference implementations used to cross-check the fast paths.

Everything here follows the defining formulas literally, with python loops
over explicit position sets, and shares no code with the package internals.
Only usable at toy scale.
"""

from __future__ import annotations

import itertools

import numpy as np


def classify_value(p: float, t: float) -> int:
    if p > t:
        return 1
    if p < 1.0 - t:
        return -1
    return 0


def patch_positions(bundle, x, active=None) -> dict:
    """In-bounds patch positions of x -> (probability, class).

    ``active`` (bool mask) optionally restricts the positions, mirroring
    discard exclusion and sparse foreground restriction.
    """
    geom = bundle.geometry
    shape = bundle.spatial_shape
    out = {}
    for c in range(geom.num_channels):
        pos = tuple(int(a + b) for a, b in zip(x, geom.offsets[c]))
        if any(q < 0 or q >= s for q, s in zip(pos, shape)):
            continue
        if active is not None and not active[pos]:
            continue
        p = float(bundle.patch_probs[(c, *tuple(x))])
        out[pos] = (p, classify_value(p, bundle.t))
    return out


def active_mask(bundle, fg_mask, discard=None, sparse=False) -> np.ndarray:
    shape = bundle.spatial_shape
    if discard is None:
        discard = np.zeros(shape, dtype=bool)
    active = ~discard
    if sparse:
        active = active & fg_mask
    return active


def consensus_naive(bundle, fg_mask, discard=None, sparse=False) -> dict:
    """{(y, z) sorted pair: (numerator, z_count)} over all voted pairs."""
    shape = bundle.spatial_shape
    active = active_mask(bundle, fg_mask, discard, sparse)
    table: dict[tuple, tuple[float, int]] = {}
    for x in itertools.product(*map(range, shape)):
        if not active[x]:
            continue
        items = sorted(patch_positions(bundle, x, active).items())
        for i, (y, (py, cy)) in enumerate(items):
            for z, (pz, cz) in items[i:]:
                if cy != 1 and cz != 1:
                    continue
                num, cnt = table.get((y, z), (0.0, 0))
                if cy == 1 and cz == 1:
                    num += py * pz
                elif cy == 1 and cz == -1:
                    num -= py * (1.0 - pz)
                elif cy == -1 and cz == 1:
                    num -= (1.0 - py) * pz
                table[(y, z)] = (num, cnt + 1)
    return table


def aff_naive(table: dict, y, z) -> float | None:
    key = (min(y, z), max(y, z))
    if key not in table:
        return None
    num, cnt = table[key]
    return num / cnt


def score_naive(bundle, table, x, fg_mask, discard=None, sparse=False) -> tuple[float, int]:
    """(score, z_score) of the patch at x against a naive consensus table."""
    active = active_mask(bundle, fg_mask, discard, sparse)
    items = sorted(patch_positions(bundle, x, active).items())
    num = 0.0
    z_score = 0
    for i, (y, (_, cy)) in enumerate(items):
        for z, (_, cz) in items[i + 1:]:
            if cy != 1 and cz != 1:
                continue
            z_score += 1
            a = aff_naive(table, y, z)
            if a is None:
                continue
            if cy == 1 and cz == 1:
                num += a
            elif (cy == 1 and cz == -1) or (cy == -1 and cz == 1):
                num -= a
    return (num / z_score if z_score else 0.0), z_score


def patch_foreground(bundle, x, claim=None) -> list[tuple]:
    return sorted(
        pos for pos, (_, c) in patch_positions(bundle, x, claim).items() if c == 1
    )


def paff_naive(bundle, table, a, b) -> float | None:
    fa = patch_foreground(bundle, a)
    fb = patch_foreground(bundle, b)
    total = 0.0
    count = 0
    for v in fa:
        for w in fb:
            val = aff_naive(table, v, w)
            if val is not None:
                total += val
                count += 1
    if count == 0:
        return None
    return total / count


def mws_naive(num_nodes: int, edges) -> tuple[list[int], list[tuple]]:
    """Independent mutex watershed; returns (labels, enacted constraints).

    Constraints are recorded as (frozenset_a, frozenset_b) of the cluster
    memberships at enactment time.
    """
    order = sorted(
        range(len(edges)),
        key=lambda e: (-abs(edges[e][2]), -edges[e][2], edges[e][0], edges[e][1]),
    )
    comp = {v: frozenset([v]) for v in range(num_nodes)}
    mutex: set[tuple[frozenset, frozenset]] = set()
    enacted = []
    for e in order:
        a, b, w = edges[e]
        if w == 0.0:
            continue
        ca, cb = comp[a], comp[b]
        if ca == cb:
            continue
        if w > 0.0:
            if (ca, cb) in mutex:
                continue
            merged = ca | cb

            def repl(c):
                return merged if c in (ca, cb) else c

            mutex = {(repl(x), repl(y)) for (x, y) in mutex}
            for v in merged:
                comp[v] = merged
        else:
            mutex.add((ca, cb))
            mutex.add((cb, ca))
            enacted.append((ca, cb))
    labels = []
    seen: dict[frozenset, int] = {}
    for v in range(num_nodes):
        c = comp[v]
        if c not in seen:
            seen[c] = len(seen)
        labels.append(seen[c])
    return labels, enacted


def optimal_matching_size(ious: np.ndarray, threshold: float) -> int:
    """Maximum one-to-one matching over pairs with IoU above the threshold."""
    n_gt, n_pred = ious.shape
    candidates = [
        [j for j in range(n_pred) if ious[i, j] > threshold] for i in range(n_gt)
    ]

    best = 0

    def recurse(i: int, used: int, have: int):
        nonlocal best
        if have + (n_gt - i) <= best:
            return
        if i == n_gt:
            best = max(best, have)
            return
        recurse(i + 1, used, have)
        for j in candidates[i]:
            if not used & (1 << j):
                recurse(i + 1, used | (1 << j), have + 1)

    recurse(0, 0, 0)
    return best


def same_partition(labels_a, labels_b) -> bool:
    """True when two labelings induce the same grouping."""
    labels_a = list(labels_a)
    labels_b = list(labels_b)
    if len(labels_a) != len(labels_b):
        return False
    remap: dict = {}
    for a, b in zip(labels_a, labels_b):
        if a in remap:
            if remap[a] != b:
                return False
        else:
            remap[a] = b
    return len(set(remap.values())) == len(remap)
