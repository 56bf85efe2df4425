"""Small builders shared across test modules."""

from __future__ import annotations

import numpy as np

from patchseg import PatchGeometry, PredictionBundle


def bundle_1d(size: int, columns: dict[int, list[float]], t: float,
              default: float = 0.5, fg=None) -> PredictionBundle:
    """1d bundle over ``size`` pixels with a 3-channel patch (-1, 0, +1).

    ``columns[x]`` sets the patch prediction at pixel x; everywhere else the
    patch is ``default`` (0.5 keeps those pixels fully undecided, so they
    cast no votes).
    """
    geometry = PatchGeometry((3,))
    probs = np.full((3, size), default, dtype=np.float32)
    for x, vals in columns.items():
        probs[:, x] = vals
    if fg is None:
        fg_probs = np.ones(size, dtype=np.float32)
    else:
        fg_probs = np.asarray(fg, dtype=np.float32)
    return PredictionBundle(geometry=geometry, patch_probs=probs,
                            fg_probs=fg_probs, t=t)


def random_bundle(rng, shape, extents, t=0.8) -> PredictionBundle:
    """Dense random-probability bundle for equivalence tests."""
    geometry = PatchGeometry(extents)
    probs = rng.random((geometry.num_channels, *shape)).astype(np.float32)
    fg_probs = rng.random(shape).astype(np.float32)
    return PredictionBundle(geometry=geometry, patch_probs=probs,
                            fg_probs=fg_probs, t=t)
