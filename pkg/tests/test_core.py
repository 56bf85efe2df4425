import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchseg import (
    GroundTruth,
    PatchGeometry,
    PixelClass,
    PredictionBundle,
    classify,
    image_foreground,
    overlap_mask,
)
from util import bundle_1d


class TestPatchGeometry:
    @pytest.mark.parametrize("extents", [(3,), (5,), (3, 3), (3, 5), (7, 7), (3, 3, 5)])
    def test_channel_offset_roundtrip(self, extents):
        g = PatchGeometry(extents)
        assert g.num_channels == int(np.prod(extents))
        for c in range(g.num_channels):
            assert g.channel_of(g.offset_of(c)) == c
        offsets = {g.offset_of(c) for c in range(g.num_channels)}
        assert len(offsets) == g.num_channels

    def test_offsets_lexicographic_and_centered(self):
        g = PatchGeometry((3, 3))
        offs = [tuple(o) for o in g.offsets]
        assert offs == sorted(offs)
        assert g.offset_of(g.center_channel) == (0, 0)

    def test_zero_offset_present(self):
        for extents in [(3,), (5, 7), (3, 3, 3)]:
            g = PatchGeometry(extents)
            assert (0,) * len(extents) in {tuple(o) for o in g.offsets}

    def test_even_extent_rejected(self):
        with pytest.raises(ValueError):
            PatchGeometry((4, 3))

    def test_pair_offsets_cover_neighborhood_once(self):
        g = PatchGeometry((3, 5))
        half = {tuple(d) for d in g.pair_offsets}
        assert (0, 0) in half
        # every nonzero difference appears exactly once, up to sign
        for dy in range(-2, 3):
            for dx in range(-4, 5):
                if (dy, dx) == (0, 0):
                    continue
                assert ((dy, dx) in half) != ((-dy, -dx) in half)

    def test_pair_plane_symmetric_lookup(self):
        g = PatchGeometry((5, 5))
        plane_a, swap_a = g.pair_plane((1, -2))
        plane_b, swap_b = g.pair_plane((-1, 2))
        assert plane_a == plane_b
        assert swap_a != swap_b


class TestClassify:
    def test_threshold_09(self):
        bundle = bundle_1d(5, {2: [0.95, 0.30, 0.50]}, t=0.9)
        cls = classify(bundle, (2,))
        assert cls.positions[cls.classes == PixelClass.FOREGROUND].ravel().tolist() == [1]
        assert cls.channels[cls.classes == PixelClass.FOREGROUND].tolist() == [0]
        assert len(cls.background) == 0
        assert cls.channels[cls.classes == PixelClass.UNCERTAIN].tolist() == [1, 2]

    def test_extreme_probabilities(self):
        bundle = bundle_1d(5, {2: [1.0, 1.0, 0.0]}, t=0.5)
        cls = classify(bundle, (2,))
        assert cls.channels[cls.classes == PixelClass.FOREGROUND].tolist() == [0, 1]
        assert cls.channels[cls.classes == PixelClass.BACKGROUND].tolist() == [2]
        assert len(cls.uncertain) == 0

    @pytest.mark.parametrize("t", [0.5, 0.7, 0.9, 1.0])
    def test_boundary_values_stay_uncertain(self, t):
        bundle = bundle_1d(5, {2: [0.5, 0.5, 0.5]}, t=t)
        cls = classify(bundle, (2,))
        assert len(cls.foreground) == 0
        assert len(cls.background) == 0
        assert len(cls.uncertain) == 3

    def test_exact_threshold_is_uncertain(self):
        bundle = bundle_1d(5, {2: [0.9, 0.1, 0.5]}, t=0.9)
        cls = classify(bundle, (2,))
        # p == t and p == 1 - t both fall between the strict inequalities
        assert len(cls.foreground) == 0
        assert len(cls.background) == 0

    def test_border_clipping(self):
        bundle = bundle_1d(5, {0: [1.0, 1.0, 1.0]}, t=0.5)
        cls = classify(bundle, (0,))
        assert cls.positions.ravel().tolist() == [0, 1]
        assert cls.channels.tolist() == [1, 2]

    def test_out_of_bounds_pixel_rejected(self):
        bundle = bundle_1d(5, {}, t=0.9)
        with pytest.raises(ValueError):
            classify(bundle, (5,))

    @given(
        probs=st.lists(st.floats(0.0, 1.0, width=32), min_size=3, max_size=3),
        t=st.floats(0.5, 1.0),
        x=st.integers(0, 4),
    )
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, probs, t, x):
        bundle = bundle_1d(5, {x: probs}, t=t)
        cls = classify(bundle, (x,))
        n_in = sum(1 for off in (-1, 0, 1) if 0 <= x + off < 5)
        assert len(cls.foreground) + len(cls.background) + len(cls.uncertain) == n_in
        fg = {tuple(p) for p in cls.foreground}
        bg = {tuple(p) for p in cls.background}
        assert not fg & bg

    def test_classify_is_pure(self):
        rng = np.random.default_rng(7)
        bundle = bundle_1d(9, {4: rng.random(3).tolist()}, t=0.8)
        a = classify(bundle, (4,))
        b = classify(bundle, (4,))
        assert np.array_equal(a.classes, b.classes)
        assert np.array_equal(a.positions, b.positions)


class TestImageForeground:
    def test_all_zero(self):
        bundle = bundle_1d(4, {}, t=0.9, fg=[0, 0, 0, 0])
        fg = image_foreground(bundle)
        assert fg.size == 0
        assert not fg.mask.any()

    def test_indicator_identity(self):
        gt = np.array([[0, 1], [1, 0]], dtype=np.float32)
        geometry = PatchGeometry((3, 3))
        bundle = PredictionBundle(
            geometry=geometry,
            patch_probs=np.zeros((9, 2, 2), dtype=np.float32),
            fg_probs=gt,
            fg_threshold=0.5,
        )
        fg = image_foreground(bundle)
        assert np.array_equal(fg.mask, gt.astype(bool))

    def test_direct_threshold(self):
        bundle = bundle_1d(2, {}, t=0.9, fg=[0.4, 0.6])
        fg = image_foreground(bundle)
        assert fg.indices.tolist() == [1]


class TestOverlapMask:
    def _with_ninst(self, ninst):
        geometry = PatchGeometry((3,))
        return PredictionBundle(
            geometry=geometry,
            patch_probs=np.zeros((3, len(ninst[0])), dtype=np.float32),
            fg_probs=np.zeros(len(ninst[0]), dtype=np.float32),
            ninst_probs=np.array(ninst, dtype=np.float32),
        )

    def test_absent_gives_empty(self):
        bundle = bundle_1d(4, {}, t=0.9)
        assert not overlap_mask(bundle).any()

    def test_argmax_selects_overlap(self):
        bundle = self._with_ninst([[0.1], [0.2], [0.7]])
        assert overlap_mask(bundle).tolist() == [True]

    def test_argmax_selects_single(self):
        bundle = self._with_ninst([[0.2], [0.7], [0.1]])
        assert overlap_mask(bundle).tolist() == [False]

    def test_tie_breaks_toward_lower_class(self):
        bundle = self._with_ninst([[0.4], [0.4], [0.2]])
        assert overlap_mask(bundle).tolist() == [False]


class TestPredictionBundle:
    def test_rejects_low_t(self):
        with pytest.raises(ValueError):
            bundle_1d(4, {}, t=0.4)

    def test_rejects_out_of_range_probs(self):
        geometry = PatchGeometry((3,))
        probs = np.full((3, 4), 1.5, dtype=np.float32)
        with pytest.raises(ValueError):
            PredictionBundle(geometry=geometry, patch_probs=probs,
                             fg_probs=np.zeros(4, dtype=np.float32))

    def test_rejects_shape_mismatch(self):
        geometry = PatchGeometry((3,))
        with pytest.raises(ValueError):
            PredictionBundle(
                geometry=geometry,
                patch_probs=np.zeros((3, 4), dtype=np.float32),
                fg_probs=np.zeros(5, dtype=np.float32),
            )


class TestGroundTruth:
    def test_rejects_empty_mask(self):
        with pytest.raises(ValueError):
            GroundTruth([np.zeros((3, 3), dtype=bool)])

    def test_rejects_no_masks(self):
        with pytest.raises(ValueError):
            GroundTruth([])

    def test_count_map_counts_overlap(self):
        a = np.array([1, 1, 0], dtype=bool)
        b = np.array([0, 1, 1], dtype=bool)
        gt = GroundTruth([a, b])
        assert gt.count_map.tolist() == [1, 2, 1]
        assert gt.union_mask.tolist() == [True, True, True]

    def test_from_label_map(self):
        gt = GroundTruth.from_label_map(np.array([0, 1, 1, 2]))
        assert gt.num_instances == 2
        assert gt.masks[0].tolist() == [False, True, True, False]
