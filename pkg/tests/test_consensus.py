import numpy as np
import pytest

from patchseg import GroundTruth, PatchGeometry, accumulate, aff, image_foreground, synth
from oracles import aff_naive, consensus_naive
from util import bundle_1d, random_bundle


def fg_all(size):
    return np.ones(size, dtype=bool)


class TestSinglePatchExample:
    """One predicting pixel with patch [1, 1, 0] at t = 0.5; every other
    pixel predicts 0.5 everywhere and therefore casts no votes."""

    @pytest.fixture()
    def field(self):
        bundle = bundle_1d(7, {3: [1.0, 1.0, 0.0]}, t=0.5)
        return accumulate(bundle, fg_all(7))

    def test_same_instance_pair(self, field):
        assert aff(field, (2,), (3,)) == pytest.approx(1.0)

    def test_cross_pairs(self, field):
        assert aff(field, (2,), (4,)) == pytest.approx(-1.0)
        assert aff(field, (3,), (4,)) == pytest.approx(-1.0)

    def test_z_counts_are_one(self, field):
        table = consensus_naive(bundle_1d(7, {3: [1.0, 1.0, 0.0]}, t=0.5), fg_all(7))
        assert table[((2,), (3,))] == (pytest.approx(1.0), 1)
        assert table[((2,), (4,))] == (pytest.approx(-1.0), 1)
        assert table[((3,), (4,))] == (pytest.approx(-1.0), 1)

    def test_unvoted_pair_is_undefined(self, field):
        assert aff(field, (5,), (6,)) is None

    def test_out_of_neighborhood_is_undefined(self, field):
        assert aff(field, (0,), (3,)) is None


class TestTwoPatchExamples:
    def test_two_identical_perfect_votes_average_to_one(self):
        # both patches classify pixels 1 and 2 foreground with certainty
        bundle = bundle_1d(4, {1: [0.5, 1.0, 1.0], 2: [1.0, 1.0, 0.5]}, t=0.5)
        field = accumulate(bundle, fg_all(4))
        assert aff(field, (1,), (2,)) == pytest.approx(1.0)
        table = consensus_naive(bundle, fg_all(4))
        assert table[((1,), (2,))] == (pytest.approx(2.0), 2)

    def test_confidence_weighted_contributions(self):
        bundle = bundle_1d(7, {3: [0.9, 0.9, 0.05]}, t=0.8)
        field = accumulate(bundle, fg_all(7))
        assert aff(field, (2,), (3,)) == pytest.approx(0.81)
        assert aff(field, (3,), (4,)) == pytest.approx(-0.9 * 0.95)

    def test_two_equal_confidence_votes(self):
        # numerator 1.62 over two informative patches gives 0.81
        bundle = bundle_1d(5, {1: [0.5, 0.9, 0.9], 2: [0.9, 0.9, 0.5]}, t=0.8)
        field = accumulate(bundle, fg_all(5))
        assert aff(field, (1,), (2,)) == pytest.approx(0.81)
        table = consensus_naive(bundle, fg_all(5))
        assert table[((1,), (2,))] == (pytest.approx(1.62), 2)

    def test_uncertain_pair_is_not_informative(self):
        bundle = bundle_1d(5, {2: [0.6, 0.6, 0.6]}, t=0.8)
        field = accumulate(bundle, fg_all(5))
        assert aff(field, (1,), (2,)) is None
        assert aff(field, (2,), (3,)) is None

    def test_fg_uncertain_pair_counts_without_vote(self):
        bundle = bundle_1d(5, {2: [0.95, 0.6, 0.6]}, t=0.8)
        table = consensus_naive(bundle, fg_all(5))
        # pixel 1 is foreground, pixel 2 undecided: counted, zero vote
        assert table[((1,), (2,))] == (pytest.approx(0.0), 1)
        field = accumulate(bundle, fg_all(5))
        assert aff(field, (1,), (2,)) == pytest.approx(0.0)


class TestSelfAffinity:
    def test_self_pair_is_mean_squared_probability(self):
        bundle = bundle_1d(5, {1: [0.5, 0.9, 0.9], 2: [0.95, 0.9, 0.5]}, t=0.8)
        field = accumulate(bundle, fg_all(5))
        # pixel 2: foreground for patch 1 (p=.9) and patch 2 (p=.9)
        assert aff(field, (2,), (2,)) == pytest.approx((0.81 + 0.81) / 2)


class TestAgainstNaive:
    @pytest.mark.parametrize("shape,extents,seed", [
        ((9,), (3,), 0),
        ((6, 7), (3, 3), 1),
        ((6, 7), (3, 5), 2),
        ((4, 5, 4), (3, 3, 3), 3),
    ])
    def test_dense_equivalence(self, shape, extents, seed):
        rng = np.random.default_rng(seed)
        bundle = random_bundle(rng, shape, extents, t=0.75)
        fg = rng.random(shape) > 0.4
        field = accumulate(bundle, fg)
        table = consensus_naive(bundle, fg)
        self._compare(field, table, shape)

    @pytest.mark.parametrize("sparse", [False, True])
    def test_masked_equivalence(self, sparse):
        rng = np.random.default_rng(11)
        bundle = random_bundle(rng, (7, 6), (3, 3), t=0.7)
        fg = rng.random((7, 6)) > 0.35
        discard = rng.random((7, 6)) > 0.8
        field = accumulate(bundle, fg, discard, sparse=sparse)
        table = consensus_naive(bundle, fg, discard, sparse=sparse)
        self._compare(field, table, (7, 6))

    def _compare(self, field, table, shape):
        import itertools

        checked = 0
        for y in itertools.product(*map(range, shape)):
            for z in itertools.product(*map(range, shape)):
                expected = aff_naive(table, y, z)
                got = aff(field, y, z)
                if expected is None:
                    assert got is None, (y, z)
                else:
                    assert got == pytest.approx(expected, abs=1e-12), (y, z)
                    checked += 1
        assert checked > 0

    def test_discarded_pairs_have_no_votes(self):
        rng = np.random.default_rng(5)
        bundle = random_bundle(rng, (8, 8), (3, 3), t=0.7)
        fg = np.ones((8, 8), dtype=bool)
        discard = np.zeros((8, 8), dtype=bool)
        discard[3, 3] = True
        field = accumulate(bundle, fg, discard)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                assert aff(field, (3, 3), (3 + dy, 3 + dx)) is None


class TestInvariants:
    def _random_field(self, seed, sparse=False):
        rng = np.random.default_rng(seed)
        bundle = random_bundle(rng, (8, 7), (3, 3), t=0.7)
        fg = rng.random((8, 7)) > 0.4
        return bundle, fg, accumulate(bundle, fg, sparse=sparse)

    def test_symmetry(self):
        _, _, field = self._random_field(21)
        rng = np.random.default_rng(0)
        for _ in range(300):
            y = tuple(rng.integers(0, s) for s in (8, 7))
            z = tuple(rng.integers(0, s) for s in (8, 7))
            assert aff(field, y, z) == aff(field, z, y)

    def test_boundedness(self):
        _, _, field = self._random_field(22)
        defined = field.z_count > 0
        ratios = field.numerator[defined] / field.z_count[defined]
        assert ratios.min() >= -1.0 - 1e-12
        assert ratios.max() <= 1.0 + 1e-12

    def test_z_count_bounded_by_patch_size(self):
        _, _, field = self._random_field(23)
        assert field.z_count.max() <= field.geometry.num_channels

    def test_perfect_prediction_fixed_point(self):
        labels = np.zeros((10, 10), dtype=int)
        labels[2:5, 2:5] = 1
        labels[6:9, 5:9] = 2
        gt = GroundTruth.from_label_map(labels)
        bundle = synth(gt, PatchGeometry((3, 3)))
        fg = image_foreground(bundle)
        field = accumulate(bundle, fg)
        union = gt.union_mask
        same = [gt.masks[0] & m for m in gt.masks]
        for y in zip(*np.nonzero(union)):
            for dy in (-2, -1, 0, 1, 2):
                for dx in (-2, -1, 0, 1, 2):
                    z = (y[0] + dy, y[1] + dx)
                    if not (0 <= z[0] < 10 and 0 <= z[1] < 10):
                        continue
                    value = aff(field, y, z)
                    if value is None:
                        continue
                    same_instance = any(m[y] and m[z] for m in gt.masks)
                    assert value == pytest.approx(1.0 if same_instance else -1.0)

    def test_sparse_equivalence_on_true_background(self):
        labels = np.zeros((9, 9), dtype=int)
        labels[1:4, 1:5] = 1
        labels[5:8, 4:8] = 2
        gt = GroundTruth.from_label_map(labels)
        bundle = synth(gt, PatchGeometry((3, 3)))
        fg = image_foreground(bundle)
        dense = accumulate(bundle, fg, sparse=False)
        sparse = accumulate(bundle, fg, sparse=True)
        for y in zip(*np.nonzero(fg.mask)):
            for z in zip(*np.nonzero(fg.mask)):
                if max(abs(y[0] - z[0]), abs(y[1] - z[1])) > 2:
                    continue
                assert aff(dense, y, z) == aff(sparse, y, z), (y, z)

    def test_reference_mode_bit_exact_and_thread_independent(self):
        rng = np.random.default_rng(31)
        bundle = random_bundle(rng, (16, 17), (5, 5), t=0.7)
        fg = rng.random((16, 17)) > 0.3
        one = accumulate(bundle, fg, threads=1)
        again = accumulate(bundle, fg, threads=1)
        many = accumulate(bundle, fg, threads=8)
        assert np.array_equal(one.numerator, again.numerator)
        assert np.array_equal(one.z_count, again.z_count)
        assert np.abs(one.numerator - many.numerator).max() <= 1e-6
        assert np.array_equal(one.z_count, many.z_count)

    def test_rejects_mismatched_foreground_shape(self):
        bundle = bundle_1d(5, {}, t=0.9)
        with pytest.raises(ValueError):
            accumulate(bundle, np.ones(6, dtype=bool))
