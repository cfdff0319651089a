import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fsqlab.fsq import (
    FsqSpec,
    bit_field,
    fsq_dequantize,
    fsq_index_decode,
    fsq_index_encode,
    fsq_quantize,
    make_fsq_spec,
    preset,
)


def enumerate_tuples(levels):
    """Oracle: all level tuples with dimension 0 varying fastest."""
    return [tuple(reversed(t)) for t in itertools.product(*[range(n) for n in reversed(levels)])]


class TestSpec:
    def test_stablecodec_levels_give_2_pow_16(self):
        assert make_fsq_spec([8, 8, 8, 8, 4, 4]).codebook_size == 65536

    def test_neucodec_preset(self):
        spec = preset("neucodec")
        assert spec.dim == 8
        assert spec.codebook_size == 2**16
        assert spec.index_bits == 16

    def test_binary_dimension(self):
        spec = make_fsq_spec([2])
        assert spec.codebook_size == 2
        assert spec.steps == (2.0,)

    def test_size_matches_enumeration(self):
        assert make_fsq_spec([3, 2]).codebook_size == len(enumerate_tuples([3, 2])) == 6

    @pytest.mark.parametrize("levels", [[], [1], [4, 0], [3, -2]])
    def test_rejects_bad_levels(self, levels):
        with pytest.raises(ValueError):
            make_fsq_spec(levels)

    def test_rejects_oversized_codebook(self):
        make_fsq_spec([2] * 32)
        with pytest.raises(ValueError, match="2\\*\\*32"):
            make_fsq_spec([2] * 33)

    def test_json_round_trip(self):
        spec = preset("stablecodec")
        assert json.loads(spec.to_json()) == {"levels": [8, 8, 8, 8, 4, 4]}
        assert FsqSpec.from_json(spec.to_json()) == spec

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            preset("nope")


class TestQuantize:
    def test_nearest_grid_value(self):
        spec = make_fsq_spec([3, 3])
        q = fsq_quantize(spec, [0.2, -0.9])
        np.testing.assert_array_equal(q.levels, [1, 0])
        np.testing.assert_array_equal(q.values, [0.0, -1.0])

    def test_grid_point_is_fixed(self):
        q = fsq_quantize(make_fsq_spec([3, 3]), [0.0, 0.0])
        np.testing.assert_array_equal(q.levels, [1, 1])

    def test_clamps_out_of_range(self):
        q = fsq_quantize(make_fsq_spec([2]), [5.0])
        assert q.levels.tolist() == [1]
        assert q.values.tolist() == [1.0]

    def test_tie_goes_away_from_zero(self):
        # 0 sits halfway between -1/3 and +1/3 on a 4-level grid
        q = fsq_quantize(make_fsq_spec([4]), [0.0])
        assert q.levels.tolist() == [2]

    def test_errors(self):
        spec = make_fsq_spec([3, 3])
        with pytest.raises(ValueError):
            fsq_quantize(spec, [0.0])
        with pytest.raises(ValueError):
            fsq_quantize(spec, [np.nan, 0.0])

    def test_batched(self, rng):
        spec = make_fsq_spec([5, 4, 3])
        x = rng.uniform(-1, 1, size=(7, 11, 3))
        q = fsq_quantize(spec, x)
        assert q.levels.shape == x.shape
        for idx in np.ndindex(7, 11):
            np.testing.assert_array_equal(q.levels[idx], fsq_quantize(spec, x[idx]).levels)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(2, 9), min_size=1, max_size=5).flatmap(
        lambda lv: st.tuples(st.just(lv), st.lists(st.floats(-1, 1), min_size=len(lv), max_size=len(lv)))))
    def test_error_within_half_step(self, case):
        levels, x = case
        spec = make_fsq_spec(levels)
        v = fsq_quantize(spec, x).values
        assert np.all(np.abs(np.asarray(x) - v) <= np.asarray(spec.steps) / 2 + 1e-12)

    def test_nearest_by_brute_force(self, rng):
        spec = make_fsq_spec([5, 4])
        for x in rng.uniform(-1.2, 1.2, size=(500, 2)):
            q = fsq_quantize(spec, x)
            for i, n in enumerate(spec.levels):
                grid = -1 + 2 * np.arange(n) / (n - 1)
                assert np.argmin(np.abs(grid - np.clip(x[i], -1, 1))) == q.levels[i]


class TestDequantize:
    def test_examples(self):
        np.testing.assert_array_equal(fsq_dequantize(make_fsq_spec([3, 2]), [2, 1]), [1.0, 1.0])
        np.testing.assert_array_equal(fsq_dequantize(make_fsq_spec([5]), [2]), [0.0])
        np.testing.assert_allclose(fsq_dequantize(make_fsq_spec([4]), [1]), [-1 / 3], rtol=0, atol=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            fsq_dequantize(make_fsq_spec([4]), [4])

    @pytest.mark.parametrize("levels", [[3, 2], [4, 4], [5, 3, 2], [2, 7, 3]])
    def test_fixed_point(self, levels):
        spec = make_fsq_spec(levels)
        ks = np.array(enumerate_tuples(levels))
        np.testing.assert_array_equal(fsq_quantize(spec, fsq_dequantize(spec, ks)).levels, ks)


class TestIndexing:
    def test_examples(self):
        assert fsq_index_encode(make_fsq_spec([3, 2]), [2, 1]) == 5
        assert fsq_index_encode(make_fsq_spec([4, 4]), [3, 3]) == 15
        assert fsq_index_encode(make_fsq_spec([8, 8, 8, 8, 4, 4]), [0] * 6) == 0
        np.testing.assert_array_equal(fsq_index_decode(make_fsq_spec([3, 2]), 5), [2, 1])
        np.testing.assert_array_equal(fsq_index_decode(make_fsq_spec([4, 4]), 7), [3, 1])
        np.testing.assert_array_equal(fsq_index_decode(make_fsq_spec([8, 8, 8, 8, 4, 4]), 0), [0] * 6)

    @pytest.mark.parametrize("levels", [[3, 2], [4, 4], [5, 3, 2], [16, 16, 16], [7, 3, 5, 2]])
    def test_enumeration_order_is_bijective(self, levels):
        spec = make_fsq_spec(levels)
        tuples = enumerate_tuples(levels)
        assert [fsq_index_encode(spec, t) for t in tuples] == list(range(spec.codebook_size))
        decoded = fsq_index_decode(spec, np.arange(spec.codebook_size))
        assert [tuple(r) for r in decoded] == tuples

    def test_out_of_range(self):
        spec = make_fsq_spec([3, 2])
        with pytest.raises(ValueError):
            fsq_index_decode(spec, 6)
        with pytest.raises(ValueError):
            fsq_index_encode(spec, [3, 0])

    def test_bit_fields_are_contiguous(self):
        spec = make_fsq_spec([8, 8, 8, 8, 4, 4])
        assert [bit_field(spec, d) for d in range(6)] == [(0, 3), (3, 6), (6, 9), (9, 12), (12, 14), (14, 16)]
        with pytest.raises(ValueError):
            bit_field(make_fsq_spec([3, 4]), 0)

    @pytest.mark.parametrize("levels", [[4, 4], [2, 8, 4], [4] * 3])
    def test_single_bit_flip_moves_one_level(self, levels):
        """Brute force over every bit of every index."""
        spec = make_fsq_spec(levels)
        for index in range(spec.codebook_size):
            k = fsq_index_decode(spec, index)
            for b in range(spec.index_bits):
                k2 = fsq_index_decode(spec, index ^ (1 << b))
                changed = np.flatnonzero(k != k2)
                assert len(changed) == 1
                d = changed[0]
                lo, _ = bit_field(spec, d)
                assert abs(k2[d] - k[d]) == 2 ** (b - lo)
                dv = np.abs(fsq_dequantize(spec, k2) - fsq_dequantize(spec, k))
                np.testing.assert_allclose(dv.max(), spec.steps[d] * 2 ** (b - lo), rtol=1e-12)
