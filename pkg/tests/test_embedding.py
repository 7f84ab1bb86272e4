import numpy as np
import pytest

from tdvit import embedding as emb


class TestPatchify:
    def test_cifar_scale_counts(self):
        frame = np.random.default_rng(0).random((32, 32, 3))
        patches = emb.patchify(frame, 8)
        assert patches.shape == (16, 192)

    def test_single_patch_is_whole_frame(self):
        frame = np.random.default_rng(1).random((8, 8, 1))
        patches = emb.patchify(frame, 8)
        np.testing.assert_array_equal(patches[0], frame.reshape(-1))

    def test_constant_frame_identical_patches(self):
        frame = np.full((16, 16, 3), 0.25)
        patches = emb.patchify(frame, 4)
        assert np.ptp(patches) == 0

    def test_non_divisible_error_names_dims(self):
        with pytest.raises(ValueError, match="5.*H=32.*W=32"):
            emb.patchify(np.zeros((32, 32, 3)), 5)

    def test_unpatchify_inverts(self):
        frame = np.random.default_rng(2).random((32, 32, 3))
        patches = emb.patchify(frame, 8)
        np.testing.assert_array_equal(emb.unpatchify(patches, frame.shape, 8), frame)

    def test_row_major_patch_order(self):
        # mark the top-right patch; it must land at index gw-1
        frame = np.zeros((8, 8, 1))
        frame[0, 7, 0] = 1.0
        patches = emb.patchify(frame, 4)
        assert patches[1].sum() == 1.0


class TestEmbedPatches:
    def test_zero_patches(self):
        w = np.random.default_rng(0).normal(size=(12, 4))
        np.testing.assert_array_equal(emb.embed_patches(np.zeros((3, 12)), w), np.zeros((3, 4)))

    def test_zero_weights(self):
        patches = np.random.default_rng(1).random((3, 12))
        np.testing.assert_array_equal(
            emb.embed_patches(patches, np.zeros((12, 4))), np.zeros((3, 4))
        )

    def test_one_hot_extracts_row(self):
        w = np.random.default_rng(2).normal(size=(12, 4))
        one_hot = np.zeros((1, 12))
        one_hot[0, 5] = 1.0
        np.testing.assert_allclose(emb.embed_patches(one_hot, w)[0], w[5])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="12"):
            emb.embed_patches(np.zeros((3, 12)), np.zeros((13, 4)))


class TestRelTimeVector:
    def test_regular(self):
        np.testing.assert_array_equal(emb.rel_time_vector([0, 12, 24]), [24, 12, 0])

    def test_single_frame(self):
        np.testing.assert_array_equal(emb.rel_time_vector([5]), [0])

    def test_irregular(self):
        np.testing.assert_array_equal(emb.rel_time_vector([0, 1, 12]), [12, 11, 0])

    def test_errors(self):
        with pytest.raises(ValueError):
            emb.rel_time_vector([])
        with pytest.raises(ValueError, match="increasing"):
            emb.rel_time_vector([0, 5, 5])


class TestTimeEncoding:
    def test_zero_distance_alternates(self):
        for dim in (2, 4, 64):
            te = emb.time_encoding(0.0, dim)
            np.testing.assert_array_equal(te, np.tile([0.0, 1.0], dim // 2))

    def test_scalar_evaluation(self):
        te = emb.time_encoding(2.0, 4)
        expected = [np.sin(2.0), np.cos(2.0), np.sin(0.02), np.cos(0.02)]
        np.testing.assert_allclose(te, expected, atol=1e-12)
        np.testing.assert_allclose(te, [0.9093, -0.4161, 0.0200, 0.9998], atol=1e-4)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            emb.time_encoding(1.0, 5)

    def test_bounded(self):
        rng = np.random.default_rng(0)
        rs = rng.uniform(0, 1e4, size=10_000)
        te = emb.time_encoding_many(rs, 64)
        assert te.min() >= -1.0 and te.max() <= 1.0

    def test_linear_shift_property(self):
        # analytic block rotation maps TE(r) onto TE(r+k)
        rng = np.random.default_rng(42)
        for _ in range(100):
            r = rng.uniform(0, 200.0)
            k = rng.uniform(0, 200.0)
            m = emb.time_shift_matrix(k, 64)
            err = np.abs(m @ emb.time_encoding(r, 64) - emb.time_encoding(r + k, 64)).max()
            assert err < 1e-9


class TestAddTimeEncodings:
    def _seq(self, t=2, p=3, d=8):
        tokens = np.zeros((t * p, d))
        return emb.TokenSequence(tokens, np.repeat(np.arange(t), p), p)

    def test_zero_tokens_become_encoding(self):
        seq = self._seq(t=1)
        out = emb.add_time_encodings(seq, np.array([0.0]))
        np.testing.assert_array_equal(out.tokens, np.tile(emb.time_encoding(0.0, 8), (3, 1)))

    def test_equal_distances_equal_offsets(self):
        seq = self._seq(t=2)
        out = emb.add_time_encodings(seq, np.array([7.0, 7.0]))
        np.testing.assert_array_equal(out.tokens[0], out.tokens[5])

    def test_not_idempotent(self):
        seq = self._seq(t=1)
        once = emb.add_time_encodings(seq, np.array([3.0]))
        twice = emb.add_time_encodings(once, np.array([3.0]))
        np.testing.assert_allclose(twice.tokens, 2 * once.tokens)
        assert not np.allclose(twice.tokens, once.tokens)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="2 time distances"):
            emb.add_time_encodings(self._seq(t=3), np.array([0.0, 1.0]))


class TestPositionalEncoding2d:
    def test_single_cell(self):
        enc = emb.positional_encoding_2d(1, 1, 8)
        np.testing.assert_array_equal(enc[0], np.tile([0.0, 1.0], 4))

    def test_same_row_shares_row_half(self):
        enc = emb.positional_encoding_2d(2, 2, 8)
        np.testing.assert_array_equal(enc[0, :4], enc[1, :4])
        assert not np.array_equal(enc[0, 4:], enc[1, 4:])

    def test_all_cells_distinct(self):
        enc = emb.positional_encoding_2d(4, 4, 64)
        for i in range(16):
            for j in range(i + 1, 16):
                assert not np.allclose(enc[i], enc[j]), (i, j)

    def test_dim_divisibility(self):
        with pytest.raises(ValueError, match="divisible by 4"):
            emb.positional_encoding_2d(2, 2, 6)


class TestRelTimeMatrix:
    def test_two_frames(self):
        np.testing.assert_array_equal(
            emb.rel_time_matrix([0, 12], 1), [[12, 12], [0, 0]]
        )

    def test_single_frame_zero(self):
        np.testing.assert_array_equal(emb.rel_time_matrix([3], 2), np.zeros((2, 2)))

    def test_three_frames_two_tokens(self):
        m = emb.rel_time_matrix([0, 6, 18], 2)
        expected_col = np.array([18, 18, 12, 12, 0, 0], dtype=float)
        assert m.shape == (6, 6)
        for j in range(6):
            np.testing.assert_array_equal(m[:, j], expected_col)

    def test_rows_constant_latest_zero(self):
        rng = np.random.default_rng(0)
        times = np.cumsum(rng.uniform(0.5, 5, size=4))
        m = emb.rel_time_matrix(times, 3)
        assert np.ptp(m, axis=1).max() == 0
        np.testing.assert_array_equal(m[-3:], np.zeros((3, 12)))

    def test_pairwise_variant(self):
        m = emb.pairwise_time_matrix([0, 6, 18], 1)
        np.testing.assert_array_equal(m, [[0, 6, 18], [6, 0, 12], [18, 12, 0]])


def test_tokenize_sequence_shapes():
    rng = np.random.default_rng(3)
    seq = emb.ImageSequence(rng.random((2, 8, 8, 1)), np.array([0.0, 4.0]))
    w = rng.normal(size=(16, 6))
    toks = emb.tokenize_sequence(seq, w, 4)
    assert toks.tokens.shape == (8, 6)
    assert toks.tokens_per_frame == 4
    np.testing.assert_array_equal(toks.frame_index, [0, 0, 0, 0, 1, 1, 1, 1])


def test_image_sequence_validation():
    with pytest.raises(ValueError, match="increasing"):
        emb.ImageSequence(np.zeros((2, 4, 4, 1)), np.array([3.0, 3.0]))
    with pytest.raises(ValueError, match="frames"):
        emb.ImageSequence(np.zeros((2, 4, 4, 1)), np.array([0.0, 1.0, 2.0]))
