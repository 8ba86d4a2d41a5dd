import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from espmf.encoder import (IMAGE_SIZE, assemble_spmf, build_motion_column, build_pose_column,
                           compute_jjd, compute_jjo, encode_raw, jet_encode, jet_palette,
                           normalize_component, pair_index, resize_bilinear)
from espmf.errors import DegenerateDataError, SequenceTooShortError
from espmf.preproc import NormalizationStats, compute_stats
from espmf.skeleton_io import Frame, Joint, SkeletonSequence

from oracles import PALETTE, spmf_raw

STATS = NormalizationStats((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), 2.0)


def random_seq(rng, n, j):
    return SkeletonSequence(coords=rng.uniform(-1, 1, size=(n, j, 3)))


def stats_tuple(s):
    return (s.c_min, s.c_max, s.d_max)


class TestScalars:
    def test_jjd(self):
        assert compute_jjd((0, 0, 0), (1, 2, 2)) == 3.0
        assert compute_jjd(Joint(1, 1, 1), Joint(1, 1, 1)) == 0.0

    def test_jjd_random_matches_oracle(self):
        rng = np.random.default_rng(0)
        for p, q in rng.normal(size=(200, 2, 3)):
            assert compute_jjd(p, q) == pytest.approx(np.sqrt(np.sum((p - q) ** 2)), abs=1e-12)
            assert compute_jjd(p, q) == compute_jjd(q, p)

    def test_jjo(self):
        np.testing.assert_array_equal(compute_jjo((1, 2, 3), (0, 0, 1)), [1, 2, 2])
        rng = np.random.default_rng(1)
        for p, q in rng.normal(size=(50, 2, 3)):
            np.testing.assert_array_equal(compute_jjo(p, q), -compute_jjo(q, p))

    def test_normalize(self):
        assert normalize_component(-2.0, -2.0, 6.0) == 0
        assert normalize_component(6.0, -2.0, 6.0) == 255
        assert normalize_component(2.0, -2.0, 6.0) == 127
        assert normalize_component(99.0, 0.0, 1.0) == 255
        assert normalize_component(-99.0, 0.0, 1.0) == 0
        with pytest.raises(DegenerateDataError):
            normalize_component(0.0, 1.0, 1.0)

    def test_palette_anchors(self):
        p = jet_palette()
        assert p.colors.shape == (256, 3)
        assert tuple(p[0]) == (0, 0, 128)
        assert tuple(p[255]) == (128, 0, 0)

    def test_palette_index_127_by_hand(self):
        # 127/255 lies between anchors 3/8 -> (0,255,255) and 5/8 -> (255,255,0);
        # red = 255 * (127/255 - 3/8) * 4 = 125.5 -> 126, blue = 129.5 -> 130
        assert tuple(jet_palette()[127]) == (126, 255, 130)
        assert jet_encode(0.5) == (126, 255, 130)

    def test_palette_matches_rational_oracle(self):
        assert [tuple(int(v) for v in c) for c in jet_palette().colors] == PALETTE

    def test_jet_encode_clamps(self):
        assert jet_encode(0.0) == (0, 0, 128)
        assert jet_encode(1.0) == (128, 0, 0)
        assert jet_encode(-3.0) == (0, 0, 128)
        assert jet_encode(7.0) == (128, 0, 0)


class TestPairs:
    @pytest.mark.parametrize("j", [2, 3, 5, 20, 25])
    def test_counts(self, j):
        idx = pair_index(j)
        assert len(idx.pf_pairs) == j * (j - 1) // 2
        assert len(idx.mf_pairs) == j * (j + 1) // 2
        assert idx.pf_pairs == sorted(idx.pf_pairs)
        assert idx.mf_pairs == sorted(idx.mf_pairs)

    def test_three_joint_order(self):
        idx = pair_index(3)
        assert idx.pf_pairs == [(0, 1), (0, 2), (1, 2)]
        assert idx.mf_pairs == [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


class TestColumns:
    def test_origin_frame(self):
        col = build_pose_column(np.zeros((4, 3)), STATS)
        assert col.shape == (12, 3)
        assert np.all(col[:6] == jet_palette()[0])
        assert np.all(col[6:] == normalize_component(0.0, -1.0, 1.0))

    def test_pose_height_twenty_joints(self):
        rng = np.random.default_rng(0)
        assert build_pose_column(rng.uniform(-1, 1, (20, 3)), STATS).shape == (380, 3)

    def test_three_joint_pose_hand_enumerated(self):
        frame = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 0.5, -0.5)]
        stats = NormalizationStats((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0), 2.0)
        col = build_pose_column(np.array(frame), stats)
        # distances 1, sqrt(0.5), sqrt(1.5) over d_max 2 -> indices 127, 90, 156
        expected_dist = [PALETTE[127], PALETTE[90], PALETTE[156]]
        # differences (-1,0,0), (0,-0.5,0.5), (1,-0.5,0.5) over [-1, 1]
        expected_orient = [(0, 127, 127), (127, 63, 191), (255, 63, 191)]
        assert [tuple(c) for c in col] == expected_dist + expected_orient

    def test_frame_and_array_inputs_agree(self):
        rng = np.random.default_rng(2)
        xyz = rng.uniform(-1, 1, (5, 3))
        frame = Frame(tuple(Joint(*p) for p in xyz))
        np.testing.assert_array_equal(build_pose_column(frame, STATS), build_pose_column(xyz, STATS))

    def test_three_joint_motion_hand_enumerated(self):
        f0 = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        f1 = f0 + [0.0, 0.0, 0.5]
        col = build_motion_column(f0, f1, STATS)
        assert col.shape == (6, 3)
        # mf pairs (0,0),(0,1),(0,2),(1,1),(1,2),(2,2); distance block keeps all six rows
        d = [0.5, np.sqrt(1.25), np.sqrt(1.25), 0.5, np.sqrt(2.25), 0.5]
        assert [tuple(c) for c in col] == [PALETTE[int(np.floor(v / 2 * 255))] for v in d]

    def test_stationary_diagonal_is_palette_zero(self):
        rng = np.random.default_rng(3)
        f = rng.uniform(-1, 1, (6, 3))
        col = build_motion_column(f, f, STATS)
        idx = pair_index(6)
        diag = [i for i, (j, k) in enumerate(idx.mf_pairs) if j == k]
        assert np.all(col[diag] == jet_palette()[0])


class TestAssembly:
    def test_widths(self):
        rng = np.random.default_rng(0)
        assert encode_raw(random_seq(rng, 10, 5), STATS).shape == (20, 19, 3)
        assert encode_raw(random_seq(rng, 2, 20), STATS).shape == (380, 3, 3)

    def test_too_short(self):
        with pytest.raises(SequenceTooShortError):
            encode_raw(SkeletonSequence(coords=np.zeros((1, 5, 3))), STATS)

    def test_oracle_equivalence_hundred_sequences(self):
        rng = np.random.default_rng(2024)
        start = time.perf_counter()
        for _ in range(100):
            seq = random_seq(rng, int(rng.integers(2, 13)), 5)
            stats = NormalizationStats(tuple(rng.uniform(-1.2, -0.6, 3)), tuple(rng.uniform(0.6, 1.2, 3)),
                                       float(rng.uniform(1.5, 3.5)))
            got = encode_raw(seq, stats)
            want = np.array(spmf_raw(seq.coords.tolist(), stats_tuple(stats)), dtype=np.uint8)
            np.testing.assert_array_equal(got, want)
        assert time.perf_counter() - start < 10

    def test_pose_columns_at_even_positions(self):
        rng = np.random.default_rng(5)
        seq = random_seq(rng, 4, 5)
        raw = encode_raw(seq, STATS)
        for t in range(4):
            np.testing.assert_array_equal(raw[:, 2 * t], build_pose_column(seq.coords[t], STATS))
        for t in range(3):
            np.testing.assert_array_equal(raw[:, 2 * t + 1],
                                          build_motion_column(seq.coords[t], seq.coords[t + 1], STATS))

    def test_deterministic(self):
        seq = random_seq(np.random.default_rng(9), 7, 20)
        a, b = assemble_spmf(seq, STATS), assemble_spmf(seq, STATS)
        np.testing.assert_array_equal(a.pixels, b.pixels)
        assert a.raw_shape == (380, 13)

    @given(st.integers(2, 300), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_any_length_gives_network_input(self, n, seed):
        seq = random_seq(np.random.default_rng(seed), n, 20)
        img = assemble_spmf(seq, STATS).pixels
        assert img.shape == (IMAGE_SIZE, IMAGE_SIZE, 3) and img.dtype == np.uint8

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_translation_invariance(self, seed):
        # Coordinates and shift on a 1/1024 grid (about a millimetre) keep every
        # sum and difference exact, so the invariance must hold to the bit.
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        seq = SkeletonSequence(coords=rng.integers(-1024, 1024, (n, 20, 3)) / 1024)
        stats = compute_stats([seq])
        shift = rng.integers(-5 * 1024, 5 * 1024, 3) / 1024
        moved = seq.with_coords(seq.coords + shift)
        np.testing.assert_array_equal(assemble_spmf(seq, stats).pixels, assemble_spmf(moved, stats).pixels)


class TestResize:
    def test_identity(self):
        img = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
        np.testing.assert_array_equal(resize_bilinear(img, 32, 32), img)

    def test_constant(self):
        img = np.full((380, 7, 3), 77, dtype=np.uint8)
        assert np.all(resize_bilinear(img) == 77)

    def test_halving_averages_pairs(self):
        img = np.zeros((2, 4, 1), dtype=np.uint8)
        img[:, :, 0] = [10, 20, 31, 40]
        out = resize_bilinear(img, 1, 2)
        # centres fall midway: (10+20)/2 = 15, (31+40)/2 = 35.5 -> 36
        assert out[:, :, 0].tolist() == [[15, 36]]

    def test_upsampling_scalar_oracle(self):
        img = np.array([[0, 100], [200, 50]], dtype=np.uint8)[:, :, None]
        out = resize_bilinear(img, 4, 4)[:, :, 0]

        def sample(y, x):
            sy = min(max((y + 0.5) / 2 - 0.5, 0), 1)
            sx = min(max((x + 0.5) / 2 - 0.5, 0), 1)
            top = img[0, 0, 0] * (1 - sx) + img[0, 1, 0] * sx
            bot = img[1, 0, 0] * (1 - sx) + img[1, 1, 0] * sx
            return int(np.floor(top * (1 - sy) + bot * sy + 0.5))

        assert out.tolist() == [[sample(y, x) for x in range(4)] for y in range(4)]
