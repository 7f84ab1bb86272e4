import numpy as np
import pytest
from scipy.stats import ks_2samp

from tdvit import datasynth as ds


def spec_for(variant="v1", **kw):
    return ds.GeneratorSpec(variant=variant, **kw)


class TestSampleGrowth:
    def test_degenerate_benign(self):
        spec = spec_for(growth_std=0.0)
        rng = np.random.default_rng(0)
        assert ds.sample_growth(0, spec, rng) == spec.benign_growth_mean

    def test_degenerate_malignant_is_triple(self):
        spec = spec_for(growth_std=0.0)
        rng = np.random.default_rng(0)
        assert ds.sample_growth(1, spec, rng) == 3.0 * spec.benign_growth_mean

    def test_monte_carlo_means(self):
        spec = spec_for()
        rng = np.random.default_rng(1)
        benign = np.array([ds.sample_growth(0, spec, rng) for _ in range(100_000)])
        malignant = np.array([ds.sample_growth(1, spec, rng) for _ in range(100_000)])
        assert abs(benign.mean() / spec.benign_growth_mean - 1) < 0.01
        assert abs(malignant.mean() / spec.malignant_growth_mean - 1) < 0.01

    def test_truncation_floor(self):
        spec = spec_for(growth_std=0.2)  # wide: truncation actually bites
        rng = np.random.default_rng(2)
        draws = [ds.sample_growth(0, spec, rng) for _ in range(20_000)]
        assert min(draws) > 0.05 * spec.benign_growth_mean

    def test_ratio_is_enforced_not_free(self):
        spec = spec_for(benign_growth_mean=0.4)
        assert spec.malignant_growth_mean == pytest.approx(1.2)


class TestRenderNodule:
    def test_zero_intensity_leaves_background(self):
        spec = spec_for(intensity=0.0)
        bg = np.random.default_rng(0).random((32, 32, 3)) * 0.5
        out = ds.render_nodule(bg, (16.0, 16.0), 5.0, spec)
        np.testing.assert_array_equal(out, bg)

    def test_subpixel_blob_vanishes(self):
        spec = spec_for()
        bg = np.full((32, 32, 3), 0.2)
        out = ds.render_nodule(bg, (15.5, 15.5), 0.1, spec)
        assert np.abs(out - bg).max() < 1e-10

    def test_center_outside_rejected(self):
        spec = spec_for()
        with pytest.raises(ValueError, match="outside"):
            ds.render_nodule(np.zeros((32, 32, 3)), (40.0, 5.0), 4.0, spec)

    def test_fwhm_matches_diameter(self):
        # pixel-count oracle: pixels of the center row at or above half max
        spec = spec_for(intensity=0.8)
        bg = np.zeros((64, 64, 1))
        for diameter in (6.0, 10.0, 16.0):
            out = ds.render_nodule(bg, (32.0, 32.0), diameter, spec)
            row = out[32, :, 0]
            fwhm = np.sum(row >= 0.4)
            assert abs(fwhm - diameter) <= 1.0, diameter

    def test_clamped_to_unit_range(self):
        spec = spec_for(intensity=1.5)
        bg = np.full((16, 16, 1), 0.9)
        out = ds.render_nodule(bg, (8.0, 8.0), 8.0, spec)
        assert out.max() <= 1.0 and out.min() >= 0.0


class TestV1:
    def test_deterministic_growth_arithmetic(self):
        spec = spec_for("v1", growth_std=0.0, init_diameter_std=0.0)
        rng = np.random.default_rng(0)
        _, d_ben, g_b, d0 = ds.plan_v1(spec, rng, 0)
        _, d_mal, g_m, _ = ds.plan_v1(spec, np.random.default_rng(0), 1)
        assert g_m == 3 * g_b
        np.testing.assert_allclose(d_mal[-1] - d0, 3 * (d_ben[-1] - d0))

    def test_single_frame(self):
        spec = spec_for("v1", frames=1)
        rng = np.random.default_rng(1)
        sample = ds.generate_v1(spec, rng, label=1)
        assert sample.sequence.frames.shape == (1, 32, 32, 3)
        np.testing.assert_array_equal(sample.sequence.times, [0.0])

    def test_mean_final_diameter(self):
        spec = spec_for("v1")
        finals = []
        for i in range(10_000):
            rng = np.random.default_rng(np.random.SeedSequence((3, i)))
            _, d, _, _ = ds.plan_v1(spec, rng, 1)
            finals.append(d[-1])
        expected = spec.init_diameter_mean + spec.malignant_growth_mean * spec.interval_months * 4
        assert abs(np.mean(finals) / expected - 1) < 0.02

    def test_provenance_consistent(self):
        spec = spec_for("v1")
        rng = np.random.default_rng(5)
        s = ds.generate_v1(spec, rng, label=1, sample_seed=7)
        np.testing.assert_allclose(
            s.diameters, s.init_diameter + s.growth * s.sequence.times, rtol=1e-12
        )
        assert s.sample_seed == 7


class TestV2:
    def test_matched_diameters_give_third_times(self):
        spec = spec_for("v2", growth_std=0.0, init_diameter_std=0.0, schedule_step_std=0.0)
        t_ben, d_ben, _, _ = ds.plan_v2(spec, np.random.default_rng(0), 0)
        t_mal, d_mal, _, _ = ds.plan_v2(spec, np.random.default_rng(0), 1)
        np.testing.assert_array_equal(d_ben, d_mal)
        np.testing.assert_allclose(t_mal, t_ben / 3.0, rtol=1e-12)

    def test_per_frame_sizes_class_indistinguishable(self):
        # core contract: KS statistic below 0.02 per frame at n = 10^4
        spec = spec_for("v2")
        per_class = 10_000
        d_ben = np.empty((per_class, spec.frames))
        d_mal = np.empty((per_class, spec.frames))
        for i in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence((11, i)))
            _, d_ben[i], _, _ = ds.plan_v2(spec, rng, 0)
            rng = np.random.default_rng(np.random.SeedSequence((12, i)))
            _, d_mal[i], _, _ = ds.plan_v2(spec, rng, 1)
        for j in range(spec.frames):
            stat = ks_2samp(d_ben[:, j], d_mal[:, j]).statistic
            assert stat < 0.02, (j, stat)

    def test_interval_ratio_three(self):
        spec = spec_for("v2")
        gaps = {0: [], 1: []}
        for i in range(10_000):
            label = i % 2
            rng = np.random.default_rng(np.random.SeedSequence((13, i)))
            t, _, _, _ = ds.plan_v2(spec, rng, label)
            gaps[label].append(np.diff(t).mean())
        ratio = np.mean(gaps[0]) / np.mean(gaps[1])
        assert abs(ratio - 3.0) < 0.15  # 1:3 malignant:benign within 5%

    def test_times_strictly_increasing(self):
        spec = spec_for("v2")
        for i in range(200):
            rng = np.random.default_rng(np.random.SeedSequence((14, i)))
            t, _, _, _ = ds.plan_v2(spec, rng, i % 2)
            assert np.all(np.diff(t) > 0)

    def test_provenance_consistent(self):
        spec = spec_for("v2")
        s = ds.generate_v2(spec, np.random.default_rng(6), label=0)
        np.testing.assert_allclose(
            s.diameters, s.init_diameter + s.growth * s.sequence.times, rtol=1e-9
        )


class TestGenerateDataset:
    def test_byte_identical_reruns(self, tmp_path):
        spec = spec_for("v2")
        p1, p2 = tmp_path / "a.tdds", tmp_path / "b.tdds"
        ds.generate_dataset(spec, 10, seed=7, path=str(p1))
        ds.generate_dataset(spec, 10, seed=7, path=str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_label_balance(self):
        data = ds.generate_dataset(spec_for("v1"), 11, seed=0)
        assert int(np.sum(data.labels == 0)) == 6
        assert int(np.sum(data.labels == 1)) == 5

    def test_seed_changes_payload_not_header(self, tmp_path):
        spec = spec_for("v1")
        p1, p2 = tmp_path / "a.tdds", tmp_path / "b.tdds"
        ds.generate_dataset(spec, 4, seed=1, path=str(p1))
        ds.generate_dataset(spec, 4, seed=2, path=str(p2))
        b1, b2 = p1.read_bytes(), p2.read_bytes()
        assert b1[:19] == b2[:19]  # magic, version, header metadata
        assert b1 != b2

    def test_diameters_stay_inside_frame(self):
        for variant in ("v1", "v2"):
            spec = spec_for(variant)
            for i in range(500):
                rng = np.random.default_rng(np.random.SeedSequence((21, i)))
                plan = ds.plan_v1 if variant == "v1" else ds.plan_v2
                _, d, _, _ = plan(spec, rng, i % 2)
                assert d.max() < spec.image_size

    def test_pixel_range(self):
        data = ds.generate_dataset(spec_for("v2"), 6, seed=3)
        assert data.frames.min() >= 0.0 and data.frames.max() <= 1.0


class TestDatasetFormat:
    def test_roundtrip_bit_exact(self, tmp_path):
        data = ds.generate_dataset(spec_for("v2", frames=3, image_size=16), 5, seed=9)
        p1, p2 = tmp_path / "a.tdds", tmp_path / "b.tdds"
        ds.save_dataset(str(p1), data)
        loaded = ds.load_dataset(str(p1))
        ds.save_dataset(str(p2), loaded)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(loaded.frames, data.frames)
        np.testing.assert_array_equal(loaded.times, data.times)
        np.testing.assert_array_equal(loaded.labels, data.labels)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.tdds"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(ValueError, match="TDDS"):
            ds.load_dataset(str(p))

    def test_sequence_accessor(self):
        data = ds.generate_dataset(spec_for("v1", frames=2), 2, seed=0)
        seq = data.sequence(1)
        assert seq.label == 1
        assert seq.frames.shape == (2, 32, 32, 3)


class TestExternalBackgrounds:
    def test_single_record(self, tmp_path):
        p = tmp_path / "cifar.bin"
        record = bytes([3]) + bytes(range(256)) * 12  # 1 + 3072 bytes
        p.write_bytes(record)
        bgs = ds.load_external_backgrounds(str(p))
        assert bgs.shape == (1, 32, 32, 3)

    def test_truncated_file(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"\x00" * 3000)
        with pytest.raises(ValueError, match="3073"):
            ds.load_external_backgrounds(str(p))

    def test_full_intensity_scaling(self, tmp_path):
        p = tmp_path / "white.bin"
        p.write_bytes(bytes([0]) + b"\xff" * 3072)
        bgs = ds.load_external_backgrounds(str(p))
        np.testing.assert_array_equal(bgs, np.ones((1, 32, 32, 3), dtype=np.float32))

    def test_channel_major_layout(self, tmp_path):
        # first 1024 bytes are the red plane
        p = tmp_path / "red.bin"
        p.write_bytes(bytes([0]) + b"\xff" * 1024 + b"\x00" * 2048)
        bgs = ds.load_external_backgrounds(str(p))
        np.testing.assert_array_equal(bgs[0, :, :, 0], np.ones((32, 32), dtype=np.float32))
        np.testing.assert_array_equal(bgs[0, :, :, 1:], np.zeros((32, 32, 2), dtype=np.float32))

    def test_generation_with_external_backgrounds(self, tmp_path):
        p = tmp_path / "cifar.bin"
        rng = np.random.default_rng(0)
        p.write_bytes(bytes(rng.integers(0, 256, size=3073 * 4, dtype=np.uint8)))
        spec = spec_for("v1", background=str(p), frames=2)
        data = ds.generate_dataset(spec, 4, seed=5)
        assert data.frames.shape == (4, 2, 32, 32, 3)


def test_interval_stats():
    data = ds.generate_dataset(spec_for("v2"), 40, seed=2)
    stats = ds.interval_stats(data)
    assert stats["benign"] > stats["malignant"] > 0
