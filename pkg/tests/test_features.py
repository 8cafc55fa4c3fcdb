"""Feature extraction, max filtering, and z-score normalization."""
import numpy as np
import pytest

from pyrdet import (
    DataError,
    ExtractionError,
    FeatureMap,
    FeaturePyramid,
    LevelGeometry,
    PipelineOrderError,
    SeededConvFeatures,
    Stage,
    build_image_pyramid,
    extract_features,
    max_filter_pyramid,
    max_pool_3x3,
    zscore_normalize,
)


def make_fp(arrays, stage=Stage.MAX5, image_id="t"):
    """Wrap raw (C, rows, cols) float32 arrays into a pyramid, one per level."""
    levels = []
    for i, arr in enumerate(arrays, start=1):
        geom = LevelGeometry(
            level_index=i, scale=1.0, stride=16, feature_dims=arr.shape[1:]
        )
        levels.append((geom, FeatureMap(np.asarray(arr, dtype=np.float32))))
    return FeaturePyramid(image_id=image_id, levels=tuple(levels), stage=stage)


def brute_max3(data):
    c, rows, cols = data.shape
    out = np.empty_like(data)
    for ch in range(c):
        for r in range(rows):
            for col in range(cols):
                r0, r1 = max(0, r - 1), min(rows, r + 2)
                c0, c1 = max(0, col - 1), min(cols, col + 2)
                out[ch, r, col] = data[ch, r0:r1, c0:c1].max()
    return out


def brute_max5(data):
    c, rows, cols = data.shape
    out = np.empty_like(data)
    for ch in range(c):
        for r in range(rows):
            for col in range(cols):
                r0, r1 = max(0, r - 2), min(rows, r + 3)
                c0, c1 = max(0, col - 2), min(cols, col + 3)
                out[ch, r, col] = data[ch, r0:r1, c0:c1].max()
    return out


class TestExtractor:
    def test_descriptor_encodes_params(self):
        ex = SeededConvFeatures(seed=5, channels=16, mid_channels=8)
        assert ex.descriptor == "seeded-conv2:seed=5,mid=8,channels=16"
        assert ex.stride == 16
        assert ex.channels == 16

    def test_output_dims_are_floor_over_16(self):
        ex = SeededConvFeatures(seed=0, channels=4, mid_channels=2)
        for h, w in [(16, 16), (17, 31), (160, 96), (15, 100), (1, 1)]:
            out = ex.extract(np.zeros((h, w, 3), dtype=np.uint8))
            assert out.shape == (4, h // 16, w // 16)

    def test_zero_image_gives_constant_bias_response(self):
        ex = SeededConvFeatures(seed=1, channels=8, mid_channels=4)
        out = ex.extract(np.zeros((64, 96, 3), dtype=np.uint8))
        for ch in range(8):
            plane = out[ch]
            assert np.all(plane == plane[0, 0])

    def test_deterministic_across_instances(self):
        rng = np.random.default_rng(4)
        img = rng.integers(0, 256, (80, 80, 3), dtype=np.uint8)
        a = SeededConvFeatures(seed=3, channels=8, mid_channels=4).extract(img)
        b = SeededConvFeatures(seed=3, channels=8, mid_channels=4).extract(img)
        assert np.array_equal(a, b)

    def test_different_seed_changes_output(self):
        img = np.full((64, 64, 3), 50, dtype=np.uint8)
        a = SeededConvFeatures(seed=0, channels=8).extract(img)
        b = SeededConvFeatures(seed=1, channels=8).extract(img)
        assert not np.array_equal(a, b)

    def test_bad_inputs(self):
        ex = SeededConvFeatures()
        with pytest.raises(ValueError):
            ex.extract(np.zeros((10, 10), dtype=np.uint8))
        with pytest.raises(ValueError):
            SeededConvFeatures(channels=0)


class TestExtractPipeline:
    def test_canvas_top_level_is_107(self):
        pyr = build_image_pyramid(np.zeros((1713, 1713, 3), dtype=np.uint8))
        ex = SeededConvFeatures(seed=0, channels=4, mid_channels=2)
        fp = extract_features(pyr, ex, image_id="canvas")
        geom, fm = fp.level(7)
        assert fm.data.shape == (4, 107, 107)
        assert geom.feature_dims == (107, 107)
        assert fp.stage == Stage.CONV5

    def test_dims_match_geometry_on_every_level(self):
        rng = np.random.default_rng(8)
        img = rng.integers(0, 256, (300, 220, 3), dtype=np.uint8)
        pyr = build_image_pyramid(img)
        fp = extract_features(pyr, SeededConvFeatures(channels=4, mid_channels=2))
        for geom, fm in fp.levels:
            assert fm.data.shape[1:] == geom.feature_dims

    def test_provenance_fields_set(self):
        pyr = build_image_pyramid(np.zeros((64, 64, 3), dtype=np.uint8))
        ex = SeededConvFeatures(channels=4, mid_channels=2)
        fp = extract_features(pyr, ex, image_id="p")
        assert fp.extractor_descriptor == ex.descriptor
        assert len(fp.config_digest) == 64

    def test_dim_mismatch_names_level(self):
        class Broken:
            descriptor = "broken"
            channels = 2
            stride = 16

            def extract(self, image):
                return np.zeros((2, 1, 1), dtype=np.float32)

        pyr = build_image_pyramid(np.zeros((120, 120, 3), dtype=np.uint8))
        with pytest.raises(ExtractionError, match="level"):
            extract_features(pyr, Broken())

    def test_stride_mismatch_rejected(self):
        class WrongStride(SeededConvFeatures):
            stride = 8

        pyr = build_image_pyramid(np.zeros((64, 64, 3), dtype=np.uint8))
        with pytest.raises(ExtractionError, match="stride"):
            extract_features(pyr, WrongStride(channels=4, mid_channels=2))

    def test_extractor_exception_wrapped_with_level(self):
        class Boom:
            descriptor = "boom"
            channels = 2
            stride = 16

            def extract(self, image):
                raise RuntimeError("kaput")

        pyr = build_image_pyramid(np.zeros((64, 64, 3), dtype=np.uint8))
        with pytest.raises(ExtractionError, match="level 1"):
            extract_features(pyr, Boom())


class TestMaxPool:
    def test_constant_map_unchanged(self):
        fm = FeatureMap(np.full((2, 4, 5), 3.5, dtype=np.float32))
        assert np.array_equal(max_pool_3x3(fm).data, fm.data)

    def test_delta_dilates_to_3x3_block(self):
        data = np.zeros((1, 5, 5), dtype=np.float32)
        data[0, 2, 2] = 1.0
        out = max_pool_3x3(FeatureMap(data)).data
        want = np.zeros((1, 5, 5), dtype=np.float32)
        want[0, 1:4, 1:4] = 1.0
        assert np.array_equal(out, want)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(12)
        for _ in range(30):
            c = int(rng.integers(1, 4))
            rows = int(rng.integers(1, 9))
            cols = int(rng.integers(1, 9))
            data = rng.normal(size=(c, rows, cols)).astype(np.float32)
            out = max_pool_3x3(FeatureMap(data)).data
            assert np.array_equal(out, brute_max3(data))

    def test_output_dominates_input(self):
        rng = np.random.default_rng(14)
        data = rng.normal(size=(3, 7, 6)).astype(np.float32)
        out = max_pool_3x3(FeatureMap(data)).data
        assert np.all(out >= data)

    def test_twice_equals_5x5(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            data = rng.normal(size=(2, 8, 8)).astype(np.float32)
            twice = max_pool_3x3(max_pool_3x3(FeatureMap(data))).data
            assert np.array_equal(twice, brute_max5(data))

    def test_single_cell(self):
        fm = FeatureMap(np.array([[[2.0]]], dtype=np.float32))
        assert np.array_equal(max_pool_3x3(fm).data, fm.data)

    def test_stage_gate(self):
        fp = make_fp([np.zeros((1, 2, 2))], stage=Stage.MAX5)
        with pytest.raises(PipelineOrderError):
            max_filter_pyramid(fp)
        ok = make_fp([np.zeros((1, 2, 2))], stage=Stage.CONV5)
        assert max_filter_pyramid(ok).stage == Stage.MAX5


class TestZscore:
    def test_hand_case_1234(self):
        fp = make_fp([np.array([[[1.0, 2.0], [3.0, 4.0]]])])
        out, stats = zscore_normalize(fp)
        got = np.sort(out.levels[0][1].data.ravel())
        want_exact = np.array([-1.5, -0.5, 0.5, 1.5]) / np.sqrt(1.25)
        assert np.allclose(got, want_exact, atol=1e-6)
        # the four-decimal published values
        assert np.allclose(got, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)
        st = stats.level(1)
        assert st.mu[0] == pytest.approx(2.5)
        assert st.sigma[0] == pytest.approx(np.sqrt(1.25))

    def test_constant_level_maps_to_zero(self):
        fp = make_fp([np.full((3, 4, 4), 7.0)])
        out, stats = zscore_normalize(fp)
        assert np.all(out.levels[0][1].data == 0.0)
        assert np.all(stats.level(1).sigma == 1e-6)

    def test_mean_zero_std_one(self):
        rng = np.random.default_rng(19)
        arrays = [
            rng.normal(3.0, 2.5, size=(8, int(rng.integers(4, 12)), int(rng.integers(4, 12))))
            for _ in range(5)
        ]
        out, _ = zscore_normalize(make_fp(arrays))
        for _, fm in out.levels:
            flat = fm.data.reshape(fm.channels, -1).astype(np.float64)
            assert np.all(np.abs(flat.mean(axis=1)) < 1e-5)
            assert np.all(np.abs(flat.std(axis=1) - 1.0) < 1e-3)

    def test_stats_are_per_level_and_channel(self):
        a = np.stack([np.full((3, 3), 1.0), np.full((3, 3), 5.0)])
        b = np.stack([np.full((2, 2), -4.0), np.full((2, 2), 0.0)])
        _, stats = zscore_normalize(make_fp([a, b]))
        assert stats.level(1).mu.tolist() == [1.0, 5.0]
        assert stats.level(2).mu.tolist() == [-4.0, 0.0]

    def test_non_finite_names_level_and_channel(self):
        good = np.zeros((2, 3, 3))
        bad = np.zeros((2, 3, 3))
        bad[1, 2, 2] = np.nan
        with pytest.raises(DataError, match=r"level 2.*channel 1"):
            zscore_normalize(make_fp([good, bad]))

    def test_stage_gates(self):
        with pytest.raises(PipelineOrderError):
            zscore_normalize(make_fp([np.zeros((1, 2, 2))], stage=Stage.CONV5))
        normed, _ = zscore_normalize(make_fp([np.zeros((1, 2, 2))]))
        with pytest.raises(PipelineOrderError):
            zscore_normalize(normed)

    def test_full_chain_determinism(self):
        rng = np.random.default_rng(23)
        img = rng.integers(0, 256, (200, 160, 3), dtype=np.uint8)
        ex = SeededConvFeatures(seed=2, channels=8, mid_channels=4)

        def run():
            pyr = build_image_pyramid(img)
            fp, _ = zscore_normalize(max_filter_pyramid(extract_features(pyr, ex)))
            return fp

        a, b = run(), run()
        for (_, fa), (_, fb) in zip(a.levels, b.levels):
            assert np.array_equal(fa.data, fb.data)
