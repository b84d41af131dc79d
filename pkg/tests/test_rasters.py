"""Codecs, synthetic scenes and morphological corruption."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image as PilImage

from trisod import rasters

from conftest import blob_mask


def brute_morph(mask, kernel, mode):
    """Reference square-element morphology with replicate padding."""
    r = kernel // 2
    h, w = mask.shape
    out = np.zeros_like(mask)
    for y in range(h):
        for x in range(w):
            ys = slice(max(0, y - r), min(h, y + r + 1))
            xs = slice(max(0, x - r), min(w, x + r + 1))
            win = mask[ys, xs]
            out[y, x] = win.min() if mode == "erode" else win.max()
    return out


class TestImageCodec:
    def test_black_png(self, tmp_path):
        path = tmp_path / "black.png"
        PilImage.fromarray(np.zeros((8, 8, 3), np.uint8)).save(path)
        assert (rasters.load_image(path) == 0).all()

    def test_white_png(self, tmp_path):
        path = tmp_path / "white.png"
        PilImage.fromarray(np.full((8, 8, 3), 255, np.uint8)).save(path)
        assert (rasters.load_image(path) == 1).all()

    def test_exact_division(self, tmp_path):
        path = tmp_path / "gray.png"
        PilImage.fromarray(np.full((8, 8, 3), 128, np.uint8)).save(path)
        assert np.allclose(rasters.load_image(path), 128 / 255)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            rasters.load_image(tmp_path / "nope.png")

    def test_wrong_channel_count(self, tmp_path):
        path = tmp_path / "gray.png"
        PilImage.fromarray(np.zeros((8, 8), np.uint8)).save(path)
        with pytest.raises(rasters.CodecError):
            rasters.load_image(path)

    def test_wrong_bit_depth(self, tmp_path):
        path = tmp_path / "deep.png"
        PilImage.new("I;16", (8, 8)).save(path)
        with pytest.raises(rasters.CodecError):
            rasters.load_image(path)

    def test_round_trip(self, tmp_path, rng):
        image = rng.integers(0, 256, (16, 16, 3)).astype(np.float64) / 255
        rasters.save_image(image, tmp_path / "x.png")
        assert np.array_equal(rasters.load_image(tmp_path / "x.png"), image)


class TestMaskCodec:
    def test_all_ones_round_trip(self, tmp_path):
        mask = np.ones((8, 8), np.uint8)
        rasters.save_mask(mask, tmp_path / "m.png")
        assert np.array_equal(rasters.load_mask(tmp_path / "m.png"), mask)

    def test_threshold_boundary(self, tmp_path):
        raw = np.array([[127, 128]], np.uint8)
        PilImage.fromarray(raw, mode="L").save(tmp_path / "m.png")
        assert rasters.load_mask(tmp_path / "m.png").tolist() == [[0, 1]]

    def test_checkerboard_round_trip(self, tmp_path):
        mask = (np.indices((9, 9)).sum(axis=0) % 2).astype(np.uint8)
        rasters.save_mask(mask, tmp_path / "m.png")
        loaded = rasters.load_mask(tmp_path / "m.png")
        assert (loaded == mask).all()

    def test_multichannel_rejected(self, tmp_path):
        PilImage.fromarray(np.zeros((8, 8, 3), np.uint8)).save(tmp_path / "m.png")
        with pytest.raises(rasters.CodecError):
            rasters.load_mask(tmp_path / "m.png")

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_random_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        mask = (rng.random((12, 12)) < 0.5).astype(np.uint8)
        import tempfile, os

        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "m.png")
            rasters.save_mask(mask, path)
            assert np.array_equal(rasters.load_mask(path), mask)


class TestTrimapCodec:
    def test_single_class(self, tmp_path):
        trimap = np.full((8, 8), 2, np.uint8)
        rasters.encode_trimap(trimap, tmp_path / "t.png")
        raw = np.asarray(PilImage.open(tmp_path / "t.png"))
        assert (raw == 255).all()

    def test_round_trip(self, tmp_path, rng):
        trimap = rng.integers(0, 3, (16, 16)).astype(np.uint8)
        rasters.encode_trimap(trimap, tmp_path / "t.png")
        assert np.array_equal(rasters.decode_trimap(tmp_path / "t.png"), trimap)

    def test_bucket_rules(self, tmp_path):
        raw = np.array([[0, 63, 64, 100, 191, 192, 255]], np.uint8)
        PilImage.fromarray(raw, mode="L").save(tmp_path / "t.png")
        assert rasters.decode_trimap(tmp_path / "t.png").tolist() == [[0, 0, 1, 1, 1, 2, 2]]


class TestSyntheticScene:
    def test_deterministic(self):
        a_img, a_mask = rasters.gen_synthetic_scene(7, 64, 2)
        b_img, b_mask = rasters.gen_synthetic_scene(7, 64, 2)
        assert np.array_equal(a_img, b_img) and np.array_equal(a_mask, b_mask)

    def test_foreground_fraction_bounds(self):
        for seed in range(100):
            _, mask = rasters.gen_synthetic_scene(seed, 128, 1)
            assert 0.05 <= mask.mean() <= 0.60

    def test_has_boundary_pixel(self):
        from trisod.metrics import extract_boundary

        _, mask = rasters.gen_synthetic_scene(3, 64, 2)
        assert extract_boundary(mask).count > 0

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            rasters.gen_synthetic_scene(0, 16, 1)
        with pytest.raises(ValueError):
            rasters.gen_synthetic_scene(0, 64, 0)

    def test_values_in_range(self):
        image, _ = rasters.gen_synthetic_scene(11, 64, 3)
        assert image.min() >= 0 and image.max() <= 1


class TestCorruptMask:
    def test_erode_empty_fixed_point(self):
        zeros = np.zeros((16, 16), np.uint8)
        assert (rasters.corrupt_mask(zeros, 5, "erode") == 0).all()

    def test_dilate_full_fixed_point(self):
        ones = np.ones((16, 16), np.uint8)
        assert (rasters.corrupt_mask(ones, 7, "dilate") == 1).all()

    def test_centered_square_erosion(self):
        mask = np.zeros((32, 32), np.uint8)
        mask[12:21, 12:21] = 1  # 9x9
        out = rasters.corrupt_mask(mask, 5, "erode")
        want = np.zeros((32, 32), np.uint8)
        want[14:19, 14:19] = 1  # 5x5
        assert np.array_equal(out, want)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            rasters.corrupt_mask(np.zeros((8, 8), np.uint8), 4, "erode")

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            mask = blob_mask(rng, 20)
            for kernel in (3, 5):
                for mode in ("erode", "dilate"):
                    got = rasters.corrupt_mask(mask, kernel, mode)
                    assert np.array_equal(got, brute_morph(mask, kernel, mode))

    def test_set_monotonicity(self, rng):
        for _ in range(20):
            mask = (rng.random((16, 16)) < 0.5).astype(np.uint8)
            eroded = rasters.corrupt_mask(mask, 5, "erode")
            dilated = rasters.corrupt_mask(mask, 5, "dilate")
            assert (eroded <= mask).all()
            assert (dilated >= mask).all()

    def test_changes_only_near_boundary(self, rng):
        from trisod.metrics import extract_boundary

        for _ in range(10):
            mask = blob_mask(rng, 24)
            boundary = extract_boundary(mask).coords
            for kernel, mode in ((3, "erode"), (5, "dilate")):
                out = rasters.corrupt_mask(mask, kernel, mode)
                changed = np.argwhere(out != mask)
                r = kernel // 2
                for y, x in changed:
                    cheb = np.abs(boundary - (y, x)).max(axis=1).min()
                    assert cheb <= r

    def test_random_mode_deterministic(self, rng):
        mask = blob_mask(rng, 16)
        a = rasters.corrupt_mask(mask, 5, "random", seed=3)
        b = rasters.corrupt_mask(mask, 5, "random", seed=3)
        assert np.array_equal(a, b)


class TestResize:
    def test_nearest_preserves_value_set(self, rng):
        trimap = rng.integers(0, 3, (13, 17)).astype(np.uint8)
        out = rasters.resize_nearest(trimap, (40, 30))
        assert set(np.unique(out)) <= {0, 1, 2}

    def test_nearest_integer_upscale_is_block_replication(self, rng):
        arr = rng.integers(0, 9, (6, 6))
        out = rasters.resize_nearest(arr, (18, 18))
        assert np.array_equal(out, np.kron(arr, np.ones((3, 3), arr.dtype)))

    def test_bilinear_constant(self):
        arr = np.full((10, 10), 0.37)
        out = rasters.resize_bilinear(arr, (23, 7))
        assert np.allclose(out, 0.37)
