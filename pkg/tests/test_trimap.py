"""Trimap generation invariants: partition, coverage, nesting, monotonicity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from trisod import trimap as tm
from trisod.rasters import dilate, erode

from conftest import blob_mask


def in_raster_boundary(mask):
    """Foreground pixels with an in-raster 4-neighbor in background."""
    out = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < h and 0 <= nx < w and not mask[ny, nx]:
                        out[y, x] = True
    return out


class TestTrimapFromMask:
    def test_all_zeros(self):
        t = tm.trimap_from_mask(np.zeros((16, 16), np.uint8), 5)
        assert (t == 0).all()

    def test_all_ones_replicate_padding(self):
        t = tm.trimap_from_mask(np.ones((16, 16), np.uint8), 5)
        assert (t == 2).all()

    def test_centered_square_label_counts(self):
        mask = np.zeros((32, 32), np.uint8)
        mask[12:21, 12:21] = 1  # 9x9
        t = tm.trimap_from_mask(mask, 5)
        counts = np.bincount(t.ravel(), minlength=3)
        assert counts[2] == 25
        assert counts[1] == 13**2 - 5**2
        assert counts[0] == 32 * 32 - 13**2

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            tm.trimap_from_mask(np.zeros((8, 8), np.uint8), 6)

    def test_matches_erode_dilate(self, rng):
        mask = blob_mask(rng, 24)
        t = tm.trimap_from_mask(mask, 7)
        assert np.array_equal(t == 2, erode(mask, 7) == 1)
        assert np.array_equal(t == 0, dilate(mask, 7) == 0)

    @given(st.integers(0, 10**6), st.sampled_from(tm.TRAIN_KERNELS))
    @settings(max_examples=40, deadline=None)
    def test_invariants(self, seed, kernel):
        rng = np.random.default_rng(seed)
        mask = blob_mask(rng, 24)
        t = tm.trimap_from_mask(mask, kernel)
        # partition: labels are exactly one of {0,1,2}
        assert set(np.unique(t)) <= {0, 1, 2}
        # nesting
        assert ((t == 2) <= (mask == 1)).all()
        assert ((t == 0) <= (mask == 0)).all()
        # coverage: in-raster boundary pixels are uncertain
        assert (t[in_raster_boundary(mask)] == 1).all()

    def test_kernel_monotonicity(self, rng):
        for _ in range(10):
            mask = blob_mask(rng, 24)
            prev = None
            for kernel in tm.TRAIN_KERNELS:
                band = tm.trimap_from_mask(mask, kernel) == 1
                if prev is not None:
                    assert (prev <= band).all()
                prev = band


class TestRandomTrimap:
    def test_deterministic(self, rng):
        mask = blob_mask(rng, 16)
        a = tm.random_trimap_from_mask(mask, 99)
        b = tm.random_trimap_from_mask(mask, 99)
        assert np.array_equal(a, b)

    def test_kernel_frequencies(self):
        draws = [tm.draw_kernel(seed) for seed in range(1000)]
        counts = {k: draws.count(k) / 1000 for k in tm.TRAIN_KERNELS}
        for k, freq in counts.items():
            assert abs(freq - 0.2) <= 0.05, (k, freq)

    def test_all_zeros_any_seed(self):
        for seed in (0, 1, 2):
            t = tm.random_trimap_from_mask(np.zeros((12, 12), np.uint8), seed)
            assert (t == 0).all()


class TestTrimapFromSaliency:
    def test_uniform_foreground(self):
        t = tm.trimap_from_saliency(np.full((16, 16), 0.9), 0.5, 5)
        assert (t == 2).all()

    def test_uniform_background(self):
        t = tm.trimap_from_saliency(np.full((16, 16), 0.1), 0.5, 5)
        assert (t == 0).all()

    def test_vertical_ramp_band(self):
        # ramp crosses 0.5 between columns 15 and 16 of a 32-wide raster;
        # binarized foreground is cols >= 16, so kernel 5 (reach 2) puts
        # the straight uncertain band exactly on cols 14..17
        ramp = np.tile(np.linspace(0.0, 1.0, 32), (32, 1))
        t = tm.trimap_from_saliency(ramp, 0.5, 5)
        first_fg = int((ramp[0] >= 0.5).argmax())
        assert first_fg == 16
        band_cols = np.where((t == 1).any(axis=0))[0]
        assert band_cols.tolist() == [14, 15, 16, 17]
        assert (t[:, band_cols] == 1).all()
        assert (t[:, : first_fg - 2] == 0).all()
        assert (t[:, first_fg + 2 :] == 2).all()

    def test_threshold_validation(self):
        with pytest.raises(ValueError):
            tm.trimap_from_saliency(np.zeros((8, 8)), 0.0, 5)
        with pytest.raises(ValueError):
            tm.trimap_from_saliency(np.zeros((8, 8)), 1.0, 5)
