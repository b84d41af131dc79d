"""Metric oracles: brute-force displacement, Canny structure, F arithmetic."""

import csv

import numpy as np
import pytest

from trisod import metrics, rasters

from conftest import blob_mask


def brute_boundary(mask):
    h, w = mask.shape
    out = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 1:
                for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ny, nx = y + dy, x + dx
                    if not (0 <= ny < h and 0 <= nx < w) or mask[ny, nx] == 0:
                        out.append((y, x))
                        break
    return out


def brute_bde(a, b):
    bx, by = brute_boundary(a), brute_boundary(b)
    d_xy = np.mean([min(np.hypot(p[0] - q[0], p[1] - q[1]) for q in by) for p in bx])
    d_yx = np.mean([min(np.hypot(p[0] - q[0], p[1] - q[1]) for p in bx) for q in by])
    return d_xy / 2 + d_yx / 2


class TestMae:
    def test_perfect(self, rng):
        g = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        assert metrics.mae(g.astype(float), g) == 0.0

    def test_half_everywhere(self, rng):
        g = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        assert metrics.mae(np.full((8, 8), 0.5), g) == 0.5

    def test_arithmetic(self):
        g = np.zeros((8, 8), np.uint8)
        g[:4] = 1
        assert metrics.mae(np.full((8, 8), 0.2), g) == pytest.approx(0.5)


class TestPrCurve:
    def test_perfect_prediction(self, rng):
        g = blob_mask(rng, 16)
        curve = metrics.pr_curve(g.astype(float), g)
        assert (curve.precision[1:] == 1).all()
        assert (curve.recall[1:] == 1).all()

    def test_all_ones_prediction(self, rng):
        g = blob_mask(rng, 16)
        curve = metrics.pr_curve(np.ones((16, 16)), g)
        assert (curve.recall == 1).all()
        assert np.allclose(curve.precision, g.mean())

    def test_recall_non_increasing(self, rng):
        s = rng.random((16, 16))
        g = blob_mask(rng, 16)
        curve = metrics.pr_curve(s, g)
        assert (np.diff(curve.recall) <= 1e-12).all()

    def test_matches_naive_thresholding(self, rng):
        s = rng.random((12, 12))
        g = blob_mask(rng, 12)
        curve = metrics.pr_curve(s, g)
        for k in (0, 1, 77, 128, 255):
            pred = s >= (k / 255.0)
            tp = float((pred & (g == 1)).sum())
            want_p = tp / pred.sum() if pred.sum() else 1.0
            want_r = tp / g.sum()
            assert curve.precision[k] == pytest.approx(want_p, abs=1e-12)
            assert curve.recall[k] == pytest.approx(want_r, abs=1e-12)

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError):
            metrics.pr_curve(np.zeros((8, 8)), np.zeros((8, 8), np.uint8))


class TestFBeta:
    def test_perfect_both_modes(self, rng):
        g = blob_mask(rng, 16)
        assert metrics.f_beta(g.astype(float), g, "adaptive") == 1.0
        assert metrics.f_beta(g.astype(float), g, "max") == 1.0

    def test_half_truth_arithmetic(self):
        g = np.zeros((8, 8), np.uint8)
        g[:4] = 1
        got = metrics.f_beta(np.ones((8, 8)), g, "adaptive")
        assert got == pytest.approx(0.65 / 1.15, abs=1e-10)

    def test_max_dominates_adaptive(self, rng):
        for _ in range(20):
            s = rng.random((16, 16))
            g = blob_mask(rng, 16)
            assert metrics.f_beta(s, g, "max") >= metrics.f_beta(s, g, "adaptive") - 1e-12

    def test_max_is_curve_max(self, rng):
        s = rng.random((16, 16))
        g = blob_mask(rng, 16)
        curve = metrics.pr_curve(s, g)
        beta_sq = 0.3
        fs = [
            (1 + beta_sq) * p * r / (beta_sq * p + r) if beta_sq * p + r > 0 else 0.0
            for p, r in zip(curve.precision, curve.recall)
        ]
        assert metrics.f_beta(s, g, "max") == pytest.approx(max(fs), abs=1e-12)


class TestBoundary:
    def test_empty(self):
        assert metrics.extract_boundary(np.zeros((8, 8), np.uint8)).count == 0

    def test_single_pixel(self):
        m = np.zeros((8, 8), np.uint8)
        m[3, 4] = 1
        bs = metrics.extract_boundary(m)
        assert bs.count == 1 and tuple(bs.coords[0]) == (3, 4)

    def test_filled_square_perimeter(self):
        m = np.zeros((9, 9), np.uint8)
        m[2:7, 2:7] = 1
        assert metrics.extract_boundary(m).count == 16

    def test_matches_enumeration(self, rng):
        for _ in range(50):
            m = (rng.random((12, 12)) < 0.5).astype(np.uint8)
            got = set(map(tuple, metrics.extract_boundary(m).coords))
            assert got == set(brute_boundary(m))


class TestBde:
    def test_identical(self, rng):
        m = blob_mask(rng, 16)
        assert metrics.bde(m, m) == 0.0

    def test_single_pixels_at_distance(self):
        a = np.zeros((16, 16), np.uint8)
        b = np.zeros((16, 16), np.uint8)
        a[2, 2] = 1
        b[2, 7] = 1
        assert metrics.bde(a, b) == pytest.approx(5.0)

    def test_matches_brute_force(self, rng):
        checked = 0
        while checked < 200:
            a = (rng.random((16, 16)) < 0.55).astype(np.uint8)
            b = (rng.random((16, 16)) < 0.55).astype(np.uint8)
            if a.sum() == 0 or b.sum() == 0:
                continue
            assert metrics.bde(a, b) == pytest.approx(brute_bde(a, b), abs=1e-9)
            checked += 1

    def test_symmetry(self, rng):
        a, b = blob_mask(rng, 16), blob_mask(rng, 16)
        assert metrics.bde(a, b) == pytest.approx(metrics.bde(b, a), abs=1e-12)

    def test_positive_unless_equal_boundaries(self, rng):
        a = blob_mask(rng, 16)
        b = a.copy()
        b[0, 0] ^= 1
        assert metrics.bde(a, b) > 0

    def test_empty_boundary_rejected(self, rng):
        with pytest.raises(metrics.EmptyBoundaryError):
            metrics.bde(np.zeros((8, 8), np.uint8), blob_mask(rng, 8))


class TestCanny:
    def test_constant_raster_empty(self):
        assert metrics.canny_edges(np.full((32, 32), 0.4)).sum() == 0

    def test_half_plane_step(self):
        step = np.zeros((32, 32))
        step[:, 16:] = 1.0
        edges = metrics.canny_edges(step)
        cols = np.where(edges.any(axis=0))[0]
        assert len(cols) > 0
        assert all(abs(c - 15.5) <= 1.0 for c in cols)  # within 1 px of the step
        assert edges.any(axis=1).sum() == 32  # one connected full-height line

    def test_binary_output(self, rng):
        edges = metrics.canny_edges(rng.random((32, 32)))
        assert set(np.unique(edges)) <= {0, 1}


class TestBMu:
    def test_identical(self, rng):
        _, mask = rasters.gen_synthetic_scene(4, 64, 2)
        assert metrics.b_mu(mask.astype(float), mask) == 0.0

    def test_disjoint_edges_synthetic(self):
        gs = np.zeros((10, 10), np.uint8)
        gy = np.zeros((10, 10), np.uint8)
        gs[0] = 1
        gy[9] = 1
        assert metrics.b_mu_from_edges(gs, gy) == 1.0

    def test_half_overlap_synthetic(self):
        gs = np.zeros((10, 10), np.uint8)
        gy = np.zeros((10, 10), np.uint8)
        gs[0, :10] = 1  # 10 edge pixels
        gy[0, 5:10] = 1  # 5 shared
        gy[5, :5] = 1  # 5 elsewhere
        assert metrics.b_mu_from_edges(gs, gy) == pytest.approx(0.5)

    def test_both_empty(self):
        assert metrics.b_mu_from_edges(np.zeros((8, 8)), np.zeros((8, 8))) == 0.0

    def test_range(self, rng):
        for _ in range(10):
            a, b = blob_mask(rng, 32), blob_mask(rng, 32)
            v = metrics.b_mu(a.astype(float), b)
            assert 0.0 <= v <= 1.0


class TestEvaluateDirectory:
    def _write_pair(self, root, stem, saliency, mask):
        (root / "pred").mkdir(exist_ok=True)
        (root / "gt").mkdir(exist_ok=True)
        rasters.save_saliency(saliency, root / "pred" / f"{stem}.png")
        rasters.save_mask(mask, root / "gt" / f"{stem}.png")

    def test_pred_equals_gt(self, tmp_path, rng):
        for i in range(3):
            m = blob_mask(rng, 32)
            self._write_pair(tmp_path, f"im{i}", m.astype(float), m)
        rows = metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt")
        agg = rows[-1]
        assert agg["id"] == "__mean__"
        assert agg["mae"] == 0.0
        assert agg["f_beta"] == 1.0
        assert agg["bde"] == 0.0
        assert agg["b_mu"] == 0.0

    def test_single_pair_aggregate_equals_row(self, tmp_path, rng):
        m = blob_mask(rng, 32)
        s = np.clip(m + rng.normal(0, 0.1, m.shape), 0, 1)
        self._write_pair(tmp_path, "only", s, m)
        rows = metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt")
        assert len(rows) == 2
        for key in ("mae", "f_beta", "f_beta_max", "bde", "b_mu"):
            assert rows[1][key] == pytest.approx(rows[0][key])

    def test_aggregate_is_mean_of_rows(self, tmp_path, rng):
        for i in range(3):
            m = blob_mask(rng, 32)
            s = np.clip(m + rng.normal(0, 0.2, m.shape), 0, 1)
            self._write_pair(tmp_path, f"im{i}", s, m)
        rows = metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt")
        for key in ("mae", "f_beta", "bde"):
            assert rows[-1][key] == pytest.approx(np.mean([r[key] for r in rows[:-1]]))

    def test_csv_schema(self, tmp_path, rng):
        m = blob_mask(rng, 32)
        self._write_pair(tmp_path, "a", m.astype(float), m)
        out = tmp_path / "scores.csv"
        metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt", out_csv=out)
        with open(out) as fh:
            reader = csv.reader(fh)
            header = next(reader)
        assert header == ["id", "mae", "f_beta", "f_beta_max", "bde", "b_mu"]

    def test_resizes_prediction(self, tmp_path, rng):
        m = blob_mask(rng, 32)
        small = rasters.resize_bilinear(m.astype(float), (16, 16))
        self._write_pair(tmp_path, "a", np.clip(small, 0, 1), m)
        rows = metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt")
        assert np.isfinite(rows[0]["mae"])

    def test_unmatched_stems_warn_not_fail(self, tmp_path, rng):
        m = blob_mask(rng, 32)
        self._write_pair(tmp_path, "a", m.astype(float), m)
        rasters.save_saliency(m.astype(float), tmp_path / "pred" / "orphan.png")
        with pytest.warns(UserWarning, match="orphan"):
            rows = metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt")
        assert len(rows) == 2

    def test_no_matches_raises(self, tmp_path):
        (tmp_path / "pred").mkdir()
        (tmp_path / "gt").mkdir()
        with pytest.raises(FileNotFoundError):
            metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt")

    def test_pr_csv_has_256_rows(self, tmp_path, rng):
        m = blob_mask(rng, 32)
        self._write_pair(tmp_path, "a", m.astype(float), m)
        pr = tmp_path / "pr.csv"
        metrics.evaluate_directory(tmp_path / "pred", tmp_path / "gt", pr_out=pr)
        with open(pr) as fh:
            lines = fh.read().strip().splitlines()
        assert len(lines) == 257  # header + 256
