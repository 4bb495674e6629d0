from __future__ import annotations

import math

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from lidar_roads.cloud import BoundingBox2D, PointCloud
from lidar_roads.raster import (
    GaussianKernel,
    Georef,
    Raster,
    binarize,
    blur,
    gaussian_kernel,
    gaussian_value,
    georef_from_worldfile,
    normalize,
    project_topdown,
    read_png,
    write_indexed_png,
    write_png,
)


def _georef(**kw):
    base = dict(origin_x=0.0, origin_y=10.0, pixel_size=0.5, width=20, height=20)
    base.update(kw)
    return Georef(**base)


class TestGeoref:
    def test_pixel_world_round_trip_on_centres(self):
        g = _georef()
        cols = np.arange(g.width)
        rows = np.arange(g.height)
        x, y = g.pixel_to_world(cols, rows)
        back_cols, back_rows = g.world_to_pixel(x, y)
        assert np.array_equal(back_cols, cols)
        assert np.array_equal(back_rows, rows)

    def test_world_to_pixel_displacement_bounded(self):
        g = _georef()
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.24, 9.74, 200)
        y = rng.uniform(0.26, 10.24, 200)
        cols, rows = g.world_to_pixel(x, y)
        cx, cy = g.pixel_to_world(cols, rows)
        assert np.all(np.abs(cx - x) <= g.pixel_size / 2 + 1e-12)
        assert np.all(np.abs(cy - y) <= g.pixel_size_y / 2 + 1e-12)

    def test_row_zero_is_max_y(self):
        g = _georef()
        _, y = g.pixel_to_world(0, [0, 1])
        assert y[0] > y[1]

    def test_non_square_pixels(self):
        g = _georef(pixel_size=0.5, pixel_size_y=0.25)
        x, y = g.pixel_to_world(2, 2)
        assert float(x) == pytest.approx(1.0)
        assert float(y) == pytest.approx(9.5)
        cols, rows = g.world_to_pixel(1.0, 9.5)
        assert (int(cols), int(rows)) == (2, 2)

    def test_pixel_size_y_defaults_to_square(self):
        assert _georef().pixel_size_y == 0.5

    def test_extent_outer_bounds(self):
        g = Georef(origin_x=0.5, origin_y=9.5, pixel_size=1.0, width=10, height=5)
        box = g.extent()
        assert (box.x_min, box.x_max) == (0.0, 10.0)
        assert (box.y_min, box.y_max) == (5.0, 10.0)

    def test_worldfile_round_trip(self):
        for g in (_georef(), _georef(pixel_size=0.01, pixel_size_y=0.007)):
            text = g.worldfile()
            assert len(text.strip().splitlines()) == 6
            back = georef_from_worldfile(text, g.width, g.height)
            assert back == g

    def test_worldfile_errors(self):
        with pytest.raises(ValueError, match="6 numbers"):
            georef_from_worldfile("1 0 0 -1 0\n", 2, 2)
        with pytest.raises(ValueError, match="rotated"):
            georef_from_worldfile("1\n0.1\n0\n-1\n0\n0\n", 2, 2)
        with pytest.raises(ValueError, match="north-up"):
            georef_from_worldfile("1\n0\n0\n1\n0\n0\n", 2, 2)

    def test_validation(self):
        with pytest.raises(ValueError):
            _georef(pixel_size=0.0)
        with pytest.raises(ValueError):
            _georef(width=0)
        with pytest.raises(ValueError):
            _georef(pixel_size_y=-1.0)


class TestRasterContainer:
    def test_shape_must_match_georef(self):
        with pytest.raises(ValueError, match="shape"):
            Raster(georef=_georef(), values=np.zeros((3, 3)))

    def test_values_must_be_unit_interval(self):
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=2, height=2)
        with pytest.raises(ValueError, match="0, 1"):
            Raster(georef=g, values=np.full((2, 2), 1.5))

    def test_is_binary_and_foreground(self):
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=2, height=2)
        r = Raster(georef=g, values=np.array([[0, 1], [1, 0]], dtype=float))
        assert r.is_binary()
        assert r.foreground().sum() == 2
        assert not Raster(georef=g, values=np.full((2, 2), 0.5)).is_binary()


class TestProjectTopdown:
    def test_hand_worked_counts(self):
        xyz = np.array(
            [[0.5, 1.5, 0], [0.6, 1.4, 0], [1.5, 1.5, 0], [0.5, 0.5, 0]]
        )
        extent = BoundingBox2D(0.0, 2.0, 0.0, 2.0)
        raster = project_topdown(PointCloud(xyz), 1.0, extent=extent)
        assert raster.shape == (2, 2)
        assert np.array_equal(raster.values, [[1.0, 0.5], [0.5, 0.0]])
        assert raster.georef.origin_x == pytest.approx(0.5)
        assert raster.georef.origin_y == pytest.approx(1.5)

    def test_points_outside_extent_ignored(self):
        xyz = np.array([[0.5, 0.5, 0], [99.0, 99.0, 0]])
        raster = project_topdown(
            PointCloud(xyz), 1.0, extent=BoundingBox2D(0, 2, 0, 2)
        )
        assert raster.values.sum() == 1.0

    def test_extent_boundary_absorbed(self):
        # points exactly on the max edge land in the last pixel
        xyz = np.array([[2.0, 2.0, 0], [0.0, 0.0, 0]])
        raster = project_topdown(
            PointCloud(xyz), 1.0, extent=BoundingBox2D(0, 2, 0, 2)
        )
        assert raster.values[0, 1] == 1.0
        assert raster.values[1, 0] == 1.0

    def test_default_extent_is_cloud_bbox(self):
        rng = np.random.default_rng(3)
        cloud = PointCloud(rng.uniform(5, 15, (100, 3)))
        raster = project_topdown(cloud, 0.5)
        assert raster.values.max() == 1.0
        box = raster.georef.extent()
        assert box.x_min == pytest.approx(cloud.x.min(), abs=1e-6)
        assert box.y_max == pytest.approx(cloud.y.max(), abs=1e-6)

    def test_errors(self):
        with pytest.raises(ValueError, match="empty"):
            project_topdown(PointCloud(np.empty((0, 3))), 1.0)
        with pytest.raises(ValueError, match="positive"):
            project_topdown(PointCloud(np.zeros((1, 3))), 0.0)
        with pytest.raises(ValueError, match="extent"):
            project_topdown(
                PointCloud(np.zeros((1, 3))), 1.0,
                extent=BoundingBox2D(10, 12, 10, 12),
            )


class TestGaussianKernel:
    @pytest.mark.parametrize("sigma", [0.5, 1.0, 5.0])
    def test_weights_sum_to_one(self, sigma):
        kernel = gaussian_kernel(sigma)
        assert kernel.weights.sum() == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("sigma", [0.5, 1.0, 2.5, 5.0])
    def test_radius_is_three_sigma(self, sigma):
        assert gaussian_kernel(sigma).radius == math.ceil(3.0 * sigma)

    def test_symmetry(self):
        w = gaussian_kernel(1.7).weights
        assert np.array_equal(w, w[::-1, :])
        assert np.array_equal(w, w[:, ::-1])
        assert np.array_equal(w, w.T)

    def test_centre_density_sigma_five(self):
        assert gaussian_value(0.0, 0.0, 5.0) == pytest.approx(
            1.0 / (50.0 * math.pi), abs=1e-12
        )

    def test_weights_match_pointwise_samples(self):
        for sigma in (0.8, 5.0):
            kernel = gaussian_kernel(sigma)
            r = kernel.radius
            samples = np.array(
                [
                    [gaussian_value(dx, dy, sigma) for dx in range(-r, r + 1)]
                    for dy in range(-r, r + 1)
                ]
            )
            assert np.allclose(kernel.weights, samples / samples.sum(), atol=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            gaussian_value(0, 0, 0.0)
        with pytest.raises(ValueError):
            gaussian_kernel(-1.0)
        with pytest.raises(ValueError, match="sum to 1"):
            GaussianKernel(sigma=1.0, radius=1, weights=np.full((3, 3), 0.2))
        with pytest.raises(ValueError, match="\\(3, 3\\)"):
            GaussianKernel(sigma=1.0, radius=1, weights=np.full((5, 5), 0.04))


class TestBlur:
    def test_matches_full_2d_convolution(self):
        rng = np.random.default_rng(8)
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=40, height=30)
        raster = Raster(georef=g, values=rng.uniform(0, 1, (30, 40)))
        kernel = gaussian_kernel(2.0)
        got = blur(raster, kernel).values
        want = ndimage.convolve(
            raster.values.astype(np.float64), kernel.weights, mode="nearest"
        )
        assert np.allclose(got, want, atol=1e-7)

    def test_constant_preserved(self):
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=15, height=15)
        raster = Raster(georef=g, values=np.full((15, 15), 0.6))
        out = blur(raster, gaussian_kernel(3.0))
        assert np.allclose(out.values, 0.6, atol=1e-6)

    def test_impulse_response_is_kernel(self):
        kernel = gaussian_kernel(1.0)
        n = 31
        values = np.zeros((n, n))
        values[n // 2, n // 2] = 1.0
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=n, height=n)
        out = blur(Raster(georef=g, values=values), kernel).values
        r = kernel.radius
        lo, hi = n // 2 - r, n // 2 + r + 1
        assert np.allclose(out[lo:hi, lo:hi], kernel.weights, atol=1e-9)
        assert out.sum() == pytest.approx(1.0, abs=1e-9)

    def test_output_stays_in_unit_interval(self):
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=10, height=10)
        raster = Raster(georef=g, values=np.ones((10, 10)))
        out = blur(raster, gaussian_kernel(2.0))
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0


class TestNormalizeBinarize:
    def _raster(self, values):
        values = np.asarray(values, dtype=float)
        g = Georef(
            origin_x=0, origin_y=0, pixel_size=1,
            width=values.shape[1], height=values.shape[0],
        )
        return Raster(georef=g, values=values)

    def test_normalize_peak_to_one(self):
        out = normalize(self._raster([[0.1, 0.2], [0.4, 0.0]]))
        assert out.values.max() == 1.0
        assert out.values[0, 0] == pytest.approx(0.25)

    def test_normalize_all_zero_rejected(self):
        with pytest.raises(ValueError, match="all-zero"):
            normalize(self._raster(np.zeros((2, 2))))

    def test_binarize_threshold_inclusive(self):
        out = binarize(self._raster([[0.19, 0.2], [0.21, 0.0]]), 0.2)
        assert np.array_equal(out.values, [[0, 1], [1, 0]])

    def test_binarize_idempotent(self):
        first = binarize(self._raster([[0.3, 0.7]]), 0.5)
        second = binarize(first, 0.5)
        assert np.array_equal(first.values, second.values)
        assert first.is_binary()

    def test_binarize_threshold_validated(self):
        with pytest.raises(ValueError):
            binarize(self._raster([[0.5]]), 1.5)


class TestPngRoundTrip:
    def test_binary_raster_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        values = (rng.uniform(0, 1, (12, 18)) > 0.5).astype(np.float32)
        g = Georef(origin_x=3.25, origin_y=8.75, pixel_size=0.5, width=18, height=12)
        raster = Raster(georef=g, values=values)
        path = tmp_path / "mask.png"
        write_png(raster, path)
        back = read_png(path)
        assert np.array_equal(back.values, values)
        assert back.georef == g

    def test_gray_values_quantized_to_8bit(self, tmp_path):
        rng = np.random.default_rng(12)
        values = rng.uniform(0, 1, (6, 6)).astype(np.float32)
        g = Georef(origin_x=0, origin_y=0, pixel_size=1, width=6, height=6)
        write_png(Raster(georef=g, values=values), tmp_path / "g.png")
        back = read_png(tmp_path / "g.png")
        assert np.allclose(back.values, values, atol=0.5 / 255 + 1e-6)

    def test_non_square_sidecar_round_trip(self, tmp_path):
        g = Georef(
            origin_x=12.5, origin_y=48.1, pixel_size=0.002,
            width=8, height=4, pixel_size_y=0.0013,
        )
        raster = Raster(georef=g, values=np.zeros((4, 8)))
        write_png(raster, tmp_path / "deg.png")
        assert read_png(tmp_path / "deg.png").georef == g

    def test_missing_sidecar_rejected(self, tmp_path):
        Image.fromarray(np.zeros((4, 4), dtype=np.uint8)).save(tmp_path / "x.png")
        with pytest.raises(FileNotFoundError, match="sidecar"):
            read_png(tmp_path / "x.png")


class TestIndexedPng:
    PALETTE = {0: (0, 0, 0), 1: (0, 200, 0), 2: (220, 40, 40), 3: (40, 90, 220)}

    def test_classes_and_colors_preserved(self, tmp_path):
        rng = np.random.default_rng(13)
        classes = rng.integers(0, 4, (10, 14)).astype(np.uint8)
        path = tmp_path / "overlay.png"
        write_indexed_png(classes, self.PALETTE, path)
        img = Image.open(path)
        assert img.mode == "P"
        assert np.array_equal(np.asarray(img), classes)
        palette = img.getpalette()
        for idx, rgb in self.PALETTE.items():
            assert tuple(palette[3 * idx:3 * idx + 3]) == rgb

    def test_sidecar_written_with_georef(self, tmp_path):
        g = Georef(origin_x=1, origin_y=2, pixel_size=0.5, width=4, height=4)
        path = tmp_path / "o.png"
        write_indexed_png(np.zeros((4, 4), dtype=np.uint8), {0: (0, 0, 0)}, path, georef=g)
        assert (tmp_path / "o.pgw").exists()
        assert georef_from_worldfile((tmp_path / "o.pgw").read_text(), 4, 4) == g

    def test_unknown_class_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="missing from the palette"):
            write_indexed_png(
                np.array([[0, 7]]), {0: (0, 0, 0)}, tmp_path / "bad.png"
            )

    def test_float_classes_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="integer"):
            write_indexed_png(
                np.zeros((2, 2)), {0: (0, 0, 0)}, tmp_path / "f.png"
            )
