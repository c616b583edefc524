"""Tests for raster types and low-level image operations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bandpointer.errors import InvalidKernelError, NumericError
from bandpointer.imaging import (
    BinaryImage,
    DistortionModel,
    RasterImage,
    connected_components,
    convolve_unit_sum,
    distort_points,
    erode_disk,
    load_pgm,
    load_ppm,
    rgb_to_hue_saturation,
    save_pgm,
    save_ppm,
    undistort_points,
)


def _single_pixel_image(rgb):
    return RasterImage(np.array([[rgb]], dtype=np.float64))


class TestHueSaturation:
    def test_pure_red_is_hue_origin(self):
        hs = rgb_to_hue_saturation(_single_pixel_image([1.0, 0.0, 0.0]))
        assert hs.hue[0, 0] == pytest.approx(0.0, abs=1e-12)
        assert hs.saturation[0, 0] == pytest.approx(1.0)
        assert hs.hue_valid[0, 0]

    def test_achromatic_pixel_has_no_hue(self):
        hs = rgb_to_hue_saturation(_single_pixel_image([0.5, 0.5, 0.5]))
        assert hs.saturation[0, 0] == pytest.approx(0.0)
        assert not hs.hue_valid[0, 0]

    def test_cyan_is_antipodal_to_red(self):
        hs = rgb_to_hue_saturation(_single_pixel_image([0.0, 1.0, 1.0]))
        assert hs.hue[0, 0] == pytest.approx(np.pi, abs=1e-12)
        assert hs.saturation[0, 0] == pytest.approx(1.0)

    def test_black_pixel(self):
        hs = rgb_to_hue_saturation(_single_pixel_image([0.0, 0.0, 0.0]))
        assert hs.saturation[0, 0] == 0.0
        assert not hs.hue_valid[0, 0]

    def test_hue_range_and_value_channel(self):
        rng = np.random.default_rng(7)
        img = RasterImage(rng.uniform(0, 1, (16, 16, 3)))
        hs = rgb_to_hue_saturation(img)
        assert hs.hue.min() >= 0.0 and hs.hue.max() < 2 * np.pi
        assert hs.saturation.min() >= 0.0 and hs.saturation.max() <= 1.0
        np.testing.assert_allclose(hs.value, img.pixels.max(axis=2))

    @given(
        st.tuples(
            st.floats(0, 1, allow_nan=False),
            st.floats(0, 1, allow_nan=False),
            st.floats(0, 1, allow_nan=False),
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_channel_rotation_shifts_hue_by_third_turn(self, rgb):
        r, g, b = rgb
        base = rgb_to_hue_saturation(_single_pixel_image([r, g, b]))
        rotated = rgb_to_hue_saturation(_single_pixel_image([b, r, g]))
        if not base.hue_valid[0, 0]:
            assert not rotated.hue_valid[0, 0]
            return
        expected = np.mod(base.hue[0, 0] + 2 * np.pi / 3, 2 * np.pi)
        assert rotated.hue[0, 0] == pytest.approx(expected, abs=1e-9)


def _brute_force_erode(bits: np.ndarray, radius: int) -> np.ndarray:
    """Oracle: check every pixel in the disk, out of bounds counts as 0."""
    h, w = bits.shape
    out = np.zeros_like(bits)
    offsets = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dx * dx + dy * dy <= radius * radius
    ]
    for y in range(h):
        for x in range(w):
            ok = True
            for dy, dx in offsets:
                yy, xx = y + dy, x + dx
                if not (0 <= yy < h and 0 <= xx < w) or not bits[yy, xx]:
                    ok = False
                    break
            out[y, x] = ok
    return out


class TestErosion:
    def test_radius_zero_is_identity(self):
        rng = np.random.default_rng(0)
        bits = rng.uniform(size=(12, 15)) > 0.5
        out = erode_disk(BinaryImage(bits), 0)
        np.testing.assert_array_equal(out.bits, bits)

    def test_thin_strip_vanishes(self):
        bits = np.zeros((20, 20), dtype=bool)
        bits[5:8, :] = True  # 3 px wide strip
        out = erode_disk(BinaryImage(bits), 2)
        assert not out.bits.any()

    def test_square_shrinks_to_oracle(self):
        bits = np.zeros((20, 20), dtype=bool)
        bits[4:15, 3:14] = True  # 11x11 solid square
        out = erode_disk(BinaryImage(bits), 2)
        expected = _brute_force_erode(bits, 2)
        np.testing.assert_array_equal(out.bits, expected)
        # the surviving area is the inner 7x7 square
        assert out.bits.sum() == 49
        assert out.bits[6:13, 5:12].all()

    @given(st.integers(0, 3), st.integers(0, 5000))
    @settings(max_examples=40, deadline=None)
    def test_matches_brute_force_and_is_anti_extensive(self, radius, seed):
        rng = np.random.default_rng(seed)
        bits = rng.uniform(size=(14, 11)) > 0.35
        out = erode_disk(BinaryImage(bits), radius)
        np.testing.assert_array_equal(out.bits, _brute_force_erode(bits, radius))
        assert not (out.bits & ~bits).any()  # output subset of input

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(3)
        bits = rng.uniform(size=(30, 30)) > 0.2
        prev = erode_disk(BinaryImage(bits), 1).bits
        for radius in (2, 3, 4):
            cur = erode_disk(BinaryImage(bits), radius).bits
            assert not (cur & ~prev).any()
            prev = cur


def _flood_fill_components(bits: np.ndarray) -> list[set]:
    """Oracle: 8-connected flood fill."""
    h, w = bits.shape
    seen = np.zeros_like(bits)
    comps = []
    for y in range(h):
        for x in range(w):
            if not bits[y, x] or seen[y, x]:
                continue
            stack = [(y, x)]
            seen[y, x] = True
            comp = set()
            while stack:
                cy, cx = stack.pop()
                comp.add((cx, cy))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            stack.append((ny, nx))
            comps.append(comp)
    return comps


class TestConnectedComponents:
    def test_empty_image(self):
        assert connected_components(BinaryImage(np.zeros((5, 5), dtype=bool))) == []

    def test_diagonal_pixels_are_one_component(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[1, 1] = bits[2, 2] = True
        regions = connected_components(BinaryImage(bits))
        assert len(regions) == 1
        assert regions[0].area == 2

    def test_isolated_blocks_match_flood_fill_oracle(self):
        bits = np.zeros((12, 12), dtype=bool)
        for by in (1, 5, 9):
            for bx in (1, 5, 9):
                bits[by : by + 2, bx : bx + 2] = True
        regions = connected_components(BinaryImage(bits))
        oracle = _flood_fill_components(bits)
        assert len(regions) == len(oracle) == 9
        region_sets = [set(map(tuple, r.pixels.tolist())) for r in regions]
        for comp in oracle:
            assert comp in region_sets
        for reg in regions:
            xs = reg.pixels[:, 0]
            ys = reg.pixels[:, 1]
            np.testing.assert_allclose(reg.centroid, [xs.mean(), ys.mean()])
            assert reg.centroid[0] == pytest.approx(xs.min() + 0.5)

    def test_partition_property(self):
        rng = np.random.default_rng(11)
        bits = rng.uniform(size=(20, 20)) > 0.6
        regions = connected_components(BinaryImage(bits))
        covered = np.zeros_like(bits)
        total = 0
        for reg in regions:
            covered[reg.pixels[:, 1], reg.pixels[:, 0]] = True
            total += reg.area
        np.testing.assert_array_equal(covered, bits)
        assert total == bits.sum()  # pairwise disjoint


class TestConvolution:
    def test_identity_kernel(self):
        rng = np.random.default_rng(5)
        bits = rng.uniform(size=(9, 9)) > 0.5
        out = convolve_unit_sum(BinaryImage(bits), np.array([[1.0]]))
        np.testing.assert_allclose(out, bits.astype(float), atol=1e-12)

    def test_all_ones_interior_response(self):
        bits = np.ones((15, 15), dtype=bool)
        kernel = np.full((5, 5), 1 / 25)
        out = convolve_unit_sum(BinaryImage(bits), kernel)
        np.testing.assert_allclose(out[2:-2, 2:-2], 1.0, atol=1e-9)

    def test_single_pixel_spreads_kernel(self):
        bits = np.zeros((7, 7), dtype=bool)
        bits[3, 3] = True
        out = convolve_unit_sum(BinaryImage(bits), np.full((3, 3), 1 / 9))
        expected = np.zeros((7, 7))
        expected[2:5, 2:5] = 1 / 9  # direct evaluation
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_rejects_bad_kernels(self):
        bits = np.zeros((3, 3), dtype=bool)
        with pytest.raises(InvalidKernelError):
            convolve_unit_sum(BinaryImage(bits), np.zeros((3, 3)))
        with pytest.raises(InvalidKernelError):
            convolve_unit_sum(BinaryImage(bits), np.ones((2, 3)))

    def test_output_bounded_for_unit_sum_kernels(self):
        rng = np.random.default_rng(9)
        bits = rng.uniform(size=(20, 20)) > 0.4
        kernel = rng.uniform(0.1, 1.0, (5, 5))
        kernel /= kernel.sum()
        out = convolve_unit_sum(BinaryImage(bits), kernel)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestDistortion:
    def test_zero_coefficients_identity(self):
        model = DistortionModel(fx=1000, fy=1000, cx=320, cy=240)
        pts = np.array([[10.0, 20.0], [300.0, 200.0]])
        np.testing.assert_allclose(undistort_points(pts, model), pts)
        np.testing.assert_allclose(distort_points(pts, model), pts)

    def test_principal_point_fixed(self):
        model = DistortionModel(k1=-0.2, k2=0.05, fx=1000, fy=1000, cx=320, cy=240)
        out = undistort_points(np.array([[320.0, 240.0]]), model)
        np.testing.assert_allclose(out, [[320.0, 240.0]], atol=1e-9)

    def test_round_trip_at_half_radius(self):
        model = DistortionModel(k1=-0.1, fx=1000, fy=1000, cx=500, cy=400)
        # normalized radius 0.5
        pt = np.array([[500.0 + 1000 * 0.3, 400.0 + 1000 * 0.4]])
        distorted = distort_points(pt, model)
        recovered = undistort_points(distorted, model)
        assert np.linalg.norm(recovered - pt) < 1e-3

    @given(
        st.floats(-0.2, 0.2),
        st.floats(-0.05, 0.05),
        st.floats(-0.01, 0.01),
        st.floats(-0.4, 0.4),
        st.floats(-0.4, 0.4),
    )
    @settings(max_examples=100, deadline=None)
    def test_round_trip_within_field_of_view(self, k1, k2, p1, xn, yn):
        model = DistortionModel(k1=k1, k2=k2, p1=p1, fx=800, fy=800, cx=400, cy=300)
        pt = np.array([[400.0 + 800 * xn, 300.0 + 800 * yn]])
        distorted = distort_points(pt, model)
        recovered = undistort_points(distorted, model)
        assert np.linalg.norm(recovered - pt) < 1e-3

    def test_nonconvergence_raises(self):
        model = DistortionModel(k1=-5.0, fx=100, fy=100, cx=0, cy=0)
        with pytest.raises(NumericError):
            undistort_points(np.array([[500.0, 500.0]]), model)


class TestImageIO:
    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        img = RasterImage(np.round(rng.uniform(0, 1, (6, 5, 3)) * 255) / 255)
        path = tmp_path / "img.ppm"
        save_ppm(img, path)
        loaded = load_ppm(path)
        np.testing.assert_allclose(loaded.pixels, img.pixels)

    def test_pgm_round_trip(self, tmp_path):
        mask = np.arange(20, dtype=np.uint8).reshape(4, 5)
        path = tmp_path / "mask.pgm"
        save_pgm(mask, path)
        np.testing.assert_array_equal(load_pgm(path), mask)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(ValueError):
            load_ppm(path)
