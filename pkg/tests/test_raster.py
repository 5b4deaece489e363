import numpy as np
import pytest

from lczfuse.errors import DataError
from lczfuse.raster import (
    PatchGrid,
    Raster,
    crop_to_patch_multiple,
    downsample_nearest,
    patch_reduce,
    read_raster,
    upsample_bicubic,
    write_raster,
)


def test_roundtrip_identity(tmp_path):
    r = Raster(np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32), 10.0)
    write_raster(r, str(tmp_path / "a"))
    back = read_raster(str(tmp_path / "a.hdr"))
    assert back.width == 2 and back.height == 2
    assert back.pixel_size == 10.0
    np.testing.assert_array_equal(back.values, r.values)


def test_roundtrip_bit_identical_random(tmp_path):
    rng = np.random.default_rng(7)
    vals = rng.normal(size=(13, 9)).astype(np.float32)
    r = Raster(vals, 5.0)
    write_raster(r, str(tmp_path / "b"))
    back = read_raster(str(tmp_path / "b"))
    assert back.values.tobytes() == vals.tobytes()


def test_roundtrip_u8(tmp_path):
    vals = np.array([[1, 17], [255, 3]], dtype=np.uint8)
    r = Raster(vals, 100.0)
    write_raster(r, str(tmp_path / "lbl"))
    back = read_raster(str(tmp_path / "lbl"))
    assert back.values.dtype == np.uint8
    assert back.nodata == 255
    np.testing.assert_array_equal(back.values, vals)


def test_read_empty_raster_header(tmp_path):
    (tmp_path / "z.hdr").write_text(
        "format_version=1\nwidth=0\nheight=2\npixel_size_m=10\ndtype=f32\nnodata=nan\n"
    )
    (tmp_path / "z.bin").write_bytes(b"")
    with pytest.raises(DataError, match="empty raster"):
        read_raster(str(tmp_path / "z"))


def test_read_truncated_payload(tmp_path):
    (tmp_path / "t.hdr").write_text(
        "format_version=1\nwidth=2\nheight=2\npixel_size_m=10\ndtype=f32\nnodata=nan\n"
    )
    (tmp_path / "t.bin").write_bytes(b"\x00" * 15)
    with pytest.raises(DataError, match="truncated"):
        read_raster(str(tmp_path / "t"))


def test_read_unsupported_version(tmp_path):
    (tmp_path / "v.hdr").write_text(
        "format_version=9\nwidth=1\nheight=1\npixel_size_m=10\ndtype=f32\nnodata=nan\n"
    )
    (tmp_path / "v.bin").write_bytes(b"\x00" * 4)
    with pytest.raises(DataError, match="version"):
        read_raster(str(tmp_path / "v"))


class TestBicubic:
    def test_constant_is_preserved(self):
        r = Raster(np.full((6, 6), 7.0, dtype=np.float32), 30.0)
        out = upsample_bicubic(r, 10.0)
        assert out.shape == (18, 18)
        np.testing.assert_allclose(out.values, 7.0, atol=1e-6)

    def test_linear_ramp_exact_at_interior(self):
        # Catmull-Rom reproduces polynomials of degree <= 3; compare against
        # the analytic ramp evaluated at output pixel centers.
        h = w = 8
        scale = 3
        yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        ramp = (2.0 * xx + 3.0 * yy).astype(np.float32)
        out = upsample_bicubic(Raster(ramp, 30.0), 10.0)
        oy, ox = np.meshgrid(np.arange(h * scale), np.arange(w * scale), indexing="ij")
        sx = (ox + 0.5) / scale - 0.5
        sy = (oy + 0.5) / scale - 0.5
        expect = 2.0 * sx + 3.0 * sy
        interior = (sx >= 1) & (sx <= w - 2) & (sy >= 1) & (sy <= h - 2)
        np.testing.assert_allclose(out.values[interior], expect[interior], atol=1e-6)

    def test_shape_contract(self):
        r = Raster(np.zeros((4, 4), dtype=np.float32), 30.0)
        assert upsample_bicubic(r, 10.0).shape == (12, 12)

    def test_nodata_propagates_to_covered_pixels(self):
        vals = np.ones((4, 4), dtype=np.float32)
        vals[1, 2] = np.nan
        out = upsample_bicubic(Raster(vals, 20.0), 10.0)
        covered = out.values[2:4, 4:6]
        assert np.isnan(covered).all()
        assert np.isfinite(out.values[0, 0])

    def test_non_integer_factor_rejected(self):
        r = Raster(np.zeros((4, 4), dtype=np.float32), 30.0)
        with pytest.raises(ValueError):
            upsample_bicubic(r, 7.0)

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            upsample_bicubic(Raster(np.zeros((1, 5), dtype=np.float32), 30.0), 10.0)


class TestNearest:
    def test_center_pixel_selection(self):
        # 20x20 at 5 m -> one 100 m pixel; oracle: output center at 50 m lies
        # on the boundary owned by source pixel (10, 10).
        vals = np.arange(400, dtype=np.float32).reshape(20, 20)
        out = downsample_nearest(Raster(vals, 5.0), 100.0)
        assert out.shape == (1, 1)
        assert out.values[0, 0] == vals[10, 10]

    def test_odd_factor_center(self):
        vals = np.arange(25, dtype=np.float32).reshape(5, 5)
        out = downsample_nearest(Raster(vals, 20.0), 100.0)
        assert out.values[0, 0] == vals[2, 2]

    def test_constant(self):
        out = downsample_nearest(Raster(np.full((40, 40), 3.5, dtype=np.float32), 5.0), 100.0)
        assert (out.values == 3.5).all()

    def test_value_set_closure_binary(self):
        rng = np.random.default_rng(3)
        vals = (rng.random((60, 60)) < 0.3).astype(np.uint8)
        out = downsample_nearest(Raster(vals, 5.0), 100.0)
        assert set(np.unique(out.values)) <= {0, 1, 255}

    def test_non_integer_factor_rejected(self):
        with pytest.raises(ValueError):
            downsample_nearest(Raster(np.zeros((9, 9), dtype=np.float32), 30.0), 100.0)


class TestPatchReduce:
    def test_mean_and_std_textbook(self):
        # Patch values {2,4,4,4,5,5,7,9} -> mean 5, population std 2.
        vals = np.full((4, 4), np.nan, dtype=np.float32)
        vals[0, :4] = [2, 4, 4, 4]
        vals[1, :4] = [5, 5, 7, 9]
        r = Raster(vals, 25.0)
        grid = PatchGrid(1, 1, 25.0)
        assert patch_reduce(r, grid, "mean").values[0, 0] == pytest.approx(5.0)
        assert patch_reduce(r, grid, "std").values[0, 0] == pytest.approx(2.0)

    def test_all_nodata_patch(self):
        vals = np.full((10, 10), np.nan, dtype=np.float32)
        grid = PatchGrid(1, 1, 10.0)
        out = patch_reduce(Raster(vals, 10.0), grid, "mean")
        assert np.isnan(out.values[0, 0])

    def test_fraction_nonzero(self):
        vals = np.zeros((20, 20), dtype=np.float32)
        flat = vals.reshape(-1)
        flat[:45] = 1.0
        grid = PatchGrid(1, 1, 5.0)
        out = patch_reduce(Raster(vals, 5.0), grid, "fraction_nonzero")
        assert out.values[0, 0] == pytest.approx(0.1125)

    def test_count_nonzero(self):
        vals = np.zeros((10, 10), dtype=np.float32)
        vals[0, 0] = 2.0
        vals[3, 3] = -1.0
        grid = PatchGrid(1, 1, 10.0)
        out = patch_reduce(Raster(vals, 10.0), grid, "count_nonzero")
        assert out.values[0, 0] == 2

    def test_constant_raster_properties(self):
        rng = np.random.default_rng(11)
        c = float(rng.normal())
        r = Raster(np.full((30, 30), c, dtype=np.float32), 10.0)
        grid = PatchGrid.for_raster(r)
        np.testing.assert_allclose(patch_reduce(r, grid, "mean").values, c, atol=1e-5)
        np.testing.assert_allclose(patch_reduce(r, grid, "std").values, 0.0, atol=1e-5)

    def test_dimension_mismatch(self):
        r = Raster(np.zeros((25, 20), dtype=np.float32), 10.0)
        grid = PatchGrid(2, 2, 10.0)
        with pytest.raises(ValueError):
            patch_reduce(r, grid, "mean")


def test_bicubic_then_mean_preserves_constant():
    r = Raster(np.full((10, 10), 4.25, dtype=np.float32), 20.0)
    up = upsample_bicubic(r, 10.0)
    grid = PatchGrid.for_raster(up)
    out = patch_reduce(up, grid, "mean")
    np.testing.assert_allclose(out.values, 4.25, atol=1e-6)


def test_crop_to_patch_multiple():
    r = Raster(np.zeros((27, 33), dtype=np.float32), 10.0)
    c = crop_to_patch_multiple(r)
    assert c.shape == (20, 30)
    same = crop_to_patch_multiple(Raster(np.zeros((20, 30), dtype=np.float32), 10.0))
    assert same.shape == (20, 30)
