"""Single-band raster container, file I/O, resampling, and patch aggregation.

Rasters are stored row-major with the origin at the top-left corner; x runs
along columns, y along rows, both in meters. Continuous rasters are float32
with NaN nodata, label/byte rasters are uint8 with 255 nodata.

File container: a text header ``<name>.hdr`` (key=value lines) plus a sibling
binary payload ``<name>.bin`` of row-major values, little-endian float32 or
single bytes for u8.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DataError

FORMAT_VERSION = 1

_STATS = ("mean", "std", "count_nonzero", "fraction_nonzero")


class Raster:
    """Immutable 2D grid with a pixel size in meters and a nodata marker."""

    __slots__ = ("values", "pixel_size", "nodata")

    def __init__(self, values, pixel_size, nodata=None):
        values = np.asarray(values)
        if values.ndim != 2:
            raise ValueError(f"raster values must be 2D, got shape {values.shape}")
        if values.shape[0] <= 0 or values.shape[1] <= 0:
            raise ValueError("empty raster")
        if values.dtype == np.uint8:
            if nodata is None:
                nodata = 255
        else:
            values = values.astype(np.float32, copy=False)
            if nodata is None:
                nodata = float("nan")
        if pixel_size <= 0:
            raise ValueError(f"pixel_size must be positive, got {pixel_size}")
        self.values = values
        self.pixel_size = float(pixel_size)
        self.nodata = nodata

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def shape(self):
        return self.values.shape

    def valid_mask(self):
        """Boolean mask of pixels carrying data."""
        v = self.values
        if v.dtype == np.uint8:
            return v != self.nodata
        if isinstance(self.nodata, float) and math.isnan(self.nodata):
            return np.isfinite(v)
        return np.isfinite(v) & (v != self.nodata)

    def copy(self):
        return Raster(self.values.copy(), self.pixel_size, self.nodata)

    def __repr__(self):
        return (
            f"Raster({self.height}x{self.width}, {self.pixel_size} m/px, "
            f"dtype={self.values.dtype}, nodata={self.nodata})"
        )


@dataclass(frozen=True)
class PatchGrid:
    """Partition of a source raster into square ground patches.

    Patch (i, j) covers source pixels [i*k, (i+1)*k) x [j*k, (j+1)*k) where
    k = patch_size_m / source_pixel_size must be an exact integer.
    """

    patch_rows: int
    patch_cols: int
    source_pixel_size: float
    patch_size_m: float = 100.0

    def __post_init__(self):
        if self.patch_rows <= 0 or self.patch_cols <= 0:
            raise ValueError("patch grid must have positive dimensions")
        k = self.patch_size_m / self.source_pixel_size
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ValueError(
                f"patch size {self.patch_size_m} m is not an integer multiple "
                f"of pixel size {self.source_pixel_size} m"
            )

    @property
    def factor(self):
        return int(round(self.patch_size_m / self.source_pixel_size))

    @classmethod
    def for_raster(cls, raster, patch_size_m=100.0):
        k = patch_size_m / raster.pixel_size
        if abs(k - round(k)) > 1e-9:
            raise ValueError(
                f"pixel size {raster.pixel_size} does not divide patch size {patch_size_m}"
            )
        k = int(round(k))
        if raster.height % k or raster.width % k:
            raise ValueError(
                f"raster {raster.height}x{raster.width} is not a multiple of the "
                f"patch factor {k}; crop the ragged border first"
            )
        return cls(raster.height // k, raster.width // k, raster.pixel_size, patch_size_m)


def crop_to_patch_multiple(raster, patch_size_m=100.0):
    """Drop the ragged bottom/right border so patches tile the raster exactly."""
    k = int(round(patch_size_m / raster.pixel_size))
    h = (raster.height // k) * k
    w = (raster.width // k) * k
    if h == 0 or w == 0:
        raise ValueError("raster smaller than a single patch")
    if h == raster.height and w == raster.width:
        return raster
    return Raster(raster.values[:h, :w], raster.pixel_size, raster.nodata)


def write_raster(raster, path):
    """Write the .hdr/.bin container. `path` may end in .hdr or be the stem."""
    stem = path[:-4] if str(path).endswith(".hdr") else str(path)
    dtype = "u8" if raster.values.dtype == np.uint8 else "f32"
    if isinstance(raster.nodata, float) and math.isnan(raster.nodata):
        nodata = "nan"
    else:
        nodata = repr(int(raster.nodata)) if dtype == "u8" else repr(float(raster.nodata))
    lines = [
        f"format_version={FORMAT_VERSION}",
        f"width={raster.width}",
        f"height={raster.height}",
        f"pixel_size_m={raster.pixel_size!r}",
        f"dtype={dtype}",
        f"nodata={nodata}",
    ]
    with open(stem + ".hdr", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    payload = raster.values.astype("<f4" if dtype == "f32" else np.uint8).tobytes()
    with open(stem + ".bin", "wb") as fh:
        fh.write(payload)


def read_raster(path):
    """Read a raster from its .hdr/.bin container."""
    stem = path[:-4] if str(path).endswith(".hdr") else str(path)
    hdr_path, bin_path = stem + ".hdr", stem + ".bin"
    if not os.path.exists(hdr_path):
        raise DataError(f"missing raster header: {hdr_path}")
    fields = {}
    with open(hdr_path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"malformed header line in {hdr_path}: {line!r}")
            key, val = line.split("=", 1)
            fields[key.strip()] = val.strip()
    try:
        version = int(fields["format_version"])
        width = int(fields["width"])
        height = int(fields["height"])
        pixel_size = float(fields["pixel_size_m"])
        dtype = fields["dtype"]
        nodata_s = fields["nodata"]
    except KeyError as exc:
        raise DataError(f"header {hdr_path} missing field {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed header value in {hdr_path}: {exc}") from exc
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported raster format version {version} in {hdr_path}")
    if width <= 0 or height <= 0:
        raise DataError(f"empty raster: {hdr_path} declares {width}x{height}")
    if dtype not in ("f32", "u8"):
        raise DataError(f"unsupported dtype {dtype!r} in {hdr_path}")
    if not os.path.exists(bin_path):
        raise DataError(f"missing raster payload: {bin_path}")
    raw = open(bin_path, "rb").read()
    itemsize = 4 if dtype == "f32" else 1
    expected = width * height * itemsize
    if len(raw) != expected:
        raise DataError(
            f"truncated raster payload {bin_path}: {len(raw)} bytes, expected {expected}"
        )
    if dtype == "f32":
        values = np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float32)
        nodata = float(nodata_s)
    else:
        values = np.frombuffer(raw, dtype=np.uint8).reshape(height, width).copy()
        nodata = int(nodata_s)
    return Raster(values, pixel_size, nodata)


def _catmull_rom_taps(n_src, n_out, scale):
    """Per-output tap indices (4, n_out) and weights for the a=-0.5 cubic kernel."""
    x = (np.arange(n_out) + 0.5) / scale - 0.5
    base = np.floor(x).astype(np.int64)
    t = x - base
    t2, t3 = t * t, t * t * t
    w = np.stack(
        [
            -0.5 * t3 + t2 - 0.5 * t,
            1.5 * t3 - 2.5 * t2 + 1.0,
            -1.5 * t3 + 2.0 * t2 + 0.5 * t,
            0.5 * t3 - 0.5 * t2,
        ]
    )
    idx = np.stack([np.clip(base + k - 1, 0, n_src - 1) for k in range(4)])
    return idx, w


def _fill_invalid_nearest(values, valid):
    """Replace invalid pixels with their nearest valid value (for stencils)."""
    if valid.all():
        return values
    if not valid.any():
        raise ValueError("raster has no valid pixels")
    _, (ir, ic) = ndimage.distance_transform_edt(~valid, return_indices=True)
    return values[ir, ic]


def upsample_bicubic(raster, target_pixel_size):
    """Catmull-Rom bicubic upsampling by an integer scale factor.

    Edges are clamped; nodata source pixels propagate to every output pixel
    they cover.
    """
    scale = raster.pixel_size / target_pixel_size
    if abs(scale - round(scale)) > 1e-9 or round(scale) < 1:
        raise ValueError(
            f"target pixel size {target_pixel_size} does not divide "
            f"{raster.pixel_size} by an integer factor"
        )
    scale = int(round(scale))
    if raster.height < 2 or raster.width < 2:
        raise ValueError("raster smaller than 2x2 cannot be interpolated")
    valid = raster.valid_mask()
    src = _fill_invalid_nearest(raster.values.astype(np.float64), valid)

    h_out, w_out = raster.height * scale, raster.width * scale
    ridx, rw = _catmull_rom_taps(raster.height, h_out, scale)
    rows = np.zeros((h_out, raster.width))
    for k in range(4):
        rows += rw[k][:, None] * src[ridx[k], :]
    cidx, cw = _catmull_rom_taps(raster.width, w_out, scale)
    out = np.zeros((h_out, w_out))
    for k in range(4):
        out += cw[k][None, :] * rows[:, cidx[k]]

    if not valid.all():
        covered = np.repeat(np.repeat(~valid, scale, axis=0), scale, axis=1)
        out[covered] = np.nan
    return Raster(out.astype(np.float32), float(target_pixel_size), float("nan"))


def downsample_nearest(raster, target_pixel_size):
    """Nearest-neighbor downsampling by an integer factor.

    Each output pixel takes the value of the source pixel containing its
    center; a center on a shared edge belongs to the pixel whose top-left
    corner touches it. No averaging, so label semantics are preserved.
    """
    factor = target_pixel_size / raster.pixel_size
    if abs(factor - round(factor)) > 1e-9 or round(factor) < 1:
        raise ValueError(
            f"target pixel size {target_pixel_size} is not an integer multiple "
            f"of {raster.pixel_size}"
        )
    factor = int(round(factor))
    h_out, w_out = raster.height // factor, raster.width // factor
    if h_out == 0 or w_out == 0:
        raise ValueError("raster smaller than one output pixel")
    ridx = ((2 * np.arange(h_out) + 1) * factor) // 2
    cidx = ((2 * np.arange(w_out) + 1) * factor) // 2
    values = raster.values[np.ix_(ridx, cidx)].copy()
    return Raster(values, float(target_pixel_size), raster.nodata)


def patch_reduce(raster, grid, stat):
    """Aggregate a raster to one value per 100 m patch.

    Nodata source pixels are excluded; a patch with no valid pixel yields
    nodata. `std` uses the population convention (divide by n).
    """
    if stat not in _STATS:
        raise ValueError(f"unknown stat {stat!r}, expected one of {_STATS}")
    if abs(raster.pixel_size - grid.source_pixel_size) > 1e-9:
        raise ValueError(
            f"raster pixel size {raster.pixel_size} does not match grid "
            f"source pixel size {grid.source_pixel_size}"
        )
    k = grid.factor
    if raster.height != grid.patch_rows * k or raster.width != grid.patch_cols * k:
        raise ValueError(
            f"raster {raster.height}x{raster.width} does not tile the "
            f"{grid.patch_rows}x{grid.patch_cols} patch grid with factor {k}"
        )
    v = raster.values.astype(np.float64)
    valid = raster.valid_mask()
    v = np.where(valid, v, 0.0)
    blocks = v.reshape(grid.patch_rows, k, grid.patch_cols, k)
    vmask = valid.reshape(grid.patch_rows, k, grid.patch_cols, k)
    counts = vmask.sum(axis=(1, 3)).astype(np.float64)
    sums = blocks.sum(axis=(1, 3))

    with np.errstate(invalid="ignore", divide="ignore"):
        if stat == "mean":
            out = sums / counts
        elif stat == "std":
            sq = (blocks * blocks).sum(axis=(1, 3))
            var = sq / counts - (sums / counts) ** 2
            out = np.sqrt(np.maximum(var, 0.0))
        elif stat == "count_nonzero":
            nz = ((blocks != 0) & vmask).reshape(grid.patch_rows, k, grid.patch_cols, k)
            out = nz.sum(axis=(1, 3)).astype(np.float64)
        else:  # fraction_nonzero
            nz = ((blocks != 0) & vmask).sum(axis=(1, 3))
            out = nz / counts
    out = np.where(counts > 0, out, np.nan)
    return Raster(out.astype(np.float32), grid.patch_size_m, float("nan"))
