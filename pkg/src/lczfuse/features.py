"""Per-patch feature extraction from band stacks, OSM layers, and building points.

Produces the feature table consumed by the classifier: per-band patch means and
standard deviations, spectral index statistics (NDVI/NDWI/BSI), gray-level
co-occurrence texture features, morphological profile means, and optionally the
stacked building/landuse columns used by the baseline.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import PatchGrid, Raster, crop_to_patch_multiple, patch_reduce

INDEX_NAMES = ("ndvi", "ndwi", "bsi")
GLCM_FEATURES = ("contrast", "correlation", "energy", "homogeneity")
DEFAULT_MP_RADII = (4, 7, 10)
DEFAULT_GLCM_DIRECTIONS = (0, 45, 90, 135)

# (row, col) displacement per direction; symmetric accumulation makes the
# opposite displacement redundant.
_DIRECTION_STEPS = {0: (0, 1), 45: (-1, 1), 90: (-1, 0), 135: (-1, -1)}


@dataclass
class BandStack:
    """Co-registered single-acquisition band rasters plus a role mapping."""

    bands: dict  # name -> Raster, insertion order is the band order
    acquisition_id: str
    band_roles: dict  # role in {blue,green,red,nir,swir} -> band name

    def __post_init__(self):
        shapes = {r.shape for r in self.bands.values()}
        sizes = {r.pixel_size for r in self.bands.values()}
        if len(shapes) > 1 or len(sizes) > 1:
            raise ValueError(f"bands of {self.acquisition_id} disagree in shape or pixel size")
        for role, name in self.band_roles.items():
            if name not in self.bands:
                raise ValueError(f"band role {role!r} points at unknown band {name!r}")

    @property
    def band_names(self):
        return list(self.bands)

    @property
    def pixel_size(self):
        return next(iter(self.bands.values())).pixel_size

    @property
    def shape(self):
        return next(iter(self.bands.values())).shape

    def role(self, role):
        if role not in self.band_roles:
            raise ValueError(f"band stack {self.acquisition_id} has no {role!r} band")
        return self.bands[self.band_roles[role]]


@dataclass
class BuildingPoints:
    """Building centroid coordinates in meters within the scene frame."""

    points: np.ndarray  # (n, 2) columns x_m, y_m

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)

    def __len__(self):
        return len(self.points)


def load_building_points(path, scene_width_m=None, scene_height_m=None):
    """Read a `x_m,y_m` CSV; returns (points, n_dropped) after bounds filtering."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["x_m", "y_m"]:
            raise ValueError(f"{path}: expected header 'x_m,y_m'")
        for rec in reader:
            if not rec:
                continue
            rows.append((float(rec[0]), float(rec[1])))
    pts = np.array(rows, dtype=np.float64).reshape(-1, 2)
    dropped = 0
    if scene_width_m is not None and scene_height_m is not None and len(pts):
        keep = (
            (pts[:, 0] >= 0)
            & (pts[:, 0] <= scene_width_m)
            & (pts[:, 1] >= 0)
            & (pts[:, 1] <= scene_height_m)
        )
        dropped = int((~keep).sum())
        pts = pts[keep]
    return BuildingPoints(pts), dropped


def save_building_points(bp, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_m", "y_m"])
        for x, y in bp.points:
            writer.writerow([repr(float(x)), repr(float(y))])


@dataclass
class FeatureTable:
    """Per-patch feature rows in row-major patch order, with optional labels."""

    feature_names: list
    rows: np.ndarray  # (n, len(feature_names)) float64
    patch_coords: np.ndarray  # (n, 2) int, (i, j)
    labels: np.ndarray | None = None  # int in 1..17, 0 where unlabeled

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.patch_coords = np.asarray(self.patch_coords, dtype=np.int64)
        if self.rows.shape[1] != len(self.feature_names):
            raise ValueError("row width does not match feature_names")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            bad = (self.labels != 0) & ((self.labels < 1) | (self.labels > 17))
            if bad.any():
                raise ValueError("labels must lie in [1, 17]")

    def __len__(self):
        return len(self.rows)

    def labeled_subset(self):
        if self.labels is None:
            raise ValueError("table has no labels")
        keep = (self.labels > 0) & np.isfinite(self.rows).all(axis=1)
        return FeatureTable(
            self.feature_names, self.rows[keep], self.patch_coords[keep], self.labels[keep]
        )

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["patch_i", "patch_j", "label"] + list(self.feature_names))
            for k in range(len(self.rows)):
                label = ""
                if self.labels is not None and self.labels[k] > 0:
                    label = int(self.labels[k])
                writer.writerow(
                    [int(self.patch_coords[k, 0]), int(self.patch_coords[k, 1]), label]
                    + [repr(float(v)) for v in self.rows[k]]
                )

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            names = header[3:]
            coords, labels, rows = [], [], []
            for rec in reader:
                if not rec:
                    continue
                coords.append((int(rec[0]), int(rec[1])))
                labels.append(int(rec[2]) if rec[2] else 0)
                rows.append([float(v) for v in rec[3:]])
        labels = np.array(labels)
        if not labels.any():
            labels = None
        return cls(names, np.array(rows, dtype=np.float64).reshape(-1, len(names)),
                   np.array(coords, dtype=np.int64).reshape(-1, 2), labels)


def spectral_index(stack, index):
    """NDVI, NDWI, or BSI on a band stack; outputs clamped to [-1, 1]."""
    index = index.lower()
    if index == "ndvi":
        num = stack.role("nir").values.astype(np.float64) - stack.role("red").values
        den = stack.role("nir").values.astype(np.float64) + stack.role("red").values
    elif index == "ndwi":
        num = stack.role("green").values.astype(np.float64) - stack.role("nir").values
        den = stack.role("green").values.astype(np.float64) + stack.role("nir").values
    elif index == "bsi":
        swir = stack.role("swir").values.astype(np.float64)
        red = stack.role("red").values.astype(np.float64)
        nir = stack.role("nir").values.astype(np.float64)
        blue = stack.role("blue").values.astype(np.float64)
        num = (swir + red) - (nir + blue)
        den = (swir + red) + (nir + blue)
    else:
        raise ValueError(f"unknown spectral index {index!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    out[den == 0] = np.nan
    out = np.clip(out, -1.0, 1.0)
    return Raster(out.astype(np.float32), stack.pixel_size, float("nan"))


_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_SQUARE = np.ones((3, 3), dtype=bool)
_OCTAGON_RATIO = 2**0.5 - 1.0


def disk_footprint(radius):
    """Octagonal approximate disk of the given pixel radius.

    Built by iterated unit dilations (cross/square mix), so larger radii are
    morphologically open with respect to smaller ones; exact Euclidean disks
    lack that property, which openings/closings need to be monotone in radius.
    """
    if radius < 1:
        raise ValueError(f"structuring element radius must be >= 1, got {radius}")
    fp = np.ones((1, 1), dtype=bool)
    for i in range(1, radius + 1):
        unit = _SQUARE if int(i * _OCTAGON_RATIO) > int((i - 1) * _OCTAGON_RATIO) else _CROSS
        fp = ndimage.binary_dilation(np.pad(fp, 1), structure=unit)
    return fp


def _masked_grey(values, valid, footprint, op):
    fill = np.inf if op is ndimage.grey_erosion else -np.inf
    a = np.where(valid, values, fill)
    out = op(a, footprint=footprint, mode="nearest")
    out[~np.isfinite(out)] = np.nan
    return out


def morphological_profile(ndvi, se_radii=DEFAULT_MP_RADII):
    """Grayscale opening and closing of an index raster per disk radius.

    Returns [open(r0), close(r0), open(r1), ...]; nodata pixels stay nodata and
    are transparent to neighboring stencils.
    """
    valid = ndvi.valid_mask()
    v = ndvi.values.astype(np.float64)
    out = []
    for radius in se_radii:
        fp = disk_footprint(radius)
        eroded = _masked_grey(v, valid, fp, ndimage.grey_erosion)
        opened = _masked_grey(eroded, np.isfinite(eroded), fp, ndimage.grey_dilation)
        dilated = _masked_grey(v, valid, fp, ndimage.grey_dilation)
        closed = _masked_grey(dilated, np.isfinite(dilated), fp, ndimage.grey_erosion)
        opened[~valid] = np.nan
        closed[~valid] = np.nan
        out.append(Raster(opened.astype(np.float32), ndvi.pixel_size, float("nan")))
        out.append(Raster(closed.astype(np.float32), ndvi.pixel_size, float("nan")))
    return out


def _patch_cooccurrence(quantized, valid, levels, direction, offset):
    """Symmetric normalized co-occurrence matrix of one patch and direction.

    Returns None when the direction yields no valid pixel pair.
    """
    dr, dc = _DIRECTION_STEPS[direction]
    dr, dc = dr * offset, dc * offset
    h, w = quantized.shape
    r0, r1 = max(0, -dr), min(h, h - dr)
    c0, c1 = max(0, -dc), min(w, w - dc)
    if r0 >= r1 or c0 >= c1:
        return None
    a = quantized[r0:r1, c0:c1]
    b = quantized[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    ok = valid[r0:r1, c0:c1] & valid[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
    if not ok.any():
        return None
    codes = a[ok].astype(np.int64) * levels + b[ok]
    counts = np.bincount(codes, minlength=levels * levels).reshape(levels, levels)
    mat = counts + counts.T
    return mat / mat.sum()


def _haralick(p, idx, diff2, inv_diff):
    contrast = float((p * diff2).sum())
    energy = float((p * p).sum())
    homogeneity = float((p * inv_diff).sum())
    marginal = p.sum(axis=1)
    mu = float((idx * marginal).sum())
    var = float((idx * idx * marginal).sum() - mu * mu)
    if var <= 1e-12:
        correlation = 1.0
    else:
        correlation = (float((np.outer(idx, idx) * p).sum()) - mu * mu) / var
    return contrast, correlation, energy, homogeneity


def glcm_features(band, grid, levels=32, directions=DEFAULT_GLCM_DIRECTIONS, offset=1):
    """Per-patch Haralick texture features, averaged over directions.

    Each patch is quantized to `levels` bins by min-max scaling over the patch;
    a symmetric co-occurrence matrix is accumulated and normalized per
    direction, and contrast / correlation / energy / homogeneity are averaged
    over directions. A constant patch yields (0, 1, 1, 1).
    """
    if levels < 2:
        raise ValueError("GLCM needs at least 2 gray levels")
    if offset < 1:
        raise ValueError("GLCM offset must be >= 1")
    bad = set(directions) - set(_DIRECTION_STEPS)
    if bad:
        raise ValueError(f"unsupported GLCM directions: {sorted(bad)}")
    k = grid.factor
    if k <= offset:
        raise ValueError(f"patch of {k} px is smaller than offset {offset} + 1")
    if band.height != grid.patch_rows * k or band.width != grid.patch_cols * k:
        raise ValueError("raster does not tile the patch grid")

    v = band.values.astype(np.float64)
    valid = band.valid_mask()
    vb = v.reshape(grid.patch_rows, k, grid.patch_cols, k).transpose(0, 2, 1, 3)
    mb = valid.reshape(grid.patch_rows, k, grid.patch_cols, k).transpose(0, 2, 1, 3)

    idx = np.arange(levels, dtype=np.float64)
    diff = np.abs(idx[:, None] - idx[None, :])
    diff2 = diff * diff
    inv_diff = 1.0 / (1.0 + diff)

    out = {name: np.full((grid.patch_rows, grid.patch_cols), np.nan) for name in GLCM_FEATURES}
    for i in range(grid.patch_rows):
        for j in range(grid.patch_cols):
            patch, ok = vb[i, j], mb[i, j]
            if not ok.any():
                continue
            vmin = patch[ok].min()
            vmax = patch[ok].max()
            if vmax > vmin:
                q = ((patch - vmin) / (vmax - vmin) * levels).astype(np.int64)
                np.clip(q, 0, levels - 1, out=q)
            else:
                q = np.zeros_like(patch, dtype=np.int64)
            q[~ok] = 0
            feats = []
            for direction in directions:
                p = _patch_cooccurrence(q, ok, levels, direction, offset)
                if p is not None:
                    feats.append(_haralick(p, idx, diff2, inv_diff))
            if feats:
                mean = np.mean(feats, axis=0)
            else:
                mean = (0.0, 1.0, 1.0, 1.0)  # no pairs: degenerate convention
            for name, value in zip(GLCM_FEATURES, mean):
                out[name][i, j] = value
    return {
        name: Raster(arr.astype(np.float32), grid.patch_size_m, float("nan"))
        for name, arr in out.items()
    }


def building_density(points, grid):
    """Count of building centroids per patch; left/top edges inclusive."""
    counts = np.zeros((grid.patch_rows, grid.patch_cols), dtype=np.float64)
    if len(points):
        col = np.floor(points.points[:, 0] / grid.patch_size_m).astype(np.int64)
        row = np.floor(points.points[:, 1] / grid.patch_size_m).astype(np.int64)
        keep = (row >= 0) & (row < grid.patch_rows) & (col >= 0) & (col < grid.patch_cols)
        np.add.at(counts, (row[keep], col[keep]), 1.0)
    return Raster(counts.astype(np.float32), grid.patch_size_m, float("nan"))


def _flatten(raster):
    return raster.values.astype(np.float64).reshape(-1)


def assemble_features(
    stack,
    osm=None,
    points=None,
    mode="satellite_only",
    labels=None,
    mp_radii=DEFAULT_MP_RADII,
    glcm_levels=32,
    glcm_directions=DEFAULT_GLCM_DIRECTIONS,
    glcm_offset=1,
    glcm_role="nir",
):
    """Build the per-patch feature table for one acquisition.

    `satellite_only` yields the 36 satellite columns (band means/stds, index
    means/stds, 4 texture features, 6 morphological profile means).
    `stacked_baseline` appends building density, and the building and landuse
    layers nearest-downsampled to 100 m, for 39 columns total. Column order is
    fixed: band means, index means, band stds, index stds, texture, profiles,
    then the stacked OSM columns.
    """
    if mode not in ("satellite_only", "stacked_baseline"):
        raise ValueError(f"unknown assemble mode {mode!r}")
    cropped = {name: crop_to_patch_multiple(r) for name, r in stack.bands.items()}
    stack = BandStack(cropped, stack.acquisition_id, stack.band_roles)
    grid = PatchGrid.for_raster(next(iter(stack.bands.values())))

    names, columns = [], []
    for name, band in stack.bands.items():
        names.append(f"mean_{name}")
        columns.append(_flatten(patch_reduce(band, grid, "mean")))
    indices = {idx: spectral_index(stack, idx) for idx in INDEX_NAMES}
    for idx in INDEX_NAMES:
        names.append(f"mean_{idx}")
        columns.append(_flatten(patch_reduce(indices[idx], grid, "mean")))
    for name, band in stack.bands.items():
        names.append(f"std_{name}")
        columns.append(_flatten(patch_reduce(band, grid, "std")))
    for idx in INDEX_NAMES:
        names.append(f"std_{idx}")
        columns.append(_flatten(patch_reduce(indices[idx], grid, "std")))
    texture = glcm_features(
        stack.role(glcm_role), grid, glcm_levels, glcm_directions, glcm_offset
    )
    for feat in GLCM_FEATURES:
        names.append(f"glcm_{feat}")
        columns.append(_flatten(texture[feat]))
    profile = morphological_profile(indices["ndvi"], mp_radii)
    for pos, radius in enumerate(mp_radii):
        for offset_idx, kind in ((0, "open"), (1, "close")):
            names.append(f"mp_{kind}_r{radius}")
            columns.append(_flatten(patch_reduce(profile[2 * pos + offset_idx], grid, "mean")))

    if mode == "stacked_baseline":
        if osm is None or "landuse" not in osm or "building" not in osm:
            raise ValueError("stacked_baseline mode requires landuse and building rasters")
        if points is None:
            raise ValueError("stacked_baseline mode requires building points")
        landuse = crop_to_patch_multiple(osm["landuse"])
        building = crop_to_patch_multiple(osm["building"])
        for layer_name, layer in (("landuse", landuse), ("building", building)):
            lr, lc = layer.shape
            klay = int(round(grid.patch_size_m / layer.pixel_size))
            if (lr // klay, lc // klay) != (grid.patch_rows, grid.patch_cols):
                raise ValueError(f"{layer_name} raster extent does not match the band stack")
        names.append("building_density")
        columns.append(_flatten(building_density(points, grid)))
        from .raster import downsample_nearest

        for layer_name, layer in (("building", building), ("landuse", landuse)):
            down = downsample_nearest(layer, grid.patch_size_m)
            names.append(layer_name)
            columns.append(down.values.astype(np.float64).reshape(-1))

    rows = np.stack(columns, axis=1)
    ii, jj = np.meshgrid(
        np.arange(grid.patch_rows), np.arange(grid.patch_cols), indexing="ij"
    )
    coords = np.stack([ii.reshape(-1), jj.reshape(-1)], axis=1)

    label_col = None
    if labels is not None:
        if labels.height < grid.patch_rows or labels.width < grid.patch_cols:
            raise ValueError("labels raster extent does not match the band stack")
        lv = labels.values[: grid.patch_rows, : grid.patch_cols]
        label_col = np.where(lv == labels.nodata, 0, lv).astype(np.int64).reshape(-1)
    return FeatureTable(names, rows, coords, label_col)
