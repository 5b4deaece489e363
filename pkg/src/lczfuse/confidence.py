"""OSM building-layer incompleteness detection.

Where landuse is mapped, confidence comes from the building probability of the
landuse class, signed by whether a local search finds any building pixel
nearby. Where landuse is missing, the patch's building surface fraction fills
in. The combined 5 m confidence is averaged per 100 m patch and thresholded
into a binary mask: 1 = the building layer looks complete enough for the
building fusion model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import PatchGrid, Raster, patch_reduce

DEFAULT_SEARCH_RADIUS_PX = 5
DEFAULT_SURFACE_FRACTION_THRESHOLD = 0.10
DEFAULT_BINARIZE_THRESHOLD = 0.8

# Building surface fraction bands (percent) per LCZ label, from the standard
# LCZ property sheets (Stewart & Oke scheme).
LCZ_BUILDING_FRACTION_BANDS = {
    1: (40, 60),
    2: (40, 70),
    3: (40, 70),
    4: (20, 40),
    5: (20, 40),
    6: (20, 40),
    7: (60, 90),
    8: (30, 50),
    9: (10, 20),
    10: (20, 30),
    11: (0, 10),
    12: (0, 10),
    13: (0, 10),
    14: (0, 10),
    15: (0, 10),
    16: (0, 10),
    17: (0, 10),
}


@dataclass
class BuildLanduseMatrix:
    """P(building | landuse class) with the underlying pixel counts retained
    so additional scenes can be merged in later."""

    class_ids: np.ndarray  # (n,) int, landuse values != 0
    building: np.ndarray  # (n,) building-pixel counts
    total: np.ndarray  # (n,) pixel counts

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.building = np.asarray(self.building, dtype=np.float64)
        self.total = np.asarray(self.total, dtype=np.float64)

    @property
    def p_build(self):
        return self.building / self.total

    def probability_lut(self, max_id):
        """Dense landuse-id -> p(build) lookup; unseen classes get 0."""
        lut = np.zeros(max_id + 1)
        for cid, b, t in zip(self.class_ids, self.building, self.total):
            if cid <= max_id and t > 0:
                lut[cid] = b / t
        return lut

    def merged_with(self, other):
        ids = np.union1d(self.class_ids, other.class_ids)
        b = np.zeros(len(ids))
        t = np.zeros(len(ids))
        for src in (self, other):
            pos = np.searchsorted(ids, src.class_ids)
            b[pos] += src.building
            t[pos] += src.total
        return BuildLanduseMatrix(ids, b, t)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["landuse", "building_pixels", "total_pixels", "p_build"])
            for cid, b, t in zip(self.class_ids, self.building, self.total):
                writer.writerow([int(cid), int(b), int(t), repr(float(b / t))])

    @classmethod
    def from_csv(cls, path):
        ids, b, t = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for rec in reader:
                if not rec:
                    continue
                ids.append(int(rec[0]))
                b.append(float(rec[1]))
                t.append(float(rec[2]))
        return cls(np.array(ids), np.array(b), np.array(t))


def train_build_landuse_matrix(scenes):
    """Count building co-occurrence per landuse class over 5 m pixels.

    `scenes` is a list of (landuse, building) raster pairs; landuse value 0 is
    excluded, classes with zero pixels are omitted.
    """
    buckets = {}
    for landuse, building in scenes:
        if landuse.shape != building.shape:
            raise ValueError("landuse and building rasters disagree in shape")
        lu = landuse.values.astype(np.int64)
        built = building.values != 0
        keep = lu != 0
        for cid in np.unique(lu[keep]):
            sel = lu == cid
            b, t = buckets.get(int(cid), (0.0, 0.0))
            buckets[int(cid)] = (b + float(built[sel].sum()), t + float(sel.sum()))
    if not buckets:
        raise ValueError("no nonzero landuse pixels in any scene")
    ids = np.array(sorted(buckets))
    building_counts = np.array([buckets[int(i)][0] for i in ids])
    totals = np.array([buckets[int(i)][1] for i in ids])
    return BuildLanduseMatrix(ids, building_counts, totals)


def local_search_confidence(landuse, building, matrix, radius_px=DEFAULT_SEARCH_RADIUS_PX):
    """Signed per-pixel confidence p(build | landuse) * flag at 5 m.

    flag is +1 when any building pixel lies within the square (Chebyshev)
    search radius, -1 otherwise. Pixels with landuse 0 are left as nodata for
    the detection complement to fill.
    """
    if landuse.shape != building.shape:
        raise ValueError("landuse and building rasters disagree in shape")
    lu = landuse.values.astype(np.int64)
    built = (building.values != 0).astype(np.uint8)
    found = ndimage.maximum_filter(built, size=2 * radius_px + 1, mode="constant", cval=0)
    flag = np.where(found > 0, 1.0, -1.0)
    lut = matrix.probability_lut(int(lu.max(initial=0)))
    conf = lut[lu] * flag
    conf[lu == 0] = np.nan
    return Raster(conf.astype(np.float32), landuse.pixel_size, float("nan"))


def surface_fraction_confidence(building, grid, threshold=DEFAULT_SURFACE_FRACTION_THRESHOLD):
    """Per-patch binary confidence: 1 iff the building fraction exceeds the
    threshold (strictly)."""
    frac = patch_reduce(building, grid, "fraction_nonzero")
    conf = np.zeros(frac.shape, dtype=np.uint8)
    with np.errstate(invalid="ignore"):
        conf[np.nan_to_num(frac.values, nan=0.0) > threshold] = 1
    return Raster(conf, grid.patch_size_m, 255)


def combine_and_binarize(
    conf_p1, conf_p2, landuse, binarize_threshold=DEFAULT_BINARIZE_THRESHOLD
):
    """Merge the two confidence sources and aggregate to the 100 m mask.

    Per 5 m pixel: landuse != 0 takes the signed local-search confidence;
    landuse == 0 takes the patch's surface-fraction bit (0 where that bit is
    0, which the combination rule leaves uncovered). The patch mean of the
    combined values is thresholded into the binary mask.
    """
    k = int(round(conf_p2.pixel_size / conf_p1.pixel_size))
    rows, cols = conf_p2.shape
    if conf_p1.shape != (rows * k, cols * k) or landuse.shape != conf_p1.shape:
        raise ValueError("confidence rasters disagree in extent")
    p2_expanded = np.repeat(np.repeat(conf_p2.values.astype(np.float64), k, 0), k, 1)
    comb = np.where(landuse.values != 0, conf_p1.values.astype(np.float64), p2_expanded)
    grid = PatchGrid(rows, cols, conf_p1.pixel_size, conf_p2.pixel_size)
    mean = patch_reduce(Raster(comb.astype(np.float32), conf_p1.pixel_size), grid, "mean")
    mask = (np.nan_to_num(mean.values, nan=-1.0) >= binarize_threshold).astype(np.uint8)
    return Raster(mask, conf_p2.pixel_size, 255)


def build_confidence_mask(
    landuse,
    building,
    matrix,
    radius_px=DEFAULT_SEARCH_RADIUS_PX,
    surface_fraction_threshold=DEFAULT_SURFACE_FRACTION_THRESHOLD,
    binarize_threshold=DEFAULT_BINARIZE_THRESHOLD,
    patch_size_m=100.0,
):
    """Full mask pipeline for one scene's 5 m landuse and building layers."""
    k = int(round(patch_size_m / building.pixel_size))
    grid = PatchGrid(building.height // k, building.width // k, building.pixel_size, patch_size_m)
    conf_p1 = local_search_confidence(landuse, building, matrix, radius_px)
    conf_p2 = surface_fraction_confidence(building, grid, surface_fraction_threshold)
    return combine_and_binarize(conf_p1, conf_p2, landuse, binarize_threshold)


def quasi_truth_mask(building, labels, grid):
    """Patch kept iff its observed building fraction is consistent with the
    true label's standard surface-fraction band (inclusive bounds)."""
    frac = patch_reduce(building, grid, "fraction_nonzero")
    pct = np.nan_to_num(frac.values, nan=0.0) * 100.0
    lab = labels.values
    mask = np.zeros(lab.shape, dtype=np.uint8)
    for label, (lo, hi) in LCZ_BUILDING_FRACTION_BANDS.items():
        sel = lab == label
        mask[sel & (pct >= lo) & (pct <= hi)] = 1
    return Raster(mask, grid.patch_size_m, 255)


def _flat_pearson(a, b):
    a = a.reshape(-1)
    b = b.reshape(-1)
    if a.std() == 0 or b.std() == 0:
        return float("nan")
    return float(np.corrcoef(a, b)[0, 1])


def threshold_sensitivity(
    scenes,
    thresholds=None,
    gap=5,
    radius_px=DEFAULT_SEARCH_RADIUS_PX,
    binarize_threshold=DEFAULT_BINARIZE_THRESHOLD,
):
    """Correlate density-label matrices trained under mask variants.

    For each surface-fraction threshold, the building weight matrix is trained
    under the resulting confidence mask and compared (entrywise Pearson over
    the flattened matrices) against the quasi-truth matrix (patches kept iff
    their observed fraction matches the true label's standard band) and the
    all-pass matrix. Matrices are built smoothing-free on a fixed range set so
    correlations compare the distributions, not the support sizes; ranges
    never observed fall back to the uniform row.

    `scenes` is a list of dicts with keys landuse, building, density, labels.
    Returns (rows, extras): rows are (threshold_percent, corr_quasi_truth,
    corr_all_pass) tuples; extras carries the reference matrices.
    """
    from .fusion import build_density_ranges, train_building_matrix

    if thresholds is None:
        thresholds = [t / 100.0 for t in range(0, 101, 10)]

    grids = []
    for scene in scenes:
        lab = scene["labels"]
        grids.append(PatchGrid(lab.height, lab.width, scene["building"].pixel_size))
    matrix = train_build_landuse_matrix(
        [(s["landuse"], s["building"]) for s in scenes]
    )

    bn_max = 0
    for scene in scenes:
        lab = scene["labels"]
        labeled = (lab.values != lab.nodata) & (lab.values >= 1) & (lab.values <= 17)
        if labeled.any():
            bn_max = max(bn_max, int(scene["density"].values[labeled].max()))
    ranges = build_density_ranges(bn_max, gap)

    def matrix_under(masks):
        return train_building_matrix(
            [s["density"] for s in scenes],
            [s["labels"] for s in scenes],
            ranges,
            masks,
            alpha=0.0,
        )

    all_pass = [Raster(np.ones(s["labels"].shape, dtype=np.uint8), 100.0, 255) for s in scenes]
    quasi = [
        quasi_truth_mask(s["building"], s["labels"], g) for s, g in zip(scenes, grids)
    ]

    def matrix_or_none(masks):
        try:
            return matrix_under(masks)
        except ValueError:
            return None  # mask emptied every scene

    m_all = matrix_or_none(all_pass)
    m_quasi = matrix_or_none(quasi)

    rows = []
    for t in thresholds:
        masks = [
            build_confidence_mask(
                s["landuse"],
                s["building"],
                matrix,
                radius_px=radius_px,
                surface_fraction_threshold=t,
                binarize_threshold=binarize_threshold,
            )
            for s in scenes
        ]
        m_t = matrix_or_none(masks)
        corr_l = _flat_pearson(m_t.probs, m_quasi.probs) if m_t and m_quasi else float("nan")
        corr_m = _flat_pearson(m_t.probs, m_all.probs) if m_t and m_all else float("nan")
        rows.append((round(t * 100), corr_l, corr_m))
    return rows, {"quasi_truth": m_quasi, "all_pass": m_all, "ranges": ranges,
                  "build_landuse": matrix}
