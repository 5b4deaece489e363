"""Model-level fusion of OSM layers with the classifier's votes cube.

Two row-stochastic weight matrices are learned by counting: P(label | landuse
class) over 5 m pixels, and P(label | building-density range) over 100 m
patches that pass the building confidence mask. Fusion multiplies each pixel's
vote vector elementwise with the summed (landuse) or looked-up (building)
weight rows. Fused cubes no longer sum to the tree count; downstream argmax
does not care.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import N_LCZ_LABELS
from .ccf import VotesCube

UNIFORM_ROW = np.full(N_LCZ_LABELS, 1.0 / N_LCZ_LABELS)


@dataclass
class WeightMatrix:
    """Row-stochastic P(label | key) with Laplace smoothing.

    Keys are landuse class ids or density-range indices. Unknown keys map to
    the uniform row at apply time.
    """

    row_keys: np.ndarray  # (n,) int
    probs: np.ndarray  # (n, 17)
    laplace_alpha: float

    def __post_init__(self):
        self.row_keys = np.asarray(self.row_keys, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape != (len(self.row_keys), N_LCZ_LABELS):
            raise ValueError("weight matrix shape mismatch")
        if (self.probs < 0).any():
            raise ValueError("weight matrix entries must be nonnegative")
        sums = self.probs.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("weight matrix rows must sum to 1")

    @classmethod
    def from_counts(cls, keys, counts, alpha):
        """Count-and-normalize with Laplace alpha.

        Rows with zero raw count are dropped when alpha == 0 and become
        uniform otherwise.
        """
        keys = np.asarray(keys, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.float64)
        totals = counts.sum(axis=1)
        if alpha == 0:
            keep = totals > 0
            keys, counts, totals = keys[keep], counts[keep], totals[keep]
        if len(keys) == 0:
            raise ValueError("no observations to train a weight matrix")
        probs = (counts + alpha) / (totals + N_LCZ_LABELS * alpha)[:, None]
        return cls(keys, probs, alpha)

    def row_for(self, key):
        hit = np.flatnonzero(self.row_keys == key)
        if len(hit) == 0:
            return UNIFORM_ROW.copy()
        return self.probs[hit[0]]

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["key"] + [f"p_label_{l}" for l in range(1, N_LCZ_LABELS + 1)])
            for key, row in zip(self.row_keys, self.probs):
                writer.writerow([int(key)] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, alpha=0.0):
        keys, rows = [], []
        comment = None
        with open(path, newline="") as fh:
            first = fh.readline()
            if first.startswith("#"):
                comment = first[1:].strip()
            else:
                fh.seek(0)
            reader = csv.reader(fh)
            next(reader)  # header
            for rec in reader:
                if not rec:
                    continue
                keys.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
        matrix = cls(np.array(keys), np.array(rows), alpha)
        matrix._header_comment = comment
        return matrix


@dataclass
class DensityRanges:
    """Contiguous building-density intervals [0,gap], [gap+1,2gap], ...

    The sequence extends until its upper bound reaches bn_max + gap, and any
    density beyond the last interval clamps to it.
    """

    gap: int
    bn_max: int
    ranges: list

    def index_of(self, density):
        d = np.asarray(density)
        idx = np.where(d <= self.gap, 0, 1 + (d - self.gap - 1) // self.gap)
        return np.clip(idx, 0, len(self.ranges) - 1).astype(np.int64)

    def header_comment(self):
        return f"gap={self.gap} bn_max={self.bn_max}"

    @classmethod
    def from_header_comment(cls, comment):
        fields = dict(part.split("=") for part in comment.split())
        return build_density_ranges(int(fields["bn_max"]), int(fields["gap"]))


def build_density_ranges(bn_max, gap=5):
    if gap < 1:
        raise ValueError("gap must be >= 1")
    if bn_max < 0:
        raise ValueError("bn_max must be >= 0")
    ranges = [(0, gap)]
    while ranges[-1][1] < bn_max + gap:
        lo = ranges[-1][1] + 1
        ranges.append((lo, lo + gap - 1))
    return DensityRanges(gap, int(bn_max), ranges)


def _labeled_pairs(landuse, labels):
    """(landuse value, label) arrays for 5 m pixels inside labeled patches."""
    k = int(round(labels.pixel_size / landuse.pixel_size))
    lr, lc = labels.shape
    lu = landuse.values[: lr * k, : lc * k]
    if lu.shape != (lr * k, lc * k):
        raise ValueError("landuse raster does not cover the labels raster")
    lab = np.repeat(np.repeat(labels.values, k, axis=0), k, axis=1)
    keep = (lu != 0) & (lab != labels.nodata) & (lab >= 1) & (lab <= N_LCZ_LABELS)
    return lu[keep].astype(np.int64), lab[keep].astype(np.int64)


def train_landuse_matrix(scenes, alpha=1.0):
    """P(label | landuse class) counted over 5 m pixels of labeled patches.

    `scenes` is a list of (landuse 5 m raster, labels 100 m raster) pairs;
    landuse value 0 means "no data" and is excluded.
    """
    buckets = {}
    for landuse, labels in scenes:
        lu, lab = _labeled_pairs(landuse, labels)
        for key in np.unique(lu):
            row = buckets.setdefault(int(key), np.zeros(N_LCZ_LABELS))
            row += np.bincount(lab[lu == key] - 1, minlength=N_LCZ_LABELS)
    if not buckets:
        raise ValueError("no nonzero landuse pixels overlap labeled patches")
    keys = np.array(sorted(buckets))
    counts = np.stack([buckets[int(k)] for k in keys])
    return WeightMatrix.from_counts(keys, counts, alpha)


def apply_landuse_fusion(votes, landuse, W):
    """Weight each patch's votes by the summed landuse rows of its 5 m pixels.

    Per patch the weight rows of all nonzero landuse pixels are summed and the
    result multiplies the vote vector elementwise; a patch with no nonzero
    landuse pixel passes through unchanged, and unknown landuse ids contribute
    the uniform row.
    """
    rows, cols = votes.shape
    k = int(round(votes_pixel_ratio(votes, landuse)))
    lu = landuse.values[: rows * k, : cols * k].astype(np.int64)
    if lu.shape != (rows * k, cols * k):
        raise ValueError("landuse raster does not cover the votes cube")

    max_id = int(lu.max(initial=0))
    lut = np.full(max_id + 1, -1, dtype=np.int64)  # -1: unknown -> uniform
    for pos, key in enumerate(W.row_keys):
        if key <= max_id:
            lut[key] = pos
    blocks = lu.reshape(rows, k, cols, k).transpose(0, 2, 1, 3).reshape(rows * cols, k * k)
    nonzero = blocks != 0
    mapped = np.where(nonzero, lut[blocks], -2)  # -2: zero pixel, ignored

    n_rows = len(W.row_keys)
    offset = mapped + 2  # 0: ignored, 1: unknown, 2+: matrix row
    hist = np.stack(
        [np.bincount(offset[p], minlength=n_rows + 2) for p in range(rows * cols)]
    ).astype(np.float64)
    weight_sum = hist[:, 1:2] * UNIFORM_ROW[None, :] + hist[:, 2:] @ W.probs
    covered = nonzero.any(axis=1)
    weight_sum[~covered] = 1.0  # empty sum: pass votes through

    out = votes.copy()
    out.votes = votes.votes * weight_sum.reshape(rows, cols, N_LCZ_LABELS)
    return out


def votes_pixel_ratio(votes, layer):
    ratio = 100.0 / layer.pixel_size
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"layer pixel size {layer.pixel_size} does not divide 100 m")
    return round(ratio)


def train_building_matrix(density, labels, ranges, mask, alpha=1.0):
    """P(label | density range) over labeled patches where the mask is 1.

    `density`, `labels`, `mask` may be single 100 m rasters or lists of them
    (one per scene). Every range keeps a row; ranges never observed become
    uniform.
    """
    if not isinstance(density, (list, tuple)):
        density, labels, mask = [density], [labels], [mask]
    counts = np.zeros((len(ranges.ranges), N_LCZ_LABELS))
    seen = 0
    for den, lab, msk in zip(density, labels, mask):
        if den.shape != lab.shape or den.shape != msk.shape:
            raise ValueError("density, labels, and mask rasters disagree in shape")
        keep = (
            (lab.values != lab.nodata)
            & (lab.values >= 1)
            & (lab.values <= N_LCZ_LABELS)
            & (msk.values == 1)
            & np.isfinite(den.values)
        )
        if not keep.any():
            continue
        seen += int(keep.sum())
        idx = ranges.index_of(den.values[keep].astype(np.int64))
        np.add.at(counts, (idx, lab.values[keep].astype(np.int64) - 1), 1.0)
    if seen == 0:
        raise ValueError("no building-confident labeled patches to train on")
    keys = np.arange(len(ranges.ranges))
    totals = counts.sum(axis=1)
    denom = totals + N_LCZ_LABELS * alpha
    probs = np.empty_like(counts)
    empty = denom == 0
    probs[~empty] = (counts[~empty] + alpha) / denom[~empty, None]
    probs[empty] = UNIFORM_ROW
    return WeightMatrix(keys, probs, alpha)


def apply_building_fusion(votes, density, W, ranges, mask):
    """Weight each pixel's votes by its density-range row; mask=0 passes through."""
    rows, cols = votes.shape
    if density.shape != (rows, cols) or mask.shape != (rows, cols):
        raise ValueError("density or mask raster does not match the votes cube")
    idx = ranges.index_of(np.nan_to_num(density.values, nan=0.0).astype(np.int64))
    row_lut = np.tile(UNIFORM_ROW, (len(ranges.ranges), 1))
    for pos, key in enumerate(W.row_keys):
        if 0 <= key < len(ranges.ranges):
            row_lut[key] = W.probs[pos]
    weights = row_lut[idx]
    apply = (mask.values == 1) & np.isfinite(density.values)
    weights[~apply] = 1.0  # unconfident pixels pass through
    out = votes.copy()
    out.votes = votes.votes * weights
    return out
