"""Votes-cube to label-map conversion, filtering, temporal fusion, scoring.

Label maps are uint8 rasters with labels 1..17 and 255 for unclassified
pixels. Tie-breaking is everywhere "lowest label wins" so results are
deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import LABEL_NODATA, N_LCZ_LABELS
from .raster import Raster

# Flat palette for the indexed-color map export, one RGB triple per label.
LABEL_PALETTE = {
    1: (140, 0, 0),
    2: (209, 0, 0),
    3: (255, 0, 0),
    4: (191, 77, 0),
    5: (255, 102, 0),
    6: (255, 153, 85),
    7: (250, 238, 5),
    8: (188, 188, 188),
    9: (255, 204, 170),
    10: (85, 85, 85),
    11: (0, 106, 0),
    12: (0, 170, 0),
    13: (100, 133, 37),
    14: (185, 219, 121),
    15: (0, 0, 0),
    16: (251, 247, 174),
    17: (106, 107, 250),
}


def argmax_map(votes):
    """Label of the largest vote per pixel; ties take the lowest label, an
    all-zero vote vector yields nodata."""
    if (votes.votes < 0).any():
        raise ValueError("votes must be nonnegative")
    labels = (np.argmax(votes.votes, axis=2) + 1).astype(np.uint8)
    labels[votes.votes.sum(axis=2) == 0] = LABEL_NODATA
    return Raster(labels, 100.0, LABEL_NODATA)


def _window_stack(values):
    """(9, h, w) stack of the 3x3 neighborhood with NaN outside the image."""
    h, w = values.shape
    padded = np.full((h + 2, w + 2), np.nan)
    padded[1:-1, 1:-1] = values
    return np.stack(
        [padded[dy : dy + h, dx : dx + w] for dy in range(3) for dx in range(3)]
    )


def median_filter_3x3(label_map, mode="median"):
    """3x3 filter over label values, ignoring nodata neighbors.

    The default ordinal median takes the lower of the two middle values on
    even counts, keeping the output within the input label set; `mode="mode"`
    switches to the most frequent neighbor (lowest label on ties). Border
    pixels use the available neighborhood; nodata centers stay nodata.
    """
    if mode not in ("median", "mode"):
        raise ValueError(f"unknown filter mode {mode!r}")
    vals = label_map.values.astype(np.float64)
    vals[label_map.values == label_map.nodata] = np.nan
    stack = _window_stack(vals)
    counts = np.isfinite(stack).sum(axis=0)

    if mode == "median":
        ordered = np.sort(stack, axis=0)  # NaN sorts last
        pick = np.clip((counts - 1) // 2, 0, 8)
        out = np.take_along_axis(ordered, pick[None, :, :], axis=0)[0]
    else:
        h, w = vals.shape
        hist = np.zeros((N_LCZ_LABELS, h, w))
        for label in range(1, N_LCZ_LABELS + 1):
            hist[label - 1] = (stack == label).sum(axis=0)
        out = (np.argmax(hist, axis=0) + 1).astype(np.float64)

    out = np.where(counts > 0, out, LABEL_NODATA)
    out[~np.isfinite(vals)] = LABEL_NODATA  # nodata centers stay nodata
    return Raster(out.astype(np.uint8), label_map.pixel_size, LABEL_NODATA)


def majority_vote_fusion(maps):
    """Most frequent non-nodata label per pixel across acquisition maps.

    Ties take the lowest label; pixels nodata in every map stay nodata.
    """
    if not maps:
        raise ValueError("majority vote needs at least one map")
    shape = maps[0].shape
    for m in maps:
        if m.shape != shape:
            raise ValueError("label maps disagree in shape")
    hist = np.zeros((N_LCZ_LABELS,) + shape, dtype=np.int64)
    any_valid = np.zeros(shape, dtype=bool)
    for m in maps:
        v = m.values
        ok = v != m.nodata
        any_valid |= ok
        for label in np.unique(v[ok]):
            hist[label - 1] += (v == label) & ok
    out = (np.argmax(hist, axis=0) + 1).astype(np.uint8)
    out[~any_valid] = LABEL_NODATA
    return Raster(out, maps[0].pixel_size, LABEL_NODATA)


@dataclass
class ConfusionMatrix:
    """17x17 counts, rows = truth, columns = prediction."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.counts.shape != (N_LCZ_LABELS, N_LCZ_LABELS):
            raise ValueError("confusion matrix must be 17x17")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be nonnegative")

    @property
    def total(self):
        return float(self.counts.sum())

    @property
    def oa(self):
        return float(np.trace(self.counts)) / self.total

    @property
    def kappa(self):
        n = self.total
        pe = float((self.counts.sum(axis=1) * self.counts.sum(axis=0)).sum()) / (n * n)
        oa = self.oa
        if pe >= 1.0 - 1e-15:
            return 1.0 if oa >= 1.0 - 1e-15 else 0.0
        return (oa - pe) / (1.0 - pe)

    def producer_accuracy(self):
        """Per-class recall; NaN for classes absent from the truth."""
        row_sums = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            pa = np.diag(self.counts) / row_sums
        return pa

    def row_percentages(self):
        row_sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * self.counts / row_sums

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + [f"pred_{l}" for l in range(1, N_LCZ_LABELS + 1)])
            for l in range(N_LCZ_LABELS):
                writer.writerow([f"true_{l + 1}"] + [int(v) for v in self.counts[l]])

    def metrics_text(self):
        lines = [f"oa={self.oa:.6f}", f"kappa={self.kappa:.6f}"]
        pa = self.producer_accuracy()
        for l in range(N_LCZ_LABELS):
            value = "undefined" if np.isnan(pa[l]) else f"{pa[l]:.6f}"
            lines.append(f"pa_{l + 1}={value}")
        return "\n".join(lines) + "\n"


def evaluate(pred, truth):
    """Confusion matrix over pixels labeled in both maps."""
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth rasters disagree in shape")
    p = pred.values
    t = truth.values
    ok = (
        (p != pred.nodata)
        & (t != truth.nodata)
        & (p >= 1)
        & (p <= N_LCZ_LABELS)
        & (t >= 1)
        & (t <= N_LCZ_LABELS)
    )
    if not ok.any():
        raise ValueError("no overlapping labeled pixels")
    counts = np.zeros((N_LCZ_LABELS, N_LCZ_LABELS))
    np.add.at(counts, (t[ok].astype(int) - 1, p[ok].astype(int) - 1), 1.0)
    return ConfusionMatrix(counts)


def pa_distribution_text(cm, min_percent=10.0):
    """Row-normalized percentage table with small entries suppressed."""
    pct = cm.row_percentages()
    header = "true\\pred " + " ".join(f"{l:>5d}" for l in range(1, N_LCZ_LABELS + 1))
    lines = [header]
    for l in range(N_LCZ_LABELS):
        cells = []
        for c in range(N_LCZ_LABELS):
            v = pct[l, c]
            cells.append(f"{v:5.1f}" if np.isfinite(v) and v >= min_percent else "    .")
        lines.append(f"{l + 1:>9d} " + " ".join(cells))
    return "\n".join(lines) + "\n"


def write_palette(path):
    """Flat text palette: one `label r g b` line per label."""
    with open(path, "w") as fh:
        for label in range(1, N_LCZ_LABELS + 1):
            r, g, b = LABEL_PALETTE[label]
            fh.write(f"{label} {r} {g} {b}\n")


def save_map_ppm(label_map, path):
    """Render a label map to a binary PPM image using the flat palette;
    nodata pixels are white."""
    h, w = label_map.shape
    rgb = np.full((h, w, 3), 255, dtype=np.uint8)
    for label, color in LABEL_PALETTE.items():
        rgb[label_map.values == label] = color
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())
