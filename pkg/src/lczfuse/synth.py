"""Synthetic scene generator: the test substrate for the whole pipeline.

A scene spec (plain dict, JSON on disk) lists per-label patch counts and class
archetypes: a 10-band spectral vector, a landuse conditional table, a building
surface-fraction band, landuse coverage, and a building-point density. The
generator lays labels out in coherent blocks, paints 5 m landuse/building
layers statistically consistent with the labels, draws building centroids,
optionally punches incompleteness gaps into the building layer (recorded in a
sidecar), and renders per-acquisition 10 m band rasters with configurable
noise and spectral shifts. Everything is deterministic given the seed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import LABEL_NODATA
from .confidence import LCZ_BUILDING_FRACTION_BANDS
from .features import BandStack, BuildingPoints, save_building_points
from .manifest import SceneBundle
from .raster import Raster, write_raster

BAND_NAMES = [f"b{i:02d}" for i in range(1, 11)]
BAND_ROLES = {"blue": "b01", "green": "b02", "red": "b03", "nir": "b04", "swir": "b05"}

# Per-band direction of the acquisition-dependent spectral offset.
SHIFT_PATTERN = np.array([1.0, -0.8, 0.6, -1.0, 0.9, -0.7, 0.5, -0.9, 0.8, -0.6])

# 10-band reflectance archetypes (blue, green, red, nir, swir, then five
# derived bands). Neighboring built types and vegetation types are purposely
# close so spectral confusion is realistic.
DEFAULT_ARCHETYPES = {
    1: [0.13, 0.15, 0.17, 0.21, 0.27, 0.25, 0.22, 0.17, 0.19, 0.21],
    2: [0.12, 0.14, 0.16, 0.22, 0.30, 0.28, 0.24, 0.18, 0.21, 0.23],
    3: [0.13, 0.15, 0.18, 0.23, 0.31, 0.29, 0.25, 0.19, 0.22, 0.24],
    4: [0.10, 0.12, 0.13, 0.26, 0.25, 0.23, 0.19, 0.21, 0.17, 0.18],
    5: [0.10, 0.13, 0.14, 0.27, 0.26, 0.24, 0.20, 0.22, 0.18, 0.19],
    6: [0.11, 0.13, 0.15, 0.28, 0.27, 0.25, 0.21, 0.23, 0.19, 0.20],
    7: [0.14, 0.17, 0.20, 0.24, 0.33, 0.30, 0.27, 0.20, 0.24, 0.26],
    8: [0.16, 0.19, 0.22, 0.26, 0.34, 0.33, 0.29, 0.22, 0.27, 0.29],
    9: [0.09, 0.11, 0.12, 0.30, 0.24, 0.22, 0.17, 0.25, 0.16, 0.17],
    10: [0.15, 0.18, 0.21, 0.25, 0.35, 0.34, 0.30, 0.21, 0.28, 0.30],
    11: [0.04, 0.08, 0.05, 0.45, 0.15, 0.12, 0.09, 0.36, 0.10, 0.11],
    12: [0.05, 0.09, 0.07, 0.42, 0.17, 0.14, 0.11, 0.34, 0.12, 0.13],
    13: [0.06, 0.10, 0.09, 0.36, 0.20, 0.17, 0.13, 0.29, 0.14, 0.15],
    14: [0.05, 0.10, 0.08, 0.40, 0.19, 0.16, 0.12, 0.32, 0.13, 0.14],
    15: [0.18, 0.21, 0.24, 0.27, 0.32, 0.31, 0.28, 0.23, 0.26, 0.27],
    16: [0.17, 0.22, 0.26, 0.32, 0.38, 0.36, 0.31, 0.27, 0.30, 0.32],
    17: [0.07, 0.08, 0.06, 0.04, 0.03, 0.03, 0.02, 0.03, 0.04, 0.05],
}

# Landuse class ids: 1 forest, 2 park, 3 residential, 4 industrial, 5 farm,
# 6 meadow, 7 commercial, 8 retail, 9 grass, 10 scrub. Spectrally close label
# pairs (2/3, 4/5/6, 8/10, 11/12/14) get distinct primary classes so the map
# layers carry the information the spectra lack.
DEFAULT_LANDUSE_TABLES = {
    1: {3: 0.80, 7: 0.20},
    2: {3: 0.75, 7: 0.25},
    3: {8: 0.65, 3: 0.35},
    4: {7: 0.60, 3: 0.40},
    5: {2: 0.50, 3: 0.50},
    6: {3: 0.60, 5: 0.40},
    7: {3: 0.80, 8: 0.20},
    8: {7: 0.55, 8: 0.45},
    9: {3: 0.50, 5: 0.50},
    10: {4: 0.85, 8: 0.15},
    11: {1: 0.80, 2: 0.20},
    12: {1: 0.50, 2: 0.50},
    13: {10: 0.70, 6: 0.30},
    14: {6: 0.60, 9: 0.40},
    15: {9: 0.50, 10: 0.50},
    16: {5: 0.60, 9: 0.40},
    17: {2: 1.0},
}

DEFAULT_DENSITY = {
    1: (32, 2), 2: (28, 2), 3: (18, 2), 4: (14, 2), 5: (11, 2), 6: (8, 1),
    7: (36, 2), 8: (4, 1), 9: (2, 1), 10: (7, 1),
    11: (0, 0), 12: (0, 0), 13: (0, 0), 14: (0, 0), 15: (0, 0), 16: (0, 0),
    17: (0, 0),
}

BUILT_LABELS = set(range(1, 11))


def default_label_spec(label):
    """Archetype defaults for one label; built types hug buildings with their
    landuse region, landcover types carry near-full landuse coverage (water
    stays mostly unmapped)."""
    built = label in BUILT_LABELS
    lo, hi = LCZ_BUILDING_FRACTION_BANDS[label]
    return {
        "bands": list(DEFAULT_ARCHETYPES[label]),
        "landuse": {str(k): v for k, v in DEFAULT_LANDUSE_TABLES[label].items()},
        "fraction_band": [lo, hi] if built else [0.0, 1.0],
        "coverage": "hug" if built else (0.2 if label == 17 else 0.9),
        "density": list(DEFAULT_DENSITY[label]),
        "building_placement": "landuse" if built else "patch",
    }


def default_scene_spec(patch_counts, noise_sigma=0.02, acquisitions=None,
                       gaps=None, label_overrides=None):
    """Assemble a full scene spec dict from per-label patch counts."""
    labels = {}
    for label, count in patch_counts.items():
        label = int(label)
        spec = default_label_spec(label)
        spec["count"] = int(count)
        if label_overrides and label in label_overrides:
            spec.update(label_overrides[label])
        labels[str(label)] = spec
    return {
        "noise_sigma": noise_sigma,
        "layout_block": 4,
        "labels": labels,
        "acquisitions": acquisitions
        or [{"satellite": "L8", "date": "2014-01-01", "gain": 0.0, "offset": 0.0}],
        "gaps": gaps,
    }


def _layout_labels(spec, rng):
    """Coherent block layout with exact per-label counts; leftover grid cells
    get the nodata label."""
    counts = {int(l): s["count"] for l, s in spec["labels"].items()}
    total = sum(counts.values())
    if total <= 0:
        raise ValueError("scene spec lists zero patches")
    side = int(np.ceil(np.sqrt(total)))
    rows = cols = side
    block = max(1, int(spec.get("layout_block", 4)))

    multiset = np.concatenate(
        [np.full(c, l, dtype=np.int64) for l, c in sorted(counts.items())]
    )
    grid = np.full((rows, cols), LABEL_NODATA, dtype=np.int64)
    blocks = [
        (bi, bj)
        for bi in range(0, rows, block)
        for bj in range(0, cols, block)
    ]
    order = rng.permutation(len(blocks))
    pos = 0
    for b in order:
        bi, bj = blocks[b]
        for i in range(bi, min(bi + block, rows)):
            for j in range(bj, min(bj + block, cols)):
                if pos < total:
                    grid[i, j] = multiset[pos]
                    pos += 1
    return grid


def _rect_for_coverage(rng, coverage, k=20):
    """Sub-rectangle of a k x k patch with the requested area share."""
    coverage = min(max(coverage, 0.0), 1.0)
    if coverage <= 0:
        return None
    w = max(1, int(round(k * np.sqrt(coverage))))
    h = max(1, min(k, int(round(coverage * k * k / w))))
    w = min(w, k)
    r0 = int(rng.integers(0, k - h + 1))
    c0 = int(rng.integers(0, k - w + 1))
    return r0, c0, h, w


def generate_scene(spec, seed, scene_id="synthetic"):
    """Generate a SceneBundle from a scene spec dict, deterministically."""
    rng = np.random.default_rng((seed, 0))
    labels_grid = _layout_labels(spec, rng)
    rows, cols = labels_grid.shape
    k = 20  # 5 m pixels per 100 m patch edge

    landuse = np.zeros((rows * k, cols * k), dtype=np.uint8)
    building = np.zeros((rows * k, cols * k), dtype=np.uint8)
    points = []
    label_specs = {int(l): s for l, s in spec["labels"].items()}

    for i in range(rows):
        for j in range(cols):
            label = labels_grid[i, j]
            if label == LABEL_NODATA:
                continue
            ls = label_specs[label]
            lo, hi = ls["fraction_band"]
            fraction = float(rng.uniform(lo, hi)) / 100.0
            coverage = ls["coverage"]
            if coverage == "hug":
                coverage = min(fraction / 0.9, 1.0)
            table = {int(c): p for c, p in ls["landuse"].items()}
            class_ids = sorted(table)
            probs = np.array([table[c] for c in class_ids], dtype=np.float64)
            lu_class = int(rng.choice(class_ids, p=probs / probs.sum()))

            rect = _rect_for_coverage(rng, float(coverage))
            pr, pc = i * k, j * k
            if rect is not None:
                r0, c0, h, w = rect
                landuse[pr + r0 : pr + r0 + h, pc + c0 : pc + c0 + w] = lu_class

            placement = ls.get("building_placement", "landuse")
            if fraction > 0:
                if placement == "landuse" and rect is not None:
                    r0, c0, h, w = rect
                    area = h * w
                    p_local = min(fraction * k * k / area, 1.0)
                    block = rng.random((h, w)) < p_local
                    building[pr + r0 : pr + r0 + h, pc + c0 : pc + c0 + w] |= block
                else:
                    block = rng.random((k, k)) < fraction
                    building[pr : pr + k, pc : pc + k] |= block

            mean_d, sd_d = ls["density"]
            n_points = max(0, int(round(rng.normal(mean_d, sd_d)))) if mean_d > 0 else 0
            for _ in range(n_points):
                if placement == "landuse" and rect is not None:
                    r0, c0, h, w = rect
                    y = (i * k + r0 + rng.uniform(0, h)) * 5.0
                    x = (j * k + c0 + rng.uniform(0, w)) * 5.0
                else:
                    y = (i * k + rng.uniform(0, k)) * 5.0
                    x = (j * k + rng.uniform(0, k)) * 5.0
                points.append((x, y))

    gap_patches = []
    gaps = spec.get("gaps")
    if gaps:
        built_patches = [
            (i, j)
            for i in range(rows)
            for j in range(cols)
            if labels_grid[i, j] in BUILT_LABELS
        ]
        n_gaps = int(round(gaps["fraction_of_built"] * len(built_patches)))
        keep = float(gaps.get("keep_fraction", 0.0))
        chosen = rng.choice(len(built_patches), size=n_gaps, replace=False)
        for c in sorted(chosen):
            i, j = built_patches[c]
            gap_patches.append((i, j))
            sl = np.s_[i * k : (i + 1) * k, j * k : (j + 1) * k]
            retain = rng.random((k, k)) < keep
            building[sl] = building[sl] & retain
        if gap_patches:
            gap_set = set(gap_patches)
            points = [
                (x, y)
                for x, y in points
                if (int(y // 100), int(x // 100)) not in gap_set
            ]

    arch = np.zeros((256, 10))
    for label, ls in label_specs.items():
        arch[label] = ls["bands"]
    arch[LABEL_NODATA] = DEFAULT_ARCHETYPES[17]

    acquisitions = []
    kb = 10  # 10 m pixels per patch edge
    base = arch[labels_grid]  # (rows, cols, 10)
    for t, acq in enumerate(spec["acquisitions"]):
        rng_acq = np.random.default_rng((seed, 1, t))
        sigma = float(acq.get("noise_sigma", spec.get("noise_sigma", 0.02)))
        gain = float(acq.get("gain", 0.0))
        offset = float(acq.get("offset", 0.0))
        bands = {}
        for b, name in enumerate(BAND_NAMES):
            mean = base[:, :, b] * (1.0 + gain) + offset * SHIFT_PATTERN[b]
            pix = np.repeat(np.repeat(mean, kb, axis=0), kb, axis=1)
            pix = pix + rng_acq.normal(0.0, sigma, pix.shape)
            bands[name] = Raster(pix.astype(np.float32), 10.0)
        tag = f"{acq.get('satellite', 'L8')}_{acq.get('date', f'acq{t:02d}')}"
        acquisitions.append(BandStack(bands, tag, dict(BAND_ROLES)))

    labels_raster = Raster(
        np.where(labels_grid == LABEL_NODATA, LABEL_NODATA, labels_grid).astype(np.uint8),
        100.0,
        LABEL_NODATA,
    )
    return SceneBundle(
        scene_id=scene_id,
        acquisitions=acquisitions,
        landuse=Raster(landuse, 5.0, 255),
        building=Raster(building, 5.0, 255),
        points=BuildingPoints(np.array(points).reshape(-1, 2)),
        labels=labels_raster,
        gap_patches=gap_patches,
    )


def write_scene(bundle, spec, seed, out_dir):
    """Write a generated scene plus its manifest, sidecar, and spec snapshot."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "scene_id": bundle.scene_id,
        "acquisitions": [],
        "osm": {
            "landuse": "landuse.hdr",
            "building": "building.hdr",
            "building_points": "building_points.csv",
        },
        "labels": "labels.hdr",
        "truth_sidecar": "truth.json",
    }
    for t, stack in enumerate(bundle.acquisitions):
        acq_dir = f"acq{t:02d}"
        os.makedirs(os.path.join(out_dir, acq_dir), exist_ok=True)
        rel = {}
        for name, band in stack.bands.items():
            rel[name] = f"{acq_dir}/{name}.hdr"
            write_raster(band, os.path.join(out_dir, acq_dir, name))
        sat, _, date = stack.acquisition_id.partition("_")
        manifest["acquisitions"].append(
            {"satellite": sat, "date": date, "bands": rel, "band_roles": dict(stack.band_roles)}
        )
    write_raster(bundle.landuse, os.path.join(out_dir, "landuse"))
    write_raster(bundle.building, os.path.join(out_dir, "building"))
    write_raster(bundle.labels, os.path.join(out_dir, "labels"))
    save_building_points(bundle.points, os.path.join(out_dir, "building_points.csv"))
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump({"gap_patches": [list(p) for p in bundle.gap_patches or []]}, fh, indent=1)
    with open(os.path.join(out_dir, "spec.json"), "w") as fh:
        json.dump({"seed": seed, "spec": spec}, fh, indent=1)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return os.path.join(out_dir, "manifest.json")
