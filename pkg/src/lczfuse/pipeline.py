"""End-to-end orchestration: training artifacts, scene classification,
importance ranking, and the mask threshold-sensitivity analysis.

The classifier is trained once over all acquisitions of all training scenes
(features share names across satellites); the two weight matrices and the
building-landuse co-occurrence counts are trained per scene and pooled. At
classification time each acquisition runs features -> votes -> optional
landuse and building weighting -> argmax -> median filter, and the
per-acquisition maps are fused by majority vote.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .ccf import CCFParams, load_model, predict_votes, save_model, train_ccf
from .confidence import (
    BuildLanduseMatrix,
    build_confidence_mask,
    threshold_sensitivity,
    train_build_landuse_matrix,
)
from .config import PipelineConfig
from .errors import DataError
from .features import FeatureTable, assemble_features, building_density
from .fusion import (
    DensityRanges,
    WeightMatrix,
    apply_building_fusion,
    apply_landuse_fusion,
    build_density_ranges,
    train_building_matrix,
    train_landuse_matrix,
)
from .postprocess import argmax_map, majority_vote_fusion, median_filter_3x3
from .raster import PatchGrid, Raster

MODEL_FILE = "ccf_model.txt"
LU_FILE = "lu_weights.csv"
BU_FILE = "bu_weights.csv"
BLM_FILE = "build_landuse.csv"
CONFIG_FILE = "config.cfg"


@dataclass
class TrainedArtifacts:
    model: object
    config: PipelineConfig
    lu_matrix: WeightMatrix | None = None
    bu_matrix: WeightMatrix | None = None
    ranges: DensityRanges | None = None
    build_landuse: BuildLanduseMatrix | None = None

    def save(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        written = []
        save_model(self.model, os.path.join(out_dir, MODEL_FILE))
        written.append(MODEL_FILE)
        if self.lu_matrix is not None:
            self.lu_matrix.to_csv(os.path.join(out_dir, LU_FILE))
            written.append(LU_FILE)
        if self.bu_matrix is not None:
            self.bu_matrix.to_csv(
                os.path.join(out_dir, BU_FILE), header_comment=self.ranges.header_comment()
            )
            written.append(BU_FILE)
        if self.build_landuse is not None:
            self.build_landuse.to_csv(os.path.join(out_dir, BLM_FILE))
            written.append(BLM_FILE)
        self.config.to_file(os.path.join(out_dir, CONFIG_FILE))
        written.append(CONFIG_FILE)
        with open(os.path.join(out_dir, "MANIFEST.txt"), "w") as fh:
            fh.write("\n".join(written) + "\n")
        return written

    @classmethod
    def load(cls, art_dir):
        config = PipelineConfig.from_file(os.path.join(art_dir, CONFIG_FILE))
        model = load_model(os.path.join(art_dir, MODEL_FILE))
        lu = bu = ranges = blm = None
        lu_path = os.path.join(art_dir, LU_FILE)
        if os.path.exists(lu_path):
            lu = WeightMatrix.from_csv(lu_path, alpha=config.laplace_alpha)
        bu_path = os.path.join(art_dir, BU_FILE)
        if os.path.exists(bu_path):
            bu = WeightMatrix.from_csv(bu_path, alpha=config.laplace_alpha)
            ranges = DensityRanges.from_header_comment(bu._header_comment)
        blm_path = os.path.join(art_dir, BLM_FILE)
        if os.path.exists(blm_path):
            blm = BuildLanduseMatrix.from_csv(blm_path)
        return cls(model, config, lu, bu, ranges, blm)


def scene_grid(scene, patch_size_m=100.0):
    """Patch grid implied by the scene's first acquisition (cropped)."""
    stack = scene.acquisitions[0]
    k = int(round(patch_size_m / stack.pixel_size))
    return stack.shape[0] // k, stack.shape[1] // k


def _crop(raster, rows, cols, patch_size_m=100.0):
    k = int(round(patch_size_m / raster.pixel_size))
    if raster.height < rows * k or raster.width < cols * k:
        raise DataError(
            f"raster of {raster.height}x{raster.width} px at {raster.pixel_size} m "
            f"does not cover the {rows}x{cols} patch grid"
        )
    return Raster(raster.values[: rows * k, : cols * k], raster.pixel_size, raster.nodata)


def scene_layers(scene, rows, cols):
    """Cropped landuse/building/labels layers aligned to the patch grid."""
    landuse = _crop(scene.landuse, rows, cols) if scene.landuse is not None else None
    building = _crop(scene.building, rows, cols) if scene.building is not None else None
    labels = _crop(scene.labels, rows, cols) if scene.labels is not None else None
    return landuse, building, labels


def acquisition_tables(scene, config, mode=None):
    """One feature table per acquisition, labels attached when present."""
    rows, cols = scene_grid(scene)
    _, _, labels = scene_layers(scene, rows, cols)
    mode = mode or ("stacked_baseline" if config.baseline_mode else "satellite_only")
    osm = None
    if mode == "stacked_baseline":
        landuse, building, _ = scene_layers(scene, rows, cols)
        if landuse is None or building is None or scene.points is None:
            raise DataError(
                f"scene {scene.scene_id}: baseline mode needs landuse, building, and points"
            )
        osm = {"landuse": landuse, "building": building}
    tables = []
    for stack in scene.acquisitions:
        tables.append(
            assemble_features(
                stack,
                osm=osm,
                points=scene.points,
                mode=mode,
                labels=labels,
                mp_radii=config.mp_radii,
                glcm_levels=config.glcm_levels,
                glcm_directions=config.glcm_directions,
                glcm_offset=config.glcm_offset,
            )
        )
    return tables


def _concat_tables(tables):
    first = tables[0]
    rows = np.concatenate([t.rows for t in tables])
    coords = np.concatenate([t.patch_coords for t in tables])
    labels = None
    if all(t.labels is not None for t in tables):
        labels = np.concatenate([t.labels for t in tables])
    return FeatureTable(first.feature_names, rows, coords, labels)


def _ccf_params(config):
    return CCFParams(
        n_trees=config.n_trees,
        min_leaf=config.min_leaf,
        lambda_features=config.lambda_features,
        seed=config.seed,
    )


def scene_density(scene, rows, cols):
    grid = PatchGrid(rows, cols, 5.0)
    return building_density(scene.points, grid)


def train_artifacts(scenes, config):
    """Train the classifier and, per fusion mode, the weighting models."""
    config.validate()
    for scene in scenes:
        if scene.labels is None:
            raise DataError(f"training scene {scene.scene_id} carries no labels")

    tables = []
    for scene in scenes:
        tables.extend(acquisition_tables(scene, config))
    table = _concat_tables(tables)
    model = train_ccf(table, _ccf_params(config))

    want_landuse = config.fusion_mode in ("landuse", "both") and not config.baseline_mode
    want_building = config.fusion_mode in ("building", "both") and not config.baseline_mode
    lu = bu = ranges = blm = None

    if want_landuse or want_building:
        for scene in scenes:
            if scene.landuse is None or scene.building is None:
                raise DataError(
                    f"scene {scene.scene_id}: fusion mode {config.fusion_mode!r} "
                    "needs OSM landuse and building layers"
                )

    if want_landuse:
        pairs = []
        for scene in scenes:
            rows, cols = scene_grid(scene)
            landuse, _, labels = scene_layers(scene, rows, cols)
            pairs.append((landuse, labels))
        lu = train_landuse_matrix(pairs, alpha=config.laplace_alpha)

    if want_building:
        blm = train_build_landuse_matrix(
            [scene_layers(s, *scene_grid(s))[:2] for s in scenes]
        )
        densities, labelses, masks = [], [], []
        bn_max = 0
        for scene in scenes:
            rows, cols = scene_grid(scene)
            landuse, building, labels = scene_layers(scene, rows, cols)
            density = scene_density(scene, rows, cols)
            mask = build_confidence_mask(
                landuse,
                building,
                blm,
                radius_px=config.search_radius_px,
                surface_fraction_threshold=config.surface_fraction_threshold,
                binarize_threshold=config.mask_binarize_threshold,
            )
            labeled = labels.values != labels.nodata
            if labeled.any():
                bn_max = max(bn_max, int(density.values[labeled].max()))
            densities.append(density)
            labelses.append(labels)
            masks.append(mask)
        ranges = build_density_ranges(bn_max, config.gap)
        bu = train_building_matrix(densities, labelses, ranges, masks, config.laplace_alpha)

    return TrainedArtifacts(model, config, lu, bu, ranges, blm)


@dataclass
class ClassifyResult:
    final_map: Raster
    acquisition_maps: list
    mask: Raster | None
    report: dict


def classify_scene(scene, artifacts, config=None):
    """Run the framework (or the baseline) on one scene."""
    config = (config or artifacts.config).validate()
    rows, cols = scene_grid(scene)
    landuse, building, _ = scene_layers(scene, rows, cols)

    use_landuse = (
        config.fusion_mode in ("landuse", "both")
        and not config.baseline_mode
        and artifacts.lu_matrix is not None
    )
    use_building = (
        config.fusion_mode in ("building", "both")
        and not config.baseline_mode
        and artifacts.bu_matrix is not None
    )
    if config.fusion_mode in ("landuse", "both") and not config.baseline_mode:
        if artifacts.lu_matrix is None:
            raise DataError("artifacts carry no landuse weight matrix for this fusion mode")
        if landuse is None:
            raise DataError(f"scene {scene.scene_id} has no landuse layer")
    if config.fusion_mode in ("building", "both") and not config.baseline_mode:
        if artifacts.bu_matrix is None:
            raise DataError("artifacts carry no building weight matrix for this fusion mode")
        if building is None or landuse is None or scene.points is None:
            raise DataError(f"scene {scene.scene_id} lacks OSM layers for building fusion")

    mask = None
    density = None
    if use_building:
        # the co-occurrence matrix may merge in the test scene's own layers,
        # which need no ground truth
        blm = artifacts.build_landuse
        scene_blm = train_build_landuse_matrix([(landuse, building)])
        blm = blm.merged_with(scene_blm) if blm is not None else scene_blm
        mask = build_confidence_mask(
            landuse,
            building,
            blm,
            radius_px=config.search_radius_px,
            surface_fraction_threshold=config.surface_fraction_threshold,
            binarize_threshold=config.mask_binarize_threshold,
        )
        density = scene_density(scene, rows, cols)

    tables = acquisition_tables(scene, config)
    maps = []
    timings = []
    unclassified = []
    for stack, table in zip(scene.acquisitions, tables):
        t0 = time.perf_counter()
        votes = predict_votes(artifacts.model, table, (rows, cols))
        if use_landuse:
            votes = apply_landuse_fusion(votes, landuse, artifacts.lu_matrix)
        if use_building:
            votes = apply_building_fusion(
                votes, density, artifacts.bu_matrix, artifacts.ranges, mask
            )
        label_map = median_filter_3x3(argmax_map(votes))
        maps.append((stack.acquisition_id, label_map))
        unclassified.append(float((~votes.classified).mean()))
        timings.append(time.perf_counter() - t0)

    final = majority_vote_fusion([m for _, m in maps])
    report = {
        "scene_id": scene.scene_id,
        "n_acquisitions": len(maps),
        "fusion_mode": "baseline" if config.baseline_mode else config.fusion_mode,
        "masked_patch_fraction": float((mask.values == 0).mean()) if mask is not None else None,
        "unclassified_fraction": float(np.mean(unclassified)),
        "acquisition_seconds": [round(t, 3) for t in timings],
    }
    return ClassifyResult(final, maps, mask, report)


def importance_run(scenes, config, folds=5):
    """Permutation importance over the stacked (baseline) feature set."""
    from .ccf import feature_importance

    tables = []
    for scene in scenes:
        if scene.labels is None:
            raise DataError(f"scene {scene.scene_id} carries no labels")
        tables.extend(acquisition_tables(scene, config, mode="stacked_baseline"))
    table = _concat_tables(tables)
    return feature_importance(table, _ccf_params(config), folds=folds, seed=config.seed)


def mask_sensitivity_run(scenes, config, thresholds=None):
    """Threshold-sensitivity curves over the training scenes."""
    packs = []
    for scene in scenes:
        if scene.labels is None:
            raise DataError(f"scene {scene.scene_id} carries no labels")
        rows, cols = scene_grid(scene)
        landuse, building, labels = scene_layers(scene, rows, cols)
        if landuse is None or building is None or scene.points is None:
            raise DataError(f"scene {scene.scene_id} lacks OSM layers")
        packs.append(
            {
                "landuse": landuse,
                "building": building,
                "density": scene_density(scene, rows, cols),
                "labels": labels,
            }
        )
    return threshold_sensitivity(
        packs,
        thresholds=thresholds,
        gap=config.gap,
        radius_px=config.search_radius_px,
        binarize_threshold=config.mask_binarize_threshold,
    )
