"""Scene manifests: which files make up a scene, and the loaded bundle."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .errors import DataError
from .features import BandStack, BuildingPoints, load_building_points
from .raster import Raster, read_raster


@dataclass
class SceneBundle:
    """A fully loaded scene: band stacks per acquisition plus OSM layers."""

    scene_id: str
    acquisitions: list  # of BandStack
    landuse: Raster | None  # 5 m, value 0 = unmapped
    building: Raster | None  # 5 m binary
    points: BuildingPoints | None
    labels: Raster | None  # 100 m, nodata 255
    gap_patches: list | None = None  # synthetic ground truth for masks

    def __post_init__(self):
        if not self.acquisitions:
            raise DataError(f"scene {self.scene_id} has no acquisitions")


def load_manifest(path):
    """Parse and load a scene manifest (JSON; paths relative to the file)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
    base = os.path.dirname(os.path.abspath(path))

    def resolve(rel):
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise DataError(f"manifest {path} references missing file {rel}")
        return full

    acquisitions = []
    for acq in doc.get("acquisitions", []):
        bands = {
            name: read_raster(resolve(rel)) for name, rel in acq["bands"].items()
        }
        tag = f"{acq.get('satellite', 'sat')}_{acq.get('date', 'undated')}"
        acquisitions.append(BandStack(bands, tag, dict(acq["band_roles"])))
    if not acquisitions:
        raise DataError(f"manifest {path} lists no acquisitions")

    osm = doc.get("osm", {})
    landuse = read_raster(resolve(osm["landuse"])) if "landuse" in osm else None
    building = read_raster(resolve(osm["building"])) if "building" in osm else None
    points = None
    if "building_points" in osm:
        width_m = acquisitions[0].shape[1] * acquisitions[0].pixel_size
        height_m = acquisitions[0].shape[0] * acquisitions[0].pixel_size
        points, _ = load_building_points(resolve(osm["building_points"]), width_m, height_m)
    labels = read_raster(resolve(doc["labels"])) if doc.get("labels") else None

    gap_patches = None
    if doc.get("truth_sidecar"):
        with open(resolve(doc["truth_sidecar"])) as fh:
            gap_patches = [tuple(p) for p in json.load(fh).get("gap_patches", [])]

    return SceneBundle(
        scene_id=doc.get("scene_id", os.path.basename(base) or "scene"),
        acquisitions=acquisitions,
        landuse=landuse,
        building=building,
        points=points,
        labels=labels,
        gap_patches=gap_patches,
    )
