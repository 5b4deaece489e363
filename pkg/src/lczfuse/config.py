"""Pipeline configuration: defaults, key=value file round-trip, validation.

A config snapshot is written into every artifact and run directory so results
are reproducible from the directory contents alone.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

FUSION_MODES = ("none", "landuse", "building", "both")


@dataclass
class PipelineConfig:
    n_trees: int = 20
    min_leaf: int = 1
    lambda_features: int | None = None
    gap: int = 5
    search_radius_px: int = 5
    surface_fraction_threshold: float = 0.10
    mask_binarize_threshold: float = 0.8
    glcm_levels: int = 32
    glcm_directions: tuple = (0, 45, 90, 135)
    glcm_offset: int = 1
    mp_radii: tuple = (4, 7, 10)
    laplace_alpha: float = 1.0
    seed: int = 0
    fusion_mode: str = "both"
    baseline_mode: bool = False

    def validate(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.lambda_features is not None and self.lambda_features < 1:
            raise ValueError("lambda_features must be >= 1")
        if self.gap < 1:
            raise ValueError("gap must be >= 1")
        if self.search_radius_px < 1:
            raise ValueError("search_radius_px must be >= 1")
        if not 0.0 <= self.surface_fraction_threshold <= 1.0:
            raise ValueError("surface_fraction_threshold must lie in [0, 1]")
        if not 0.0 <= self.mask_binarize_threshold <= 1.0:
            raise ValueError("mask_binarize_threshold must lie in [0, 1]")
        if self.glcm_levels < 2:
            raise ValueError("glcm_levels must be >= 2")
        if self.glcm_offset < 1:
            raise ValueError("glcm_offset must be >= 1")
        if any(r < 1 for r in self.mp_radii):
            raise ValueError("mp_radii must all be >= 1")
        if self.laplace_alpha < 0:
            raise ValueError("laplace_alpha must be >= 0")
        if self.fusion_mode not in FUSION_MODES:
            raise ValueError(f"fusion_mode must be one of {FUSION_MODES}")
        return self

    def to_file(self, path):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif value is None:
                value = ""
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name}={value}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path):
        raw = {}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"config {path}: malformed line {line!r}")
                key, value = line.split("=", 1)
                raw[key.strip()] = value.strip()
        return cls.from_mapping(raw).validate()

    @classmethod
    def from_mapping(cls, raw):
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, value in raw.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _parse(key, value)
        return cls(**kwargs)


def _parse(key, value):
    if isinstance(value, (int, float, bool, tuple, list, type(None))):
        return tuple(value) if isinstance(value, list) else value
    value = value.strip()
    if key in ("glcm_directions", "mp_radii"):
        return tuple(int(v) for v in value.split(",") if v != "")
    if key == "fusion_mode":
        return value
    if key == "baseline_mode":
        return value.lower() in ("true", "1", "yes")
    if key == "lambda_features":
        return int(value) if value else None
    if key in ("surface_fraction_threshold", "mask_binarize_threshold", "laplace_alpha"):
        return float(value)
    return int(value)
