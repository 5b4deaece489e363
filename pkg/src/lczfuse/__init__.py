"""Local climate zone classification by fusing satellite and OpenStreetMap features.

The package is organized around a small raster container (`raster`), per-patch
feature extraction (`features`), a canonical correlation forest classifier
(`ccf`), model-level OSM fusion (`fusion`), building-layer completeness
detection (`confidence`), map postprocessing and scoring (`postprocess`), a
synthetic scene generator (`synth`), and a CLI (`cli`) that wires the pieces
into train / classify / evaluate pipelines.
"""

__version__ = "0.1.0"

N_LCZ_LABELS = 17
LABEL_NODATA = 255
