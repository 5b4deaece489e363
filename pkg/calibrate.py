"""Scratch calibration for acceptance-scale synthetic experiments (not shipped)."""
import sys
import time

import numpy as np

from lczfuse.config import PipelineConfig
from lczfuse.pipeline import classify_scene, scene_grid, scene_layers, train_artifacts
from lczfuse.postprocess import evaluate
from lczfuse.synth import default_scene_spec, generate_scene

COUNTS = {2: 300, 3: 300, 6: 250, 8: 250, 10: 250, 11: 250, 14: 250, 17: 250}


def city_pair(seed, noise=0.025, gain=0.07, offset=0.02):
    train_spec = default_scene_spec(COUNTS, noise_sigma=noise)
    test_spec = default_scene_spec(
        COUNTS,
        noise_sigma=noise,
        acquisitions=[{"satellite": "L8", "date": "t", "gain": gain, "offset": offset}],
    )
    train = generate_scene(train_spec, seed=(seed * 1000 + 1), scene_id="train")
    test = generate_scene(test_spec, seed=(seed * 1000 + 2), scene_id="test")
    return train, test


def oa_of(result, scene):
    rows, cols = scene_grid(scene)
    _, _, labels = scene_layers(scene, rows, cols)
    return evaluate(result.final_map, labels).oa


def run(seed):
    t0 = time.perf_counter()
    train, test = city_pair(seed)
    oas = {}
    art_prop = train_artifacts([train], PipelineConfig(fusion_mode="both", seed=seed))
    art_base = train_artifacts(
        [train], PipelineConfig(fusion_mode="none", baseline_mode=True, seed=seed)
    )
    oas["baseline"] = oa_of(
        classify_scene(test, art_base, PipelineConfig(fusion_mode="none", baseline_mode=True, seed=seed)),
        test,
    )
    for tag, fusion in [("ccf_only", "none"), ("landuse", "landuse"),
                        ("building", "building"), ("both", "both")]:
        cfg = PipelineConfig(fusion_mode=fusion, seed=seed)
        oas[tag] = oa_of(classify_scene(test, art_prop, cfg), test)
    print(f"seed={seed} " + " ".join(f"{k}={v:.3f}" for k, v in oas.items()),
          f"({time.perf_counter() - t0:.1f}s)", flush=True)
    return oas


if __name__ == "__main__":
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 3
    allo = [run(seed) for seed in range(n)]
    keys = allo[0].keys()
    print("MEAN " + " ".join(f"{k}={np.mean([o[k] for o in allo]):.3f}" for k in keys))
    both = np.array([o["both"] for o in allo])
    single_max = np.array([max(o["landuse"], o["building"]) for o in allo])
    print("per-seed both >= max(single)-0.01:", (both >= single_max - 0.01).all())
    print("mean gain over baseline (pts):", 100 * (both.mean() - np.mean([o['baseline'] for o in allo])))
    print("ccf_only range:", min(o["ccf_only"] for o in allo), max(o["ccf_only"] for o in allo))
