import numpy as np
import pytest

from lczfuse.confidence import (
    BuildLanduseMatrix,
    build_confidence_mask,
    combine_and_binarize,
    local_search_confidence,
    quasi_truth_mask,
    surface_fraction_confidence,
    threshold_sensitivity,
    train_build_landuse_matrix,
)
from lczfuse.raster import PatchGrid, Raster


def as_lu(arr):
    return Raster(np.asarray(arr, dtype=np.uint8), 5.0, 255)


class TestBuildLanduseMatrix:
    def test_count_oracle(self):
        lu = np.full((10, 10), 3, dtype=np.uint8)
        build = np.zeros((10, 10), dtype=np.uint8)
        build.reshape(-1)[:80] = 1
        M = train_build_landuse_matrix([(as_lu(lu), as_lu(build))])
        assert M.p_build[list(M.class_ids).index(3)] == pytest.approx(0.8)

    def test_never_cooccurring_class(self):
        lu = np.full((4, 4), 6, dtype=np.uint8)
        build = np.zeros((4, 4), dtype=np.uint8)
        M = train_build_landuse_matrix([(as_lu(lu), as_lu(build))])
        assert M.p_build[0] == 0.0

    def test_probabilities_in_unit_interval(self):
        rng = np.random.default_rng(0)
        lu = rng.integers(0, 6, (30, 30)).astype(np.uint8)
        build = (rng.random((30, 30)) < 0.4).astype(np.uint8)
        M = train_build_landuse_matrix([(as_lu(lu), as_lu(build))])
        assert (M.p_build >= 0).all() and (M.p_build <= 1).all()
        assert 0 not in M.class_ids

    def test_merge_counts(self):
        a = BuildLanduseMatrix([1, 2], [4, 0], [10, 5])
        b = BuildLanduseMatrix([2, 3], [5, 1], [5, 2])
        m = a.merged_with(b)
        assert list(m.class_ids) == [1, 2, 3]
        assert m.p_build[1] == pytest.approx(5 / 10)

    def test_csv_roundtrip(self, tmp_path):
        a = BuildLanduseMatrix([1, 4], [4, 7], [10, 14])
        a.to_csv(tmp_path / "m.csv")
        back = BuildLanduseMatrix.from_csv(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.class_ids, a.class_ids)
        np.testing.assert_allclose(back.p_build, a.p_build)


class TestLocalSearch:
    def matrix(self, p=0.9, cid=2):
        return BuildLanduseMatrix([cid], [p * 100], [100])

    def test_building_within_radius(self):
        lu = np.full((12, 12), 2, dtype=np.uint8)
        build = np.zeros((12, 12), dtype=np.uint8)
        build[5, 8] = 1  # 3 px from (5, 5)
        out = local_search_confidence(as_lu(lu), as_lu(build), self.matrix())
        assert out.values[5, 5] == pytest.approx(0.9)

    def test_no_building_within_radius(self):
        lu = np.full((20, 20), 2, dtype=np.uint8)
        build = np.zeros((20, 20), dtype=np.uint8)
        build[0, 19] = 1
        out = local_search_confidence(as_lu(lu), as_lu(build), self.matrix())
        assert out.values[19, 0] == pytest.approx(-0.9)

    def test_zero_probability_class(self):
        lu = np.full((8, 8), 7, dtype=np.uint8)
        build = np.ones((8, 8), dtype=np.uint8)
        M = BuildLanduseMatrix([7], [0], [50])
        out = local_search_confidence(as_lu(lu), as_lu(build), M)
        np.testing.assert_allclose(out.values, 0.0, atol=0)

    def test_landuse_zero_is_nodata(self):
        lu = np.zeros((6, 6), dtype=np.uint8)
        out = local_search_confidence(as_lu(lu), as_lu(lu), self.matrix())
        assert np.isnan(out.values).all()

    def test_chebyshev_radius_exact(self):
        lu = np.full((21, 21), 2, dtype=np.uint8)
        build = np.zeros((21, 21), dtype=np.uint8)
        build[10 + 5, 10 + 5] = 1  # corner of the 11x11 window
        out = local_search_confidence(as_lu(lu), as_lu(build), self.matrix())
        assert out.values[10, 10] == pytest.approx(0.9)
        build2 = np.zeros((21, 21), dtype=np.uint8)
        build2[10 + 6, 10] = 1  # one row outside
        out2 = local_search_confidence(as_lu(lu), as_lu(build2), self.matrix())
        assert out2.values[10, 10] == pytest.approx(-0.9)

    def test_range_invariant(self):
        rng = np.random.default_rng(1)
        lu = rng.integers(0, 4, (40, 40)).astype(np.uint8)
        build = (rng.random((40, 40)) < 0.2).astype(np.uint8)
        M = train_build_landuse_matrix([(as_lu(lu), as_lu(build))])
        out = local_search_confidence(as_lu(lu), as_lu(build), M)
        finite = out.values[np.isfinite(out.values)]
        assert (finite >= -1).all() and (finite <= 1).all()


class TestSurfaceFraction:
    def test_above_threshold(self):
        build = np.zeros((20, 20), dtype=np.uint8)
        build.reshape(-1)[:45] = 1  # 11.25 %
        grid = PatchGrid(1, 1, 5.0)
        out = surface_fraction_confidence(as_lu(build), grid)
        assert out.values[0, 0] == 1

    def test_exactly_threshold_is_zero(self):
        build = np.zeros((20, 20), dtype=np.uint8)
        build.reshape(-1)[:40] = 1  # exactly 10 %
        grid = PatchGrid(1, 1, 5.0)
        out = surface_fraction_confidence(as_lu(build), grid)
        assert out.values[0, 0] == 0

    def test_empty_patch(self):
        grid = PatchGrid(1, 1, 5.0)
        out = surface_fraction_confidence(as_lu(np.zeros((20, 20))), grid)
        assert out.values[0, 0] == 0


class TestCombine:
    def test_landuse_gap_with_positive_fraction(self):
        lu = as_lu(np.zeros((20, 20)))
        conf_p1 = Raster(np.full((20, 20), np.nan, dtype=np.float32), 5.0)
        conf_p2 = Raster(np.ones((1, 1), dtype=np.uint8), 100.0, 255)
        mask = combine_and_binarize(conf_p1, conf_p2, lu)
        assert mask.values[0, 0] == 1

    def test_confident_residential_patch(self):
        lu = as_lu(np.full((20, 20), 2))
        conf_p1 = Raster(np.full((20, 20), 0.9, dtype=np.float32), 5.0)
        conf_p2 = Raster(np.zeros((1, 1), dtype=np.uint8), 100.0, 255)
        mask = combine_and_binarize(conf_p1, conf_p2, lu)
        assert mask.values[0, 0] == 1

    def test_failed_search_residential_patch(self):
        lu = as_lu(np.full((20, 20), 2))
        conf_p1 = Raster(np.full((20, 20), -0.9, dtype=np.float32), 5.0)
        conf_p2 = Raster(np.zeros((1, 1), dtype=np.uint8), 100.0, 255)
        mask = combine_and_binarize(conf_p1, conf_p2, lu)
        assert mask.values[0, 0] == 0

    def test_gap_rule_zero_when_both_missing(self):
        lu = as_lu(np.zeros((20, 20)))
        conf_p1 = Raster(np.full((20, 20), np.nan, dtype=np.float32), 5.0)
        conf_p2 = Raster(np.zeros((1, 1), dtype=np.uint8), 100.0, 255)
        mask = combine_and_binarize(conf_p1, conf_p2, lu)
        assert mask.values[0, 0] == 0


def synthetic_confidence_scene(rng, n_patches=6, p_build=0.9, with_buildings=True):
    """Residential-style patches: landuse id 2 everywhere, Bernoulli buildings."""
    size = n_patches * 20
    lu = np.full((size, size), 2, dtype=np.uint8)
    build = (rng.random((size, size)) < (0.45 if with_buildings else 0.0)).astype(np.uint8)
    return as_lu(lu), as_lu(build)


class TestMaskPipeline:
    def test_complete_scene_confident_on_built_patches(self):
        rng = np.random.default_rng(3)
        lu, build = synthetic_confidence_scene(rng)
        M = BuildLanduseMatrix([2], [90], [100])
        mask = build_confidence_mask(lu, build, M)
        assert (mask.values == 1).all()

    def test_monotone_in_buildings(self):
        # adding building pixels never flips a mask pixel 1 -> 0
        rng = np.random.default_rng(4)
        size = 80
        lu = np.full((size, size), 2, dtype=np.uint8)
        lu[rng.random((size, size)) < 0.3] = 0
        base = (rng.random((size, size)) < 0.15).astype(np.uint8)
        extra = base.copy()
        extra[rng.random((size, size)) < 0.2] = 1
        M = BuildLanduseMatrix([2], [85], [100])
        m1 = build_confidence_mask(as_lu(lu), as_lu(base), M)
        m2 = build_confidence_mask(as_lu(lu), as_lu(extra), M)
        assert not ((m1.values == 1) & (m2.values == 0)).any()

    def test_value_sets(self):
        rng = np.random.default_rng(5)
        lu, build = synthetic_confidence_scene(rng)
        M = BuildLanduseMatrix([2], [70], [100])
        conf_p1 = local_search_confidence(lu, build, M)
        finite = conf_p1.values[np.isfinite(conf_p1.values)]
        np.testing.assert_allclose(np.abs(finite), 0.7, atol=1e-6)
        grid = PatchGrid(6, 6, 5.0)
        conf_p2 = surface_fraction_confidence(build, grid)
        assert set(np.unique(conf_p2.values)) <= {0, 1}
        mask = build_confidence_mask(lu, build, M)
        assert set(np.unique(mask.values)) <= {0, 1}


class TestThresholdSensitivity:
    def scene_all_zero_landuse(self, rng, patches=4):
        """Every patch: landuse unmapped, one building pixel, so the t=0 mask
        is all-pass exactly. Landcover labels keep the tiny observed fractions
        consistent with their standard bands."""
        size = patches * 20
        lu = np.zeros((size, size), dtype=np.uint8)
        lu[0, 0] = 1  # keep the build-landuse matrix trainable
        build = np.zeros((size, size), dtype=np.uint8)
        for i in range(patches):
            for j in range(patches):
                build[i * 20 + 10, j * 20 + 10] = 1
        labels = rng.integers(14, 17, (patches, patches)).astype(np.uint8)
        density = rng.integers(0, 12, (patches, patches)).astype(np.float32)
        return {
            "landuse": as_lu(lu),
            "building": as_lu(build),
            "density": Raster(density, 100.0),
            "labels": Raster(labels, 100.0, 255),
        }

    def test_all_pass_correlation_is_one_at_permissive_threshold(self):
        rng = np.random.default_rng(6)
        scene = self.scene_all_zero_landuse(rng)
        rows, extras = threshold_sensitivity([scene], thresholds=[0.0])
        t, corr_l, corr_m = rows[0]
        assert t == 0
        assert corr_m == pytest.approx(1.0)

    def test_quasi_truth_self_correlation_is_one(self):
        # make the proposed mask at t=0 coincide with the quasi-truth mask by
        # keeping every observed fraction consistent with its label band
        rng = np.random.default_rng(7)
        patches = 4
        size = patches * 20
        lu = np.zeros((size, size), dtype=np.uint8)
        lu[0, 0] = 1
        build = np.zeros((size, size), dtype=np.uint8)
        labels = np.full((patches, patches), 2, dtype=np.uint8)  # band 40-70 %
        for i in range(patches):
            for j in range(patches):
                block = (rng.random((20, 20)) < 0.55).astype(np.uint8)
                build[i * 20 : (i + 1) * 20, j * 20 : (j + 1) * 20] = block
        density = rng.integers(20, 30, (patches, patches)).astype(np.float32)
        scene = {
            "landuse": as_lu(lu),
            "building": as_lu(build),
            "density": Raster(density, 100.0),
            "labels": Raster(labels, 100.0, 255),
        }
        rows, extras = threshold_sensitivity([scene], thresholds=[0.10])
        _, corr_l, _ = rows[0]
        assert corr_l == pytest.approx(1.0)

    def test_eleven_rows(self):
        rng = np.random.default_rng(8)
        scene = self.scene_all_zero_landuse(rng)
        rows, _ = threshold_sensitivity([scene])
        assert len(rows) == 11
        assert [r[0] for r in rows] == list(range(0, 101, 10))


def test_quasi_truth_mask_bands():
    build = np.zeros((40, 20), dtype=np.uint8)
    build[:20][np.unravel_index(np.arange(200), (20, 20))] = 1  # 50 % in patch 0
    grid = PatchGrid(2, 1, 5.0)
    labels = Raster(np.array([[2], [2]], dtype=np.uint8), 100.0, 255)
    mask = quasi_truth_mask(as_lu(build), labels, grid)
    assert mask.values[0, 0] == 1  # 50 % within (40, 70)
    assert mask.values[1, 0] == 0  # 0 % outside
