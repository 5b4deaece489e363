import numpy as np
import pytest

from lczfuse.ccf import VotesCube
from lczfuse.postprocess import (
    ConfusionMatrix,
    argmax_map,
    evaluate,
    majority_vote_fusion,
    median_filter_3x3,
    pa_distribution_text,
    save_map_ppm,
    write_palette,
)
from lczfuse.raster import Raster


def label_raster(arr):
    return Raster(np.asarray(arr, dtype=np.uint8), 100.0, 255)


def cube(votes_array):
    v = np.asarray(votes_array, dtype=np.float64)
    return VotesCube(v, v.sum(axis=2) > 0)


class TestArgmax:
    def test_largest_vote_wins(self):
        v = np.zeros((1, 1, 17))
        v[0, 0, 7] = 12
        v[0, 0, 9] = 5
        assert argmax_map(cube(v)).values[0, 0] == 8

    def test_tie_takes_lowest_label(self):
        v = np.zeros((1, 1, 17))
        v[0, 0, 1] = 10
        v[0, 0, 5] = 10
        assert argmax_map(cube(v)).values[0, 0] == 2

    def test_zero_vector_is_nodata(self):
        v = np.zeros((1, 1, 17))
        assert argmax_map(cube(v)).values[0, 0] == 255

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(0)
        v = rng.random((5, 6, 17))
        base = argmax_map(cube(v))
        scaled = argmax_map(cube(v * 7.3))
        np.testing.assert_array_equal(base.values, scaled.values)

    def test_negative_votes_rejected(self):
        v = np.zeros((1, 1, 17))
        v[0, 0, 0] = -1
        with pytest.raises(ValueError):
            argmax_map(cube(v))


class TestMedianFilter:
    def test_constant_map_unchanged(self):
        m = label_raster(np.full((5, 5), 9))
        out = median_filter_3x3(m)
        np.testing.assert_array_equal(out.values, m.values)

    def test_isolated_pixel_replaced(self):
        arr = np.full((5, 5), 4)
        arr[2, 2] = 13
        out = median_filter_3x3(label_raster(arr))
        assert out.values[2, 2] == 4

    def test_sort_and_pick_oracle(self):
        arr = np.array([[2, 2, 2], [2, 6, 6], [6, 6, 6]])
        out = median_filter_3x3(label_raster(arr))
        # window holds {2,2,2,2,6,6,6,6,6}; the sorted middle is 6
        assert out.values[1, 1] == 6

    def test_even_count_takes_lower_middle(self):
        arr = np.array([[2, 2], [6, 6]])
        out = median_filter_3x3(label_raster(arr))
        # each corner window holds {2,2,6,6}: lower middle is 2
        assert out.values[0, 0] == 2

    def test_nodata_center_stays_nodata(self):
        arr = np.full((3, 3), 4)
        arr[1, 1] = 255
        out = median_filter_3x3(label_raster(arr))
        assert out.values[1, 1] == 255

    def test_nodata_neighbors_ignored(self):
        arr = np.full((3, 3), 255)
        arr[0, 0] = 7
        arr[0, 1] = 7
        out = median_filter_3x3(label_raster(arr))
        assert out.values[0, 0] == 7

    def test_label_set_closure(self):
        rng = np.random.default_rng(1)
        arr = rng.choice([3, 8, 12, 255], size=(20, 20), p=[0.4, 0.3, 0.2, 0.1])
        out = median_filter_3x3(label_raster(arr))
        in_set = set(np.unique(arr))
        assert set(np.unique(out.values)) <= in_set | {255}

    def test_mode_variant(self):
        arr = np.array([[2, 2, 2], [2, 9, 9], [9, 9, 9]])
        out = median_filter_3x3(label_raster(arr), mode="mode")
        assert out.values[1, 1] == 9


class TestMajorityVote:
    def test_majority(self):
        maps = [label_raster([[8]]), label_raster([[8]]), label_raster([[14]])]
        assert majority_vote_fusion(maps).values[0, 0] == 8

    def test_nodata_excluded(self):
        maps = [label_raster([[8]]), label_raster([[255]]), label_raster([[255]])]
        assert majority_vote_fusion(maps).values[0, 0] == 8

    def test_tie_takes_lowest(self):
        maps = [label_raster([[2]]), label_raster([[6]])]
        assert majority_vote_fusion(maps).values[0, 0] == 2

    def test_all_nodata(self):
        maps = [label_raster([[255]]), label_raster([[255]])]
        assert majority_vote_fusion(maps).values[0, 0] == 255

    def test_identity_on_identical_maps(self):
        rng = np.random.default_rng(2)
        arr = rng.integers(1, 18, (6, 7)).astype(np.uint8)
        m = label_raster(arr)
        out = majority_vote_fusion([m, m, m])
        np.testing.assert_array_equal(out.values, arr)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            majority_vote_fusion([label_raster([[1]]), label_raster([[1, 2]])])


class TestEvaluate:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(3)
        arr = rng.integers(1, 18, (10, 10)).astype(np.uint8)
        cm = evaluate(label_raster(arr), label_raster(arr))
        assert cm.oa == 1.0
        assert cm.kappa == 1.0

    def test_kappa_hand_case(self):
        # 2-class counts [[50,10],[5,35]] -> OA 0.85, pe 0.51, kappa 0.6939
        counts = np.zeros((17, 17))
        counts[0, 0], counts[0, 1] = 50, 10
        counts[1, 0], counts[1, 1] = 5, 35
        cm = ConfusionMatrix(counts)
        assert cm.oa == pytest.approx(0.85)
        assert cm.kappa == pytest.approx(0.6939, abs=1e-4)

    def test_constant_prediction_kappa_zero(self):
        truth = np.array([[1, 2]] * 10).astype(np.uint8)
        pred = np.ones_like(truth)
        cm = evaluate(label_raster(pred), label_raster(truth))
        assert cm.kappa == pytest.approx(0.0)

    def test_no_overlap_is_error(self):
        pred = label_raster([[255, 1]])
        truth = label_raster([[1, 255]])
        with pytest.raises(ValueError, match="no overlapping labeled pixels"):
            evaluate(pred, truth)

    def test_total_counts_jointly_defined(self):
        pred = label_raster([[1, 255], [3, 4]])
        truth = label_raster([[1, 2], [255, 4]])
        cm = evaluate(pred, truth)
        assert cm.total == 2

    def test_pa_undefined_for_absent_class(self):
        arr = np.full((4, 4), 3, dtype=np.uint8)
        cm = evaluate(label_raster(arr), label_raster(arr))
        pa = cm.producer_accuracy()
        assert pa[2] == 1.0
        assert np.isnan(pa[0])

    def test_kappa_at_most_oa_when_oa_above_chance(self):
        rng = np.random.default_rng(4)
        truth = rng.integers(1, 5, (20, 20)).astype(np.uint8)
        pred = truth.copy()
        flip = rng.random((20, 20)) < 0.2
        pred[flip] = rng.integers(1, 5, flip.sum()).astype(np.uint8)
        cm = evaluate(label_raster(pred), label_raster(truth))
        assert cm.kappa <= cm.oa + 1e-12


def test_pa_distribution_suppresses_small_cells():
    counts = np.zeros((17, 17))
    counts[0, 0] = 91
    counts[0, 1] = 9  # 9 % suppressed
    counts[1, 1] = 100
    text = pa_distribution_text(ConfusionMatrix(counts))
    lines = text.splitlines()
    assert "91.0" in lines[1]
    assert "9.0" not in lines[1]


def test_metrics_text_and_csv(tmp_path):
    arr = np.full((4, 4), 5, dtype=np.uint8)
    cm = evaluate(label_raster(arr), label_raster(arr))
    cm.to_csv(tmp_path / "cm.csv")
    text = cm.metrics_text()
    assert "oa=1.000000" in text
    assert "pa_5=1.000000" in text
    assert "pa_1=undefined" in text
    assert (tmp_path / "cm.csv").exists()


def test_palette_and_ppm(tmp_path):
    write_palette(tmp_path / "labels.pal")
    lines = (tmp_path / "labels.pal").read_text().splitlines()
    assert len(lines) == 17
    m = label_raster([[1, 255], [17, 8]])
    save_map_ppm(m, tmp_path / "map.ppm")
    data = (tmp_path / "map.ppm").read_bytes()
    assert data.startswith(b"P6\n2 2\n255\n")
    assert len(data) == len(b"P6\n2 2\n255\n") + 12
