"""Tests for IoU, efficiency, assignment statistics and run reports."""

import numpy as np
import pytest

from paser.errors import FormatError, ShapeError
from paser.metrics import (
    RunReport,
    assignment_confusion,
    dataset_iou,
    entropy_dist_compare,
    iou_per_gigaflop,
    marginal_assignment,
    mean_iou,
    patch_ious,
    read_report,
    tvd,
    write_report,
)


def make_report(**updates) -> RunReport:
    fields = {
        "method": "paser",
        "num_images": 4,
        "iou": 0.75,
        "flops": 123456789,
        "iou_per_gigaflop": 6.075,
        "mean_cost": 0.25,
        "lam": 0.5,
        "samples": 5,
        "assignment_counts": [40, 20, 4],
        "fraction_to_larger": 0.375,
    }
    return RunReport(**(fields | updates))


class TestIou:
    def test_half_overlap(self):
        pred = np.array([[1, 1], [0, 0]])
        gt = np.array([[1, 0], [0, 0]])
        # class 1: 1/2, class 0: 2/3
        assert mean_iou(pred, gt, 2) == pytest.approx((0.5 + 2 / 3) / 2)

    def test_perfect(self):
        labels = np.random.default_rng(0).integers(0, 3, (8, 8))
        assert mean_iou(labels, labels, 3) == 1.0

    def test_disjoint(self):
        assert mean_iou(np.zeros((4, 4), int), np.ones((4, 4), int), 2) == 0.0

    def test_absent_classes_are_skipped(self):
        labels = np.zeros((4, 4), int)
        assert mean_iou(labels, labels, 5) == 1.0

    def test_errors(self):
        with pytest.raises(ShapeError):
            mean_iou(np.zeros((2, 2), int), np.zeros((3, 3), int), 2)
        with pytest.raises(ValueError):
            mean_iou(np.full((2, 2), 2), np.zeros((2, 2), int), 2)

    def test_patch_ious(self):
        gt = np.zeros((1, 4, 4), int)
        pred = gt.copy()
        pred[0, 0, 0] = 1
        ious = patch_ious(pred, gt, 2, 4)
        assert ious.shape == (1, 4)
        # top-left patch: class 0 3/4, class 1 0/1
        assert ious[0, 0] == pytest.approx(0.375)
        np.testing.assert_array_equal(ious[0, 1:], 1.0)

    def test_dataset_iou(self):
        gt = np.zeros((2, 2, 2), int)
        pred = np.stack([gt[0], np.ones((2, 2), int)])
        assert dataset_iou(pred, gt, 2) == pytest.approx(0.5)
        with pytest.raises(ShapeError):
            dataset_iou(pred[:0], gt[:0], 2)


class TestEfficiency:
    @pytest.mark.parametrize(
        "iou,flops,expected,rel",
        [
            (0.7426, 1.51e11, 4.92e-3, 1e-3),
            (1.0, 1e9, 1.0, 1e-12),
            (0.8231, 6.51e12, 1.26e-4, 1e-2),
        ],
    )
    def test_iou_per_gigaflop(self, iou, flops, expected, rel):
        assert iou_per_gigaflop(iou, flops) == pytest.approx(expected, rel=rel)

    def test_zero_flops(self):
        with pytest.raises(ValueError):
            iou_per_gigaflop(0.5, 0)


class TestAssignment:
    def test_confusion(self):
        chosen = [np.array([0, 1, 2, 2])]
        reference = [np.array([0, 1, 1, 2])]
        confusion = assignment_confusion(chosen, reference, 3)
        assert confusion.matrix.tolist() == [[1, 0, 0], [0, 1, 1], [0, 0, 1]]
        assert confusion.accuracy == pytest.approx(0.75)

    def test_confusion_length_mismatch(self):
        with pytest.raises(ShapeError):
            assignment_confusion([np.zeros(3)], [np.zeros(3), np.zeros(3)], 2)

    def test_marginal(self):
        marginal = marginal_assignment(np.array([[0, 0, 1, 2]]), 3)
        np.testing.assert_allclose(marginal, [0.5, 0.25, 0.25])

    def test_tvd(self):
        assert tvd([1 / 3, 1 / 3, 1 / 3], [0.4, 0.3, 0.3]) == pytest.approx(0.0667, abs=1e-4)
        assert tvd([1.0, 0.0], [0.0, 1.0]) == 1.0
        assert tvd([0.2, 0.8], [0.2, 0.8]) == 0.0

    def test_tvd_errors(self):
        with pytest.raises(ShapeError):
            tvd([0.5, 0.5], [1.0])
        with pytest.raises(ValueError):
            tvd([0.5, 0.6], [0.5, 0.5])


class TestEntropyComparison:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=500)
        result = entropy_dist_compare(a, a.copy())
        assert result.equivalent
        assert result.gap == 0.0
        assert result.p_value == 1.0

    def test_shifted(self):
        gen = np.random.default_rng(1)
        result = entropy_dist_compare(gen.normal(0, 1, 500), gen.normal(5, 1, 500))
        assert not result.equivalent
        assert result.gap > 4
        assert result.p_value < 1e-6

    def test_empty(self):
        with pytest.raises(ValueError):
            entropy_dist_compare([], [1.0])


class TestReport:
    def test_written_files(self, tmp_path):
        report = make_report()
        path = write_report(report, tmp_path / "eval")
        assert path.name == "report.json"
        assert read_report(tmp_path / "eval") == report
        header, row = (tmp_path / "eval" / "report.csv").read_text().splitlines()
        assert header.startswith("method,num_images,iou,flops")
        assert row.startswith("paser,4,0.75,123456789")
        assert row.endswith("40 20 4")

    def test_optional_fields_blank_in_csv(self, tmp_path):
        write_report(make_report(lam=None, samples=None), tmp_path)
        row = (tmp_path / "report.csv").read_text().splitlines()[1].split(",")
        assert row[6] == "" and row[7] == ""

    def test_missing(self, tmp_path):
        with pytest.raises(FormatError, match="missing"):
            read_report(tmp_path)

    def test_malformed(self, tmp_path):
        (tmp_path / "report.json").write_text('{"method": "paser"}')
        with pytest.raises(FormatError):
            read_report(tmp_path)

    def test_flops_must_be_positive(self):
        with pytest.raises(ValueError):
            make_report(flops=0)
