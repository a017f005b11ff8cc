import math

import numpy as np
import pytest

from CrowdKit.errors import EmptyDataset, LengthMismatch
from CrowdKit.metrics import compute_metrics, throughput_summary


def test_two_images():
    report = compute_metrics([10, 20], [0, 0])

    assert report.mae == 15.0
    assert report.mse == pytest.approx(math.sqrt(250))
    assert report.per_image[1] == {"id": 1, "E": 20, "C": 0, "abs_err": 20}


def test_single_image():
    report = compute_metrics([120], [100], ids=["a.jpg"])

    assert report.mae == report.mse == 20.0
    assert report.per_image == [{"id": "a.jpg", "E": 120, "C": 100, "abs_err": 20}]


def test_perfect_predictions():
    report = compute_metrics([5, 0, 7.5], [5, 0, 7.5])

    assert report.mae == report.mse == 0.0


def test_against_brute_force():
    rng = np.random.default_rng(0)

    for _ in range(1000):
        n = int(rng.integers(1, 50))
        preds = rng.integers(0, 2000, size=n)
        gts = rng.uniform(0, 2000, size=n)

        report = compute_metrics(preds, gts)

        errors = [abs(float(e) - float(c)) for e, c in zip(preds, gts)]
        assert report.mae == pytest.approx(sum(errors) / n, abs=1e-9)
        assert report.mse == pytest.approx(math.sqrt(sum(e * e for e in errors) / n), abs=1e-9)
        assert report.mse >= report.mae - 1e-9


def test_input_validation():
    with pytest.raises(LengthMismatch):
        compute_metrics([1, 2], [1])
    with pytest.raises(LengthMismatch):
        compute_metrics([1, 2], [1, 2], ids=["a"])
    with pytest.raises(EmptyDataset):
        compute_metrics([], [])


def test_worst_images():
    report = compute_metrics([10, 50, 0, 3], [10, 0, 20, 0], ids=list("abcd"))

    assert [r["id"] for r in report.worst(2)] == ["b", "c"]
    assert len(report.worst(10)) == 4


def test_report_dict_leaves_out_throughput():
    report = compute_metrics([1], [2])
    report.throughput_fps = throughput_summary([2.0, 4.0])

    assert "throughput_fps" not in report.to_dict()
    assert report.to_dict(include_throughput=True)["throughput_fps"] == {"min": 2.0, "max": 4.0, "mean": 3.0}


def test_throughput_ignores_infinite_rates():
    assert throughput_summary([1.0, float("inf")]) == {"min": 1.0, "max": 1.0, "mean": 1.0}
    assert throughput_summary([]) == {"min": None, "max": None, "mean": None}
