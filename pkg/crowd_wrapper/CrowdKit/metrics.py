# -*- coding: utf-8 -*-
"""This module houses the counting metrics.

For ``N`` test images with predicted totals ``E_i`` and ground-truth counts
``C_i``::

    MAE = 1/N sum |E_i - C_i|
    MSE = sqrt(1/N sum |E_i - C_i|^2)

MSE is the root form used throughout the crowd counting literature.

"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from CrowdKit.array_utils import check_type
from CrowdKit.errors import EmptyDataset, LengthMismatch


@dataclass
class EvalReport:
    n_images: int
    mae: float
    mse: float
    per_image: List[dict]
    throughput_fps: Optional[Dict[str, float]] = None
    label: Optional[str] = None
    predictions: list = field(default_factory=list, repr=False, compare=False)

    def to_dict(self, include_throughput=False):
        """JSON-ready form; throughput is left out unless asked for."""
        record = {
            "n_images": self.n_images,
            "mae": self.mae,
            "mse": self.mse,
            "per_image": self.per_image,
        }
        if self.label is not None:
            record["label"] = self.label
        if include_throughput and self.throughput_fps is not None:
            record["throughput_fps"] = dict(self.throughput_fps)
        return record

    def worst(self, k=5):
        """The ``k`` images with the largest absolute error, worst first."""
        order = sorted(range(len(self.per_image)), key=lambda i: (-self.per_image[i]["abs_err"], i))
        return [self.per_image[i] for i in order[:k]]


def compute_metrics(preds, gts, ids=None):
    """Compute MAE and root-mean-square error of predicted counts.

    Parameters
    ----------
    preds : array_like, size (N)
        Predicted totals ``E_i``.
    gts : array_like, size (N)
        Ground-truth counts ``C_i``.
    ids : list of str, optional
        Image identifiers for the per-image records, by default the indices.

    Returns
    -------
    EvalReport

    Raises
    ------
    LengthMismatch
        If the inputs differ in length.
    EmptyDataset
        If there are no images.

    Examples
    --------
    >>> report = compute_metrics([10, 20], [0, 0])
    >>> report.mae, round(report.mse, 3)
    (15.0, 15.811)

    """
    preds = check_type(np.asarray(preds)).ravel()
    gts = check_type(np.asarray(gts)).ravel()

    if preds.size != gts.size:
        raise LengthMismatch("{} predictions for {} ground truths".format(preds.size, gts.size))
    if preds.size == 0:
        raise EmptyDataset("cannot compute metrics over zero images")

    ids = list(range(preds.size)) if ids is None else list(ids)
    if len(ids) != preds.size:
        raise LengthMismatch("{} ids for {} predictions".format(len(ids), preds.size))

    errors = np.abs(preds - gts)
    mae = float(errors.mean())
    mse = float(np.sqrt(np.mean(errors ** 2)))

    per_image = [
        {"id": i, "E": _plain(e), "C": _plain(c), "abs_err": _plain(err)}
        for i, e, c, err in zip(ids, preds, gts, errors)
    ]

    return EvalReport(n_images=int(preds.size), mae=mae, mse=mse, per_image=per_image)


def throughput_summary(fps):
    """Summarise per-image frames per second as ``{min, max, mean}``."""
    fps = check_type(np.asarray(fps)).ravel()
    fps = fps[np.isfinite(fps)]
    if fps.size == 0:
        return {"min": None, "max": None, "mean": None}

    return {"min": float(fps.min()), "max": float(fps.max()), "mean": float(fps.mean())}


def _plain(value):
    value = float(value)
    return int(value) if value.is_integer() else value
