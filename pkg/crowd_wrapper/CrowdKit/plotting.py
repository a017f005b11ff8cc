# -*- coding: utf-8 -*-
"""This module houses the static charts written by ``crowd-kit plot``.

Two kinds of input are understood: ablation series (``series.json``) become
one line chart per metric, and evaluation reports with per-image records
become count overlays for the worst predicted images.

"""

import logging
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from PIL import Image  # noqa: E402

logger = logging.getLogger(__name__)

METRICS = ("mae", "mse")


def _slug(text):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", str(text)).strip("_") or "plot"


def plot_series(series, out_dir, prefix=None):
    """Draw MAE and MSE against the swept setting, one PNG per metric.

    Parameters
    ----------
    series : dict
        ``{"kind", "x", "mae", "mse"}`` as produced by
        ``AblationResult.series``.
    out_dir : str or Path
    prefix : str, optional
        File name prefix, by default the series kind.

    Returns
    -------
    list of Path

    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = _slug(prefix or series.get("kind", "series"))

    labels = [str(x) for x in series["x"]]
    positions = list(range(len(labels)))
    paths = []

    for metric in METRICS:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(positions, series[metric], marker="o")
        ax.set_xticks(positions)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_xlabel(series.get("kind", "setting"))
        ax.set_ylabel(metric.upper())
        ax.grid(alpha=0.3)
        fig.tight_layout()

        path = out_dir / "{}_{}.png".format(prefix, metric)
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)

    return paths


def plot_overlays(report, out_dir, k=5):
    """Render the ``k`` worst images with their predicted and true counts.

    Parameters
    ----------
    report : dict
        An evaluation report with ``per_image`` records whose ``id`` is the
        image path.
    out_dir : str or Path
    k : int, optional
        How many images, by default 5

    Returns
    -------
    list of Path
        One PNG per image that could be opened.

    """
    if k < 1:
        raise ValueError("k must be >= 1, got {}".format(k))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = report["per_image"]
    order = sorted(range(len(records)), key=lambda i: (-records[i]["abs_err"], i))
    paths = []

    for rank, index in enumerate(order[:k]):
        record = records[index]
        try:
            with Image.open(str(record["id"])) as img:
                pixels = img.convert("RGB")
                pixels.load()
        except OSError as err:
            logger.warning("Skipping overlay for %s: %s", record["id"], err)
            continue

        fig, ax = plt.subplots(figsize=(6, 6 * pixels.height / max(pixels.width, 1)))
        ax.imshow(pixels)
        ax.set_axis_off()
        ax.set_title("predicted {}  /  ground truth {}".format(record["E"], record["C"]))
        fig.tight_layout()

        path = out_dir / "worst_{:02d}_{}.png".format(rank, _slug(Path(str(record["id"])).stem))
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)

    return paths


def plot_report(report, out_dir, k=5):
    """Dispatch on the shape of a loaded report file."""
    if "per_image" in report:
        return plot_overlays(report, out_dir, k)
    if all(key in report for key in ("x",) + METRICS):
        return plot_series(report, out_dir)
    raise ValueError("report has neither per-image records nor a plot series")
