# -*- coding: utf-8 -*-
"""This module houses one-off converters from upstream dataset layouts.

Each converter walks a dataset as distributed by its authors and returns
``AnnotatedImage`` records ready for ``write_manifest``:

* ShanghaiTech A/B: ``{train,test}_data/images/IMG_n.jpg`` with
  ``ground_truth/GT_IMG_n.mat`` holding ``image_info``.
* UCF-QNRF: ``{Train,Test}/img_n.jpg`` with ``img_n_ann.mat`` holding
  ``annPoints``.
* JHU-Crowd++: ``{train,val,test}/images/n.jpg`` with ``gt/n.txt``, one
  ``x y w h o b`` row per head.
* UCF_CC_50: ``n.jpg`` with ``n_ann.mat`` holding ``annPoints``.

Upstream annotations occasionally sit on or just past the border, so points
are clipped into the image here rather than rejected later.

"""

import logging
from pathlib import Path

import numpy as np
from scipy.io import loadmat

from CrowdKit.datasets import AnnotatedImage, Split, write_manifest
from CrowdKit.errors import ParseError
from CrowdKit.geometry import read_image_ref

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


def _images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError("dataset directory not found: {}".format(directory))
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _unwrap(value):
    while isinstance(value, np.ndarray) and value.dtype == object and value.size == 1:
        value = value.flat[0]
    return value


def shanghaitech_points(mat):
    """Dig the ``location`` array out of a ShanghaiTech ``image_info`` struct."""
    info = _unwrap(mat["image_info"])
    while not (isinstance(info, np.ndarray) and info.dtype.kind in "fiu"):
        if isinstance(info, np.ndarray) and info.dtype.names:
            info = info["location"] if "location" in info.dtype.names else info[info.dtype.names[0]]
        elif isinstance(info, np.void):
            info = info["location"] if "location" in info.dtype.names else info[0]
        elif isinstance(info, np.ndarray) and info.size == 1:
            info = info.flat[0]
        else:
            raise ParseError("unexpected image_info layout")
        info = _unwrap(info)

    return np.asarray(info, dtype=np.float64).reshape(-1, 2)


def _clip(image, points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    outside = int(np.sum((points[:, 0] < 0) | (points[:, 0] > image.width) | (points[:, 1] < 0) | (points[:, 1] > image.height)))
    if outside:
        logger.debug("%s: clipped %d point(s) into the image", image.path, outside)
    points[:, 0] = np.clip(points[:, 0], 0, image.width)
    points[:, 1] = np.clip(points[:, 1], 0, image.height)
    return points


def _annotated(image_path, points, split):
    image = read_image_ref(image_path)
    return AnnotatedImage(image, _clip(image, points), split)


def convert_shanghaitech(root):
    """Convert one ShanghaiTech part (A or B)."""
    root = Path(root)
    images = []
    for folder, split in (("train_data", Split.TRAIN), ("test_data", Split.TEST)):
        for path in _images(root / folder / "images"):
            gt = root / folder / "ground_truth" / "GT_{}.mat".format(path.stem)
            images.append(_annotated(path, shanghaitech_points(loadmat(gt)), split))
    return images


def convert_qnrf(root):
    root = Path(root)
    images = []
    for folder, split in (("Train", Split.TRAIN), ("Test", Split.TEST)):
        for path in _images(root / folder):
            mat = loadmat(path.with_name("{}_ann.mat".format(path.stem)))
            images.append(_annotated(path, mat["annPoints"], split))
    return images


def jhu_points(gt_path):
    """Read the ``x y w h o b`` rows of a JHU-Crowd++ label file."""
    rows = []
    with open(gt_path, encoding="utf-8") as f:
        for line, text in enumerate(f, start=1):
            fields = text.split()
            if not fields:
                continue
            try:
                rows.append((float(fields[0]), float(fields[1])))
            except (IndexError, ValueError) as err:
                raise ParseError("{}: bad label row {!r}".format(gt_path, text.strip()), line) from err
    return np.asarray(rows, dtype=np.float64).reshape(-1, 2)


def convert_jhu(root):
    root = Path(root)
    images = []
    for split in (Split.TRAIN, Split.VAL, Split.TEST):
        folder = root / split.value
        if not folder.is_dir():
            continue
        for path in _images(folder / "images"):
            images.append(_annotated(path, jhu_points(folder / "gt" / "{}.txt".format(path.stem)), split))
    return images


def convert_ucf_cc_50(root):
    """Convert UCF_CC_50; everything lands in the test split."""
    images = []
    for path in _images(root):
        mat = loadmat(path.with_name("{}_ann.mat".format(path.stem)))
        images.append(_annotated(path, mat["annPoints"], Split.TEST))
    return images


CONVERTERS = {
    "shtech_a": convert_shanghaitech,
    "shtech_b": convert_shanghaitech,
    "ucf_qnrf": convert_qnrf,
    "jhu_crowd": convert_jhu,
    "ucf_cc_50": convert_ucf_cc_50,
}


def convert(dataset, root, out_path):
    """Convert a dataset and write its manifest with a header record.

    Parameters
    ----------
    dataset : {"shtech_a", "shtech_b", "ucf_qnrf", "jhu_crowd", "ucf_cc_50"}
    root : str or Path
        The dataset as downloaded.
    out_path : str or Path
        Where to write the manifest.

    Returns
    -------
    Path

    """
    if dataset not in CONVERTERS:
        raise ValueError("unknown dataset {!r}, expected one of {}".format(dataset, sorted(CONVERTERS)))

    images = CONVERTERS[dataset](root)
    logger.info("Converted %d %s images", len(images), dataset)

    return write_manifest(out_path, images, name=dataset)
