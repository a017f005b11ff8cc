# -*- coding: utf-8 -*-
"""This module houses dataset manifests and their ingestion.

A manifest is a line-delimited JSON file with one record per image::

    {"image": "images/IMG_1.jpg", "points": [[x, y], ...], "split": "test"}

Coordinates are pixels with the origin at the top-left corner. Relative image
paths are resolved against the manifest's directory. Records may carry
``width`` and ``height``; otherwise the image header is read.

The first line may instead be a header record naming the dataset and
overriding its inference policy::

    {"dataset": "ucf_qnrf", "default_p": 4, "resize_max_long": 2048}

Head points are for evaluation only. The trainer is handed ``ImageRef``
streams through ``DatasetManifest.image_refs`` and never sees them.

"""

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from CrowdKit.errors import BoundsError, EmptyDataset, ImageReadError, ParseError
from CrowdKit.geometry import ImageRef, read_image_ref, resolve_path

logger = logging.getLogger(__name__)

ALLOWED_P = (3, 4)
LARGE_IMAGE_MAX_LONG = 2048

# name -> (default P, resize_max_long)
DATASET_POLICIES = {
    "ucf_qnrf": (4, LARGE_IMAGE_MAX_LONG),
    "ucf_cc_50": (4, None),
    "jhu_crowd": (3, LARGE_IMAGE_MAX_LONG),
    "shtech_a": (3, None),
    "shtech_b": (3, None),
}
DEFAULT_POLICY = (3, None)


class Split(str, enum.Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


def policy_for(name):
    """Return ``(default_p, resize_max_long)`` for a dataset name."""
    return DATASET_POLICIES.get(name, DEFAULT_POLICY)


@dataclass
class AnnotatedImage:
    image: ImageRef
    points: np.ndarray
    split: Split = Split.TEST

    def __post_init__(self):
        self.split = Split(self.split)
        points = np.asarray(self.points, dtype=np.float64)
        if points.size == 0:
            points = np.zeros((0, 2), dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 2:
            raise ValueError("points must be (K, 2), got shape {}".format(points.shape))
        self.points = points

    @property
    def count(self):
        return int(self.points.shape[0])

    def out_of_bounds(self):
        """Return the points outside ``[0, width] x [0, height]``."""
        x, y = self.points[:, 0], self.points[:, 1]
        bad = (x < 0) | (y < 0) | (x > self.image.width) | (y > self.image.height)
        return [tuple(p) for p in self.points[bad].tolist()]

    def to_record(self, base=None):
        path = Path(self.image.path)
        if base is not None:
            try:
                path = path.relative_to(base)
            except ValueError:
                pass
        return {
            "image": path.as_posix(),
            "width": self.image.width,
            "height": self.image.height,
            "points": self.points.tolist(),
            "split": self.split.value,
        }


@dataclass
class DatasetManifest:
    name: str
    images: List[AnnotatedImage]
    resize_max_long: Optional[int] = None
    default_p: int = DEFAULT_POLICY[0]
    path: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.default_p not in ALLOWED_P:
            raise ValueError("default_p must be one of {}, got {}".format(ALLOWED_P, self.default_p))

    def split(self, split):
        split = Split(split)
        return [item for item in self.images if item.split is split]

    def image_refs(self, split=Split.TRAIN):
        """Image references of one split, without annotations."""
        return [item.image for item in self.split(split)]

    def counts(self, split=None):
        items = self.images if split is None else self.split(split)
        return [item.count for item in items]

    def __len__(self):
        return len(self.images)


def _parse_points(value, line):
    try:
        points = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as err:
        raise ParseError("points are not numeric: {}".format(err), line) from err

    if points.size == 0:
        return np.zeros((0, 2), dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ParseError("points must be a list of [x, y] pairs", line)
    if not np.all(np.isfinite(points)):
        raise ParseError("points must be finite", line)

    return points


def _parse_header(record, line):
    name = record["dataset"]
    default_p, resize_max_long = policy_for(name)
    default_p = record.get("default_p", default_p)
    resize_max_long = record.get("resize_max_long", resize_max_long)

    if default_p not in ALLOWED_P:
        raise ParseError("default_p must be one of {}, got {!r}".format(ALLOWED_P, default_p), line)
    if resize_max_long is not None and (not isinstance(resize_max_long, int) or resize_max_long < 2):
        raise ParseError("resize_max_long must be an integer >= 2", line)

    return name, default_p, resize_max_long


def _parse_record(record, line, base):
    try:
        image_path = record["image"]
    except KeyError:
        raise ParseError("record has no 'image' key", line) from None

    try:
        split = Split(record.get("split", Split.TEST.value))
    except ValueError:
        raise ParseError("unknown split {!r}".format(record.get("split")), line) from None

    path = resolve_path(image_path, base)
    if "width" in record and "height" in record:
        try:
            image = ImageRef(str(path), int(record["width"]), int(record["height"]))
        except (TypeError, ValueError) as err:
            raise ParseError("bad image size: {}".format(err), line) from err
    else:
        try:
            image = read_image_ref(path)
        except ImageReadError as err:
            raise ParseError(str(err), line) from err

    points = _parse_points(record.get("points", []), line)

    return AnnotatedImage(image=image, points=points, split=split)


def ingest(manifest_path):
    """Load and validate a dataset manifest.

    Parameters
    ----------
    manifest_path : str or Path
        Line-delimited JSON manifest, see the module docstring.

    Returns
    -------
    DatasetManifest
        Named after the header record, or the file stem when there is none.
        ``default_p`` and ``resize_max_long`` follow the dataset policy table
        unless the header overrides them.

    Raises
    ------
    FileNotFoundError
        If the manifest does not exist.
    ParseError
        On malformed JSON or a malformed record, with the 1-based line number.
    BoundsError
        If any point lies outside its image, listing the offending points.

    Examples
    --------
    >>> manifest = ingest("data/ucf_qnrf.jsonl")
    >>> manifest.default_p, manifest.resize_max_long
    (4, 2048)

    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError("manifest not found: {}".format(manifest_path))

    base = manifest_path.parent
    name = manifest_path.stem
    default_p, resize_max_long = policy_for(name)
    images = []
    header_seen = False

    with open(manifest_path, encoding="utf-8") as f:
        for line, text in enumerate(f, start=1):
            text = text.strip()
            if not text:
                continue

            try:
                record = json.loads(text)
            except json.JSONDecodeError as err:
                raise ParseError("invalid JSON: {}".format(err.msg), line) from err
            if not isinstance(record, dict):
                raise ParseError("record must be a JSON object", line)

            if "dataset" in record and "image" not in record:
                if header_seen or images:
                    raise ParseError("header record must come first", line)
                name, default_p, resize_max_long = _parse_header(record, line)
                header_seen = True
                continue

            item = _parse_record(record, line, base)
            bad = item.out_of_bounds()
            if bad:
                raise BoundsError(
                    "line {}: {} point(s) outside {}x{} image {}".format(
                        line, len(bad), item.image.width, item.image.height, item.image.path
                    ),
                    bad,
                )
            images.append(item)

    logger.info(
        "Ingested %s: %d images (%s)",
        name,
        len(images),
        ", ".join("{} {}".format(len([i for i in images if i.split is s]), s.value) for s in Split),
    )

    return DatasetManifest(
        name=name,
        images=images,
        resize_max_long=resize_max_long,
        default_p=default_p,
        path=manifest_path,
    )


def write_manifest(path, images, name=None, default_p=None, resize_max_long=None):
    """Write annotated images as a manifest, with a header record when named.

    Image paths under the manifest's directory are written relative to it.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()

    with open(path, "w", encoding="utf-8") as f:
        if name is not None:
            header = {"dataset": name}
            if default_p is not None:
                header["default_p"] = default_p
            if resize_max_long is not None:
                header["resize_max_long"] = resize_max_long
            f.write(json.dumps(header) + "\n")

        for item in images:
            image = ImageRef(str(Path(item.image.path).resolve()), item.image.width, item.image.height)
            record = AnnotatedImage(image, item.points, item.split).to_record(base)
            f.write(json.dumps(record) + "\n")

    return path


def subsample(images, fraction, seed=0):
    """Pick a seeded subset of ``round(fraction * n)`` items, at least one.

    The subset keeps the input order and depends only on ``len(images)``,
    ``fraction`` and ``seed``.
    """
    images = list(images)
    if not images:
        raise EmptyDataset("nothing to subsample")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1], got {}".format(fraction))

    n = len(images)
    keep = max(1, int(np.floor(fraction * n + 0.5)))
    if keep >= n:
        return images

    chosen = np.sort(np.random.default_rng(seed).choice(n, size=keep, replace=False))

    return [images[i] for i in chosen]
