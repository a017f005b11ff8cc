# -*- coding: utf-8 -*-
"""This module houses synthetic images and manifests with planted content.

The images are painted so that the mock encoders (``CrowdKit.encoders.mock``)
read back exactly what was planted: every region is a flat colour holding the
pixel code of its scene class, body part and count. Images are written as PNG
so the codes survive a round trip through disk.

* ``tile_grid_image``: one flat tile per grid cell, for inference.
* ``ring_image``: concentric square rings matching a patch pyramid, so crop
  ``i`` reads count ``r0 + i * k``, for rank-consistent training.
* ``radial_image``: a grey Chebyshev-distance gradient, for the toy encoder.

"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from CrowdKit.datasets import AnnotatedImage, Split, write_manifest
from CrowdKit.encoders.mock import encode_pixel_code
from CrowdKit.geometry import ImageRef, build_pyramid, tile_grid, GridSpec
from CrowdKit.prompts import DEFAULT_COARSE_CLASSES, DEFAULT_FINE_CLASSES, RankingPromptSpec

logger = logging.getLogger(__name__)

DEFAULT_TILE_SIDE = 64


@dataclass(frozen=True)
class TilePlant:
    """What one tile shows.

    Only tiles of coarse class ``crowd`` with fine class ``human heads`` are
    counted by the pipeline; the planted ``count`` of any other tile is
    ignored and its ground truth is zero.
    """

    coarse: str = "crowd"
    fine: str = "human heads"
    count: int = 0

    @property
    def counted(self):
        return self.coarse == DEFAULT_COARSE_CLASSES[0] and self.fine == DEFAULT_FINE_CLASSES[0]

    def code(self, coarse_classes=DEFAULT_COARSE_CLASSES, fine_classes=DEFAULT_FINE_CLASSES):
        coarse_index = coarse_classes.index(self.coarse) if self.coarse else -1
        fine_index = fine_classes.index(self.fine) if self.fine else -1
        return encode_pixel_code(self.count, coarse_index, fine_index)


def _save(pixels, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")
    return ImageRef(str(path), pixels.shape[1], pixels.shape[0])


def tile_grid_image(path, plants, p, tile_side=DEFAULT_TILE_SIDE):
    """Paint ``p * p`` flat tiles, row by row, and save them as a PNG.

    Returns the ``ImageRef`` and the head points of the counted tiles, spread
    on a regular lattice inside each tile.
    """
    plants = list(plants)
    if len(plants) != p * p:
        raise ValueError("need {} tile plants, got {}".format(p * p, len(plants)))

    side = p * tile_side
    pixels = np.zeros((side, side, 3), dtype=np.uint8)
    points = []

    boxes = tile_grid(ImageRef(str(path), side, side), GridSpec(p))
    for box, plant in zip(boxes, plants):
        pixels[box.top : box.bottom, box.left : box.right] = plant.code()
        if plant.counted and plant.count:
            points.append(_lattice_points(box, plant.count))

    image = _save(pixels, path)
    points = np.concatenate(points) if points else np.zeros((0, 2))

    return image, points


def _lattice_points(box, count):
    cols = int(np.ceil(np.sqrt(count)))
    index = np.arange(count)
    x = box.left + (index % cols + 0.5) * box.width / cols
    y = box.top + (index // cols + 0.5) * box.height / cols
    return np.stack([x, y], axis=1)


def ring_image(path, side=256, m=6, min_ratio=0.5, ranking=None):
    """Paint the crops of a centred pyramid so crop ``i`` reads rank ``i``.

    Crops are painted largest first, so each crop's corner lies in its own
    ring. Every ring is a crowd of heads.
    """
    ranking = RankingPromptSpec() if ranking is None else ranking
    counts = ranking.counts
    if len(counts) < m:
        raise ValueError("ranking has {} counts for {} crops".format(len(counts), m))

    image = ImageRef(str(path), side, side)
    pyramid = build_pyramid(image, m=m, min_ratio=min_ratio)
    pixels = np.zeros((side, side, 3), dtype=np.uint8)

    for index in reversed(range(m)):
        box = pyramid.crops[index].box(image)
        pixels[box.top : box.bottom, box.left : box.right] = TilePlant(count=counts[index]).code()

    return _save(pixels, path)


def radial_image(path, side=256):
    """Grey image whose intensity is the Chebyshev distance to the centre.

    Intensity is 0 at the centre and 255 at the border, so the mean intensity
    of a centred crop grows with its side.
    """
    half = side / 2.0
    coords = np.arange(side) + 0.5 - half
    distance = np.maximum(np.abs(coords)[None, :], np.abs(coords)[:, None]) / half
    grey = np.clip(np.round(distance * 255.0), 0, 255).astype(np.uint8)

    return _save(np.repeat(grey[:, :, None], 3, axis=2), path)


def random_plants(rng, p, ranking=None, crowd_fraction=0.5):
    """Draw ``p * p`` tiles: counted crowds, scenery and crowds of legs."""
    counts = (RankingPromptSpec() if ranking is None else ranking).counts
    scenery = DEFAULT_COARSE_CLASSES[1:]
    plants = []

    for _ in range(p * p):
        draw = rng.random()
        if draw < crowd_fraction:
            plants.append(TilePlant(count=int(rng.choice(counts))))
        elif draw < crowd_fraction + 0.1:
            plants.append(TilePlant(fine=DEFAULT_FINE_CLASSES[2], count=int(rng.choice(counts))))
        else:
            plants.append(TilePlant(coarse=str(rng.choice(scenery)), fine="", count=0))

    return plants


def make_oracle_dataset(root, name="synthetic", n_images=20, p=3, seed=0, split=Split.TEST, tile_side=DEFAULT_TILE_SIDE):
    """Write ``n_images`` tile-grid images and a manifest for them.

    The ground truth of each image is the sum of its counted tiles, which is
    exactly what the mock pipeline predicts.

    Returns
    -------
    Path
        The manifest, ``root / (name + ".jsonl")``.

    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    images = []

    for index in range(n_images):
        plants = random_plants(rng, p)
        ref, points = tile_grid_image(root / name / "img_{:04d}.png".format(index), plants, p, tile_side)
        images.append(AnnotatedImage(ref, points, split))

    manifest = write_manifest(root / "{}.jsonl".format(name), images, name=name, default_p=p)
    logger.debug("Wrote %d synthetic images to %s", n_images, manifest)

    return manifest


def make_ring_dataset(root, name="rings", n_images=4, side=256, m=6, min_ratio=0.5, split=Split.TRAIN):
    """Write rank-consistent ring images as a training manifest."""
    root = Path(root)
    images = []

    for index in range(n_images):
        ref = ring_image(root / name / "ring_{:04d}.png".format(index), side + 16 * index, m, min_ratio)
        images.append(AnnotatedImage(ref, np.zeros((0, 2)), split))

    return write_manifest(root / "{}.jsonl".format(name), images, name=name)
