# -*- coding: utf-8 -*-
"""This module houses the patch geometry used for training and inference.

Training consumes patch pyramids: concentric square crops of strictly
increasing size, all sharing the image centre, so that a larger crop always
holds at least as many people as a smaller one. Inference tiles an image into
a P x P grid that partitions it exactly. Every function here is a pure function
of its inputs and is safe to call from any number of workers.

"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from CrowdKit.array_utils import check_pixels
from CrowdKit.errors import ImageReadError, ImageTooSmall, InvalidRatio, OutOfBounds

logger = logging.getLogger(__name__)

MIN_CROP_SIDE = 32
DEFAULT_TARGET_SIDE = 224


@dataclass(frozen=True)
class ImageRef:
    """A raster on disk and the size it should be read at.

    ``width`` and ``height`` may differ from the file's native size, in which
    case ``load_image`` resamples on read (see ``resize_long_side``).
    """

    path: str
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ImageTooSmall(
                "image must be at least 1x1, got {}x{}".format(self.width, self.height)
            )


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixels, right/bottom exclusive."""

    left: int
    top: int
    right: int
    bottom: int

    @property
    def width(self):
        return self.right - self.left

    @property
    def height(self):
        return self.bottom - self.top

    @property
    def area(self):
        return self.width * self.height

    def as_list(self):
        return [self.left, self.top, self.right, self.bottom]


@dataclass(frozen=True)
class SquareCrop:
    center_x: int
    center_y: int
    side: int

    def __post_init__(self):
        if self.side < 1:
            raise ImageTooSmall("crop side must be >= 1, got {}".format(self.side))

    def box(self, image: Optional[ImageRef] = None) -> Box:
        """Return the crop rectangle, shifted inside ``image`` when given."""
        left = self.center_x - self.side // 2
        top = self.center_y - self.side // 2

        if image is not None:
            if self.side > min(image.width, image.height):
                raise OutOfBounds(
                    "crop side {} exceeds image {}x{}".format(
                        self.side, image.width, image.height
                    )
                )
            left = int(np.clip(left, 0, image.width - self.side))
            top = int(np.clip(top, 0, image.height - self.side))

        return Box(left, top, left + self.side, top + self.side)


@dataclass(frozen=True)
class PatchPyramid:
    image: ImageRef
    crops: Tuple[SquareCrop, ...]
    target_side: int = DEFAULT_TARGET_SIDE

    @property
    def m(self):
        return len(self.crops)

    @property
    def sides(self):
        return [crop.side for crop in self.crops]


@dataclass(frozen=True)
class GridSpec:
    p: int

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError("grid dimension p must be an integer >= 1, got {}".format(self.p))


def build_pyramid(image, m=6, min_ratio=0.5, target_side=DEFAULT_TARGET_SIDE):
    """Build the size-sorted, centre-sharing crops used as one training unit.

    Side lengths are linearly spaced from ``min_ratio * S`` to ``S`` where
    ``S = min(width, height)``, rounded half up to whole pixels. All crops
    share the image centre ``(width // 2, height // 2)``.

    Parameters
    ----------
    image : ImageRef
        The image to crop.
    m : int, optional
        Number of crops, by default 6. Must be at least 2.
    min_ratio : float, optional
        Side of the smallest crop relative to ``S``, in (0, 1), by default 0.5
    target_side : int, optional
        Side every crop is resized to before encoding, by default 224

    Returns
    -------
    PatchPyramid
        The ``m`` crops, smallest first.

    Raises
    ------
    InvalidRatio
        If ``min_ratio`` is outside (0, 1).
    ImageTooSmall
        If the smallest crop would be under 32 px, or the sides cannot be made
        strictly increasing.

    Examples
    --------
    >>> pyramid = build_pyramid(ImageRef("a.jpg", 1200, 900), m=6, min_ratio=0.5)
    >>> pyramid.sides
    [450, 540, 630, 720, 810, 900]

    """
    if m < 2:
        raise ValueError("a pyramid needs m >= 2 crops, got {}".format(m))
    if not 0.0 < min_ratio < 1.0:
        raise InvalidRatio("min_ratio must lie in (0, 1), got {}".format(min_ratio))

    short_side = min(image.width, image.height)
    sides = np.floor(np.linspace(min_ratio * short_side, short_side, m) + 0.5).astype(int)

    if sides[0] < MIN_CROP_SIDE:
        raise ImageTooSmall(
            "smallest crop side {} < {} px for {}x{} image".format(
                sides[0], MIN_CROP_SIDE, image.width, image.height
            )
        )
    if np.any(np.diff(sides) <= 0):
        raise ImageTooSmall(
            "cannot fit {} strictly increasing sides into {} px".format(m, short_side)
        )

    center_x, center_y = image.width // 2, image.height // 2
    crops = tuple(SquareCrop(center_x, center_y, int(side)) for side in sides)

    return PatchPyramid(image=image, crops=crops, target_side=target_side)


def tile_grid(image, grid):
    """Split an image into ``P x P`` tiles in row-major order.

    The tiles partition the image exactly. When a side is not divisible by P
    the last row or column absorbs the remainder.

    Parameters
    ----------
    image : ImageRef
    grid : GridSpec

    Returns
    -------
    list of Box
        ``P**2`` tiles, row by row.

    Examples
    --------
    >>> tiles = tile_grid(ImageRef("a.jpg", 1000, 700), GridSpec(3))
    >>> [t.width for t in tiles[:3]], [t.height for t in tiles[::3]]
    ([333, 333, 334], [233, 233, 234])

    """
    p = grid.p
    if image.width < p or image.height < p:
        raise ImageTooSmall(
            "{}x{} image cannot hold a {}x{} grid".format(image.width, image.height, p, p)
        )

    xs = _grid_edges(image.width, p)
    ys = _grid_edges(image.height, p)

    return [
        Box(xs[col], ys[row], xs[col + 1], ys[row + 1])
        for row in range(p)
        for col in range(p)
    ]


def _grid_edges(length, p):
    step = length // p
    return [step * i for i in range(p)] + [length]


def extract_and_resize(pixels, crop: Union[SquareCrop, Box], target_side=DEFAULT_TARGET_SIDE):
    """Cut a crop out of a pixel buffer and resample it to a square.

    Resampling is Pillow's bilinear filter. A crop already at ``target_side``
    is returned as an unmodified copy.

    Parameters
    ----------
    pixels : ndarray of type uint8, size (H, W, 3)
        The full image.
    crop : SquareCrop or Box
        Region to extract. A ``SquareCrop`` is shifted inside the image first.
    target_side : int, optional
        Output side, by default 224

    Returns
    -------
    ndarray of type uint8, size (target_side, target_side, 3)

    """
    if target_side < 1:
        raise ValueError("target_side must be >= 1, got {}".format(target_side))

    pixels = check_pixels(pixels)
    height, width = pixels.shape[:2]

    if isinstance(crop, SquareCrop):
        box = crop.box(ImageRef("<buffer>", width, height))
    else:
        box = crop

    if box.left < 0 or box.top < 0 or box.right > width or box.bottom > height or box.area <= 0:
        raise OutOfBounds("crop {} exceeds {}x{} image".format(box.as_list(), width, height))

    region = pixels[box.top : box.bottom, box.left : box.right]

    if region.shape[0] == target_side and region.shape[1] == target_side:
        return region.copy()

    resized = Image.fromarray(region).resize((target_side, target_side), Image.BILINEAR)

    return np.asarray(resized, dtype=np.uint8)


def resize_long_side(image, max_long):
    """Shrink an image so its longer side is below ``max_long``.

    When ``max(width, height) >= max_long`` both sides are scaled by
    ``(max_long - 1) / long_side`` and floored, keeping the aspect ratio.
    Smaller images are returned unchanged, so the operation is idempotent.

    Examples
    --------
    >>> resize_long_side(ImageRef("a.jpg", 4096, 2048), 2048)
    ImageRef(path='a.jpg', width=2047, height=1023)

    """
    if max_long < 2:
        raise ValueError("max_long must be >= 2, got {}".format(max_long))

    long_side = max(image.width, image.height)
    if long_side < max_long:
        return image

    scale = (max_long - 1) / long_side
    width = max(1, int(np.floor(image.width * scale)))
    height = max(1, int(np.floor(image.height * scale)))

    if image.width == long_side:
        width = max_long - 1
    if image.height == long_side:
        height = max_long - 1

    return ImageRef(image.path, width, height)


def read_image_ref(path):
    """Read just the header of a raster and return its native-size ``ImageRef``."""
    try:
        with Image.open(path) as img:
            width, height = img.size
    except (OSError, UnidentifiedImageError) as err:
        raise ImageReadError("cannot read image {}: {}".format(path, err)) from err

    return ImageRef(str(path), width, height)


def load_image(image):
    """Decode an ``ImageRef`` into an RGB uint8 buffer of its declared size."""
    try:
        with Image.open(image.path) as img:
            img = img.convert("RGB")
            if img.size != (image.width, image.height):
                img = img.resize((image.width, image.height), Image.BILINEAR)
            pixels = np.asarray(img, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as err:
        raise ImageReadError("cannot read image {}: {}".format(image.path, err)) from err

    return check_pixels(pixels)


def pyramid_patches(pixels, pyramid) -> List[np.ndarray]:
    """Extract and resize every crop of a pyramid, smallest first."""
    return [extract_and_resize(pixels, crop, pyramid.target_side) for crop in pyramid.crops]


def grid_patches(pixels, tiles, target_side=DEFAULT_TARGET_SIDE) -> List[np.ndarray]:
    return [extract_and_resize(pixels, tile, target_side) for tile in tiles]


def resolve_path(path, base: Optional[Path] = None):
    """Resolve ``path`` against ``base`` unless it is already absolute."""
    path = Path(path)
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    return path
