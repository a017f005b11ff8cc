# -*- coding: utf-8 -*-
"""This module houses deterministic stand-in encoders.

They let the whole pipeline run without pretrained weights. The embedding
space has two "count" dimensions followed by one dimension per concept name.
A count ``c`` maps to ``u(c) = [cos(theta c), sin(theta c), 0, ...]`` with
``theta`` small enough that every count in ``[0, 300]`` stays within a quarter
turn, so ``u(a) . u(b)`` strictly decreases with ``|a - b|``.

Patches carry their planted content in the top-left pixel, written by
``CrowdKit.synthetic``:

* red: ``16 * (coarse index + 1) + (fine index + 1)``, either index may be -1
* green, blue: low and high byte of the planted count

"""

import math
import re
import zlib

import numpy as np
import torch
from torch import nn

from CrowdKit.encoders.base import EncoderHandle, Kind
from CrowdKit.prompts import DEFAULT_COARSE_CLASSES, DEFAULT_FINE_CLASSES

COUNT_THETA = math.pi / 800.0
COUNT_DIMS = 2
DEFAULT_DIM = 16

_NUMBER = re.compile(r"\d+")


def count_direction(count):
    """Return ``u(count)`` restricted to the two count dimensions."""
    angle = COUNT_THETA * float(count)
    return np.array([math.cos(angle), math.sin(angle)], dtype=np.float64)


def encode_pixel_code(count, coarse_index=-1, fine_index=-1):
    """Pack planted content into an RGB triple, see the module docstring."""
    if not 0 <= count < 65536:
        raise ValueError("planted count must fit in two bytes, got {}".format(count))
    if not -1 <= coarse_index < 15 or not -1 <= fine_index < 15:
        raise ValueError("concept indices must lie in [-1, 15)")

    red = 16 * (coarse_index + 1) + (fine_index + 1)
    return (red, count % 256, count // 256)


def decode_pixel_code(rgb):
    red, green, blue = (int(v) for v in rgb)
    return green + 256 * blue, red // 16 - 1, red % 16 - 1


def _identity_projection(dim):
    projection = nn.Linear(dim, dim, bias=False)
    with torch.no_grad():
        projection.weight.copy_(torch.eye(dim))
    return projection


class MockImageEncoder(nn.Module):
    """Reads the planted pixel code of each patch and embeds it.

    A learnable projection, initialised to the identity, follows the fixed
    embedding so that fine-tuning has something to move.
    """

    def __init__(self, coarse_classes=DEFAULT_COARSE_CLASSES, fine_classes=DEFAULT_FINE_CLASSES, dim=DEFAULT_DIM):
        super().__init__()
        self.coarse_classes = tuple(coarse_classes)
        self.fine_classes = tuple(fine_classes)
        self.dim = dim

        needed = COUNT_DIMS + len(self.coarse_classes) + len(self.fine_classes)
        if dim < needed:
            raise ValueError("dim {} too small for {} concepts".format(dim, needed - COUNT_DIMS))

        self.projection = _identity_projection(dim)

    def embed_code(self, count, coarse_index, fine_index):
        vector = np.zeros(self.dim, dtype=np.float64)
        vector[:COUNT_DIMS] = count_direction(count)
        if coarse_index >= 0:
            vector[COUNT_DIMS + coarse_index] = 1.0
        if fine_index >= 0:
            vector[COUNT_DIMS + len(self.coarse_classes) + fine_index] = 1.0
        return vector

    def forward(self, batch):
        codes = torch.round(batch[:, :, 0, 0] * 255.0).to(torch.int64).cpu().numpy()
        rows = [self.embed_code(*decode_pixel_code(code)) for code in codes]
        raw = torch.from_numpy(np.stack(rows)).to(self.projection.weight)

        return self.projection(raw)


class MockTextEncoder(nn.Module):
    """Embeds prompts by what they name.

    A text containing a number maps to ``u(number)``; a text ending in a known
    concept maps to that concept's axis; anything else maps to a fixed random
    direction derived from the seed and the text.
    """

    def __init__(self, coarse_classes=DEFAULT_COARSE_CLASSES, fine_classes=DEFAULT_FINE_CLASSES, dim=DEFAULT_DIM, seed=0):
        super().__init__()
        self.concepts = tuple(coarse_classes) + tuple(fine_classes)
        self.dim = dim
        self.seed = seed
        self.projection = _identity_projection(dim)

    def embed_text(self, text):
        vector = np.zeros(self.dim, dtype=np.float64)

        numbers = _NUMBER.findall(text)
        if numbers:
            vector[:COUNT_DIMS] = count_direction(int(numbers[-1]))
            return vector

        matches = [i for i, name in enumerate(self.concepts) if text.endswith(name)]
        if matches:
            best = max(matches, key=lambda i: len(self.concepts[i]))
            vector[COUNT_DIMS + best] = 1.0
            return vector

        rng = np.random.default_rng([self.seed, zlib.crc32(text.encode("utf-8"))])
        return rng.standard_normal(self.dim)

    def forward(self, texts):
        raw = torch.from_numpy(np.stack([self.embed_text(t) for t in texts]))
        return self.projection(raw.to(self.projection.weight))


class ToyImageEncoder(nn.Module):
    """Two-parameter encoder: mean patch intensity -> angle in the count plane.

    ``phi = slope * mean_intensity + offset``. The default parameters order
    the concentric crops of a radial-gradient image against their ranks.
    """

    def __init__(self, dim=DEFAULT_DIM, slope=-2.0, offset=1.433):
        super().__init__()
        self.dim = dim
        self.slope = nn.Parameter(torch.tensor(float(slope)))
        self.offset = nn.Parameter(torch.tensor(float(offset)))

    def forward(self, batch):
        angle = self.slope * batch.mean(dim=(1, 2, 3)) + self.offset
        rest = torch.zeros(batch.shape[0], self.dim - COUNT_DIMS, dtype=angle.dtype, device=angle.device)

        return torch.cat([torch.cos(angle)[:, None], torch.sin(angle)[:, None], rest], dim=1)


def make_mock_count_encoder(seed=0, coarse_classes=DEFAULT_COARSE_CLASSES, fine_classes=DEFAULT_FINE_CLASSES, dim=DEFAULT_DIM):
    """Build a paired mock image and text encoder.

    Parameters
    ----------
    seed : int, optional
        Seeds the directions of texts that name neither a count nor a known
        concept, by default 0
    coarse_classes, fine_classes : tuple of str, optional
        Concept vocabulary, by default the shipped class lists.
    dim : int, optional
        Embedding width, by default 16

    Returns
    -------
    tuple of EncoderHandle
        ``(image_handle, text_handle)``.

    Examples
    --------
    >>> image_enc, text_enc = make_mock_count_encoder(seed=0)
    >>> image_enc.backend, text_enc.kind.value
    ('mock', 'text')

    """
    image = MockImageEncoder(coarse_classes, fine_classes, dim)
    text = MockTextEncoder(coarse_classes, fine_classes, dim, seed=seed)

    return (
        EncoderHandle(Kind.IMAGE, "mock", image, trainable=True),
        EncoderHandle(Kind.TEXT, "mock", text, trainable=False),
    )


def make_toy_image_encoder(dim=DEFAULT_DIM, slope=-2.0, offset=1.433):
    return EncoderHandle(Kind.IMAGE, "toy", ToyImageEncoder(dim, slope, offset), trainable=True)
