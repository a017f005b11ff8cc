# -*- coding: utf-8 -*-
"""This module houses the uniform encoder interface and the similarity math.

Any ``torch.nn.Module`` can sit behind an ``EncoderHandle``. Image modules take
a ``(N, 3, H, W)`` float batch in ``[0, 1]``; text modules take a list of
strings. Both return raw ``(N, C)`` embeddings which are L2-normalised here,
so every similarity is a cosine in ``[-1, 1]``.

"""

import enum
import hashlib
import logging
import threading
from dataclasses import dataclass, field

import numpy as np
import torch

from CrowdKit.array_utils import l2_normalize, pixels_to_tensor
from CrowdKit.errors import DimMismatch, EncoderFailure, ShapeMismatch

logger = logging.getLogger(__name__)


class Kind(str, enum.Enum):
    IMAGE = "image"
    TEXT = "text"


@dataclass
class EmbeddingMatrix:
    """Row-wise embeddings, ``rows x dim``.

    ``values`` is a tensor so that training can backpropagate through it; use
    ``numpy()`` for a detached float64 copy.
    """

    values: torch.Tensor
    normalized: bool = True

    def __post_init__(self):
        if not isinstance(self.values, torch.Tensor):
            self.values = torch.as_tensor(np.asarray(self.values))
        if self.values.ndim != 2:
            raise ShapeMismatch(
                "embeddings must be 2-D, got shape {}".format(tuple(self.values.shape))
            )

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[1]

    def row(self, index):
        return self.values[index]

    def take(self, indices):
        return EmbeddingMatrix(self.values[list(indices)], self.normalized)

    def numpy(self):
        return self.values.detach().cpu().to(torch.float64).numpy()


@dataclass
class SimilarityMatrix:
    """Image-text inner products, ``s[i, j] = I_i . R'_j``."""

    values: torch.Tensor

    def __post_init__(self):
        if not isinstance(self.values, torch.Tensor):
            self.values = torch.as_tensor(np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 2:
            raise ShapeMismatch(
                "similarity must be 2-D, got shape {}".format(tuple(self.values.shape))
            )
        if not bool(torch.isfinite(self.values).all()):
            raise ValueError("similarity matrix has non-finite entries")

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    def numpy(self):
        return self.values.detach().cpu().to(torch.float64).numpy()


@dataclass(eq=False)
class EncoderHandle:
    """An encoder module plus the bookkeeping the pipeline relies on.

    ``call_counter`` counts encoded inputs (patches or texts) and
    ``batch_counter`` counts forward passes. ``version`` is bumped whenever
    the weights change so that cached prompt embeddings are not reused.
    """

    kind: Kind
    backend: str
    module: torch.nn.Module
    trainable: bool = False
    call_counter: int = 0
    batch_counter: int = 0
    version: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.kind = Kind(self.kind)
        set_trainable(self, self.trainable)

    @property
    def device(self):
        for tensor in self.module.parameters():
            return tensor.device
        for tensor in self.module.buffers():
            return tensor.device
        return torch.device("cpu")

    def parameters(self):
        return [p for p in self.module.parameters() if p.requires_grad]

    def bump_version(self):
        with self._lock:
            self.version += 1

    def reset_counters(self):
        with self._lock:
            self.call_counter = 0
            self.batch_counter = 0

    def _count(self, items):
        with self._lock:
            self.call_counter += items
            self.batch_counter += 1


def set_trainable(handle, trainable):
    """Freeze or unfreeze every parameter behind a handle."""
    handle.module.requires_grad_(bool(trainable))
    handle.trainable = bool(trainable)
    handle.module.eval()


def encode_images(handle, patches, grad=False):
    """Encode image patches into normalised embeddings.

    Parameters
    ----------
    handle : EncoderHandle
        A handle of kind ``image``.
    patches : list of ndarray of type uint8, size (H, W, 3), or Tensor
        Equally sized patches, or an already stacked ``(N, 3, H, W)`` float
        batch in ``[0, 1]``.
    grad : bool, optional
        Keep the autograd graph, by default False

    Returns
    -------
    EmbeddingMatrix
        One unit-norm row per patch, in input order.

    Raises
    ------
    ShapeMismatch
        If no patches are given or their sizes differ.
    EncoderFailure
        If the backend raises.

    """
    if handle.kind is not Kind.IMAGE:
        raise ValueError("encode_images needs an image encoder, got {}".format(handle.kind.value))

    if isinstance(patches, torch.Tensor):
        batch = patches
    else:
        patches = list(patches)
        if not patches:
            raise ShapeMismatch("no patches to encode")
        shapes = {np.shape(p)[:2] for p in patches}
        if len(shapes) != 1:
            raise ShapeMismatch("patches differ in size: {}".format(sorted(shapes)))
        batch = pixels_to_tensor(patches)

    if batch.ndim != 4 or batch.shape[0] == 0:
        raise ShapeMismatch("expected a non-empty (N, 3, H, W) batch, got {}".format(tuple(batch.shape)))

    raw = _forward(handle, batch.to(handle.device), grad)
    handle._count(batch.shape[0])

    return EmbeddingMatrix(l2_normalize(raw), normalized=True)


def encode_texts(handle, texts, grad=False):
    """Encode text prompts into normalised embeddings, one row per text."""
    if handle.kind is not Kind.TEXT:
        raise ValueError("encode_texts needs a text encoder, got {}".format(handle.kind.value))

    texts = list(texts)
    if not texts:
        raise EncoderFailure("no texts to encode")

    raw = _forward(handle, texts, grad)
    handle._count(len(texts))

    return EmbeddingMatrix(l2_normalize(raw), normalized=True)


def _forward(handle, inputs, grad):
    try:
        with torch.set_grad_enabled(grad):
            raw = handle.module(inputs)
    except EncoderFailure:
        raise
    except Exception as err:
        raise EncoderFailure(
            "{} {} encoder failed: {}".format(handle.backend, handle.kind.value, err)
        ) from err

    if raw.ndim != 2:
        raise EncoderFailure("encoder returned shape {}, expected (N, C)".format(tuple(raw.shape)))

    return raw


def similarity(img, txt):
    """Compute the image-text similarity matrix ``S = I R'^T``.

    Parameters
    ----------
    img : EmbeddingMatrix
        ``M x C`` image embeddings.
    txt : EmbeddingMatrix
        ``N x C`` text embeddings.

    Returns
    -------
    SimilarityMatrix
        ``M x N``; entries lie in ``[-1, 1]`` when both inputs are normalised.

    Raises
    ------
    DimMismatch
        If the embedding widths differ.

    Examples
    --------
    >>> s = similarity(EmbeddingMatrix([[0.6, 0.8]]), EmbeddingMatrix([[0.8, 0.6]]))
    >>> round(float(s.values[0, 0]), 2)
    0.96

    """
    if img.dim != txt.dim:
        raise DimMismatch("image dim {} != text dim {}".format(img.dim, txt.dim))

    text_values = txt.values.to(device=img.values.device, dtype=img.values.dtype)

    return SimilarityMatrix(img.values @ text_values.T)


def state_bytes(state):
    """Serialise a module or state dict into a deterministic byte string."""
    if hasattr(state, "state_dict"):
        state = state.state_dict()

    chunks = []
    for name, tensor in state.items():
        array = tensor.detach().cpu().contiguous().numpy()
        header = "{}|{}|{}\n".format(name, array.dtype.str, list(array.shape))
        chunks.append(header.encode("utf-8"))
        chunks.append(array.tobytes())

    return b"".join(chunks)


def state_digest(state):
    return hashlib.sha256(state_bytes(state)).hexdigest()
