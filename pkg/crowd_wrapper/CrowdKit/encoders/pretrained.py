# -*- coding: utf-8 -*-
"""Thin adapter over ``open_clip`` checkpoints.

``open_clip`` is an optional dependency (``pip install crowd-kit[pretrained]``)
and is only imported when a pretrained backend is requested.
"""

import logging

import torch
from torch import nn

from CrowdKit.encoders.base import EncoderHandle, Kind
from CrowdKit.errors import EncoderFailure

logger = logging.getLogger(__name__)

# CLIP's published normalisation, used when the model does not carry its own.
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class ClipImageTower(nn.Module):
    def __init__(self, visual, mean=CLIP_MEAN, std=CLIP_STD):
        super().__init__()
        self.visual = visual
        self.register_buffer("mean", torch.tensor(mean).view(1, 3, 1, 1), persistent=False)
        self.register_buffer("std", torch.tensor(std).view(1, 3, 1, 1), persistent=False)

    def forward(self, batch):
        batch = (batch.to(self.mean) - self.mean) / self.std
        return self.visual(batch)


class ClipTextTower(nn.Module):
    """The text half of a CLIP model; the visual tower has been removed."""

    def __init__(self, model, tokenizer):
        super().__init__()
        self.model = model
        self.tokenizer = tokenizer

    def forward(self, texts):
        device = next(self.model.parameters()).device
        tokens = self.tokenizer(list(texts)).to(device)
        return self.model.encode_text(tokens)


def load_clip_towers(model_name="ViT-B-16", pretrained="openai", device="cpu"):
    """Load a CLIP checkpoint and split it into image and text handles.

    Returns
    -------
    tuple of EncoderHandle
        ``(image_handle, text_handle)``, both frozen.

    Raises
    ------
    EncoderFailure
        If ``open_clip`` is missing or the checkpoint cannot be loaded.

    """
    try:
        import open_clip
    except ImportError as err:
        raise EncoderFailure(
            "the pretrained backend needs open_clip: pip install 'crowd-kit[pretrained]'"
        ) from err

    logger.info("Loading CLIP %s (%s) on %s", model_name, pretrained, device)

    try:
        model, _, _ = open_clip.create_model_and_transforms(model_name, pretrained=pretrained)
        tokenizer = open_clip.get_tokenizer(model_name)
    except Exception as err:
        raise EncoderFailure("cannot load CLIP {} ({}): {}".format(model_name, pretrained, err)) from err

    model = model.to(device).eval()

    visual = model.visual
    mean = tuple(getattr(visual, "image_mean", None) or CLIP_MEAN)
    std = tuple(getattr(visual, "image_std", None) or CLIP_STD)
    model.visual = nn.Identity()

    image = EncoderHandle(Kind.IMAGE, "pretrained", ClipImageTower(visual, mean, std).to(device))
    text = EncoderHandle(Kind.TEXT, "pretrained", ClipTextTower(model, tokenizer))

    return image, text
