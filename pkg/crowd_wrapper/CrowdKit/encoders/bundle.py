import copy
import logging
from dataclasses import dataclass

from CrowdKit.encoders.base import EncoderHandle, set_trainable
from CrowdKit.encoders.mock import make_mock_count_encoder, make_toy_image_encoder
from CrowdKit.encoders.pretrained import load_clip_towers
from CrowdKit.prompts import DEFAULT_COARSE_CLASSES, DEFAULT_FINE_CLASSES

logger = logging.getLogger(__name__)

BACKENDS = ("pretrained", "mock", "toy")


@dataclass
class EncoderBundle:
    """The three encoders inference needs.

    ``original`` filters tiles, ``finetuned`` maps survivors to counts and
    ``text`` embeds every prompt family.
    """

    original: EncoderHandle
    finetuned: EncoderHandle
    text: EncoderHandle


def make_encoders(encoder_cfg, coarse_classes=DEFAULT_COARSE_CLASSES, fine_classes=DEFAULT_FINE_CLASSES):
    """Build a fresh ``(image_handle, text_handle)`` pair for a backend.

    ``encoder_cfg`` needs ``backend``, ``seed``, ``dim``, ``model_name``,
    ``pretrained`` and ``device`` attributes (see ``CrowdKit.config``).
    """
    backend = encoder_cfg.backend

    if backend == "pretrained":
        return load_clip_towers(encoder_cfg.model_name, encoder_cfg.pretrained, encoder_cfg.device)

    image, text = make_mock_count_encoder(
        seed=encoder_cfg.seed,
        coarse_classes=coarse_classes,
        fine_classes=fine_classes,
        dim=encoder_cfg.dim,
    )
    if backend == "toy":
        image = make_toy_image_encoder(dim=encoder_cfg.dim)
    elif backend != "mock":
        raise ValueError("unknown encoder backend {!r}, expected one of {}".format(backend, BACKENDS))

    return image, text


def load_encoders(encoder_cfg, checkpoint=None, coarse_classes=DEFAULT_COARSE_CLASSES, fine_classes=DEFAULT_FINE_CLASSES):
    """Build the inference encoders, applying a fine-tuning checkpoint.

    Without a checkpoint the fine-tuned encoder is the original one, which is
    the zero-shot configuration.
    """
    original, text = make_encoders(encoder_cfg, coarse_classes, fine_classes)
    set_trainable(original, False)

    if checkpoint is None:
        logger.info("No checkpoint given, ranking stage runs zero-shot")
        return EncoderBundle(original=original, finetuned=original, text=text)

    finetuned = EncoderHandle(
        original.kind, original.backend, copy.deepcopy(original.module), trainable=False
    )
    finetuned.module.load_state_dict(checkpoint.image_encoder_state)
    finetuned.bump_version()

    if checkpoint.text_encoder_state is not None:
        logger.info("Applying fine-tuned text encoder weights from checkpoint")
        text.module.load_state_dict(checkpoint.text_encoder_state)
        text.bump_version()

    return EncoderBundle(original=original, finetuned=finetuned, text=text)
