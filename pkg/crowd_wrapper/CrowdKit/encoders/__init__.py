"""Image and text encoders behind one interface, plus the similarity math."""

from CrowdKit.encoders.base import (
    EmbeddingMatrix,
    EncoderHandle,
    Kind,
    SimilarityMatrix,
    encode_images,
    encode_texts,
    set_trainable,
    similarity,
    state_bytes,
    state_digest,
)
from CrowdKit.encoders.bundle import BACKENDS, EncoderBundle, load_encoders, make_encoders
from CrowdKit.encoders.mock import (
    MockImageEncoder,
    MockTextEncoder,
    ToyImageEncoder,
    count_direction,
    make_mock_count_encoder,
    make_toy_image_encoder,
)

__all__ = [
    "BACKENDS",
    "EmbeddingMatrix",
    "EncoderBundle",
    "EncoderHandle",
    "Kind",
    "MockImageEncoder",
    "MockTextEncoder",
    "SimilarityMatrix",
    "ToyImageEncoder",
    "count_direction",
    "encode_images",
    "encode_texts",
    "load_encoders",
    "make_encoders",
    "make_mock_count_encoder",
    "make_toy_image_encoder",
    "set_trainable",
    "similarity",
    "state_bytes",
    "state_digest",
]
