import sys

import numpy as np
import pytest
import torch
from torch import nn

from CrowdKit.config import EncoderConfig
from CrowdKit.encoders import (
    EmbeddingMatrix,
    EncoderHandle,
    Kind,
    MockImageEncoder,
    count_direction,
    encode_images,
    encode_texts,
    load_encoders,
    make_encoders,
    make_mock_count_encoder,
    make_toy_image_encoder,
    set_trainable,
    similarity,
    state_bytes,
    state_digest,
)
from CrowdKit.encoders.mock import decode_pixel_code, encode_pixel_code
from CrowdKit.encoders.pretrained import load_clip_towers
from CrowdKit.errors import DimMismatch, EncoderFailure, ShapeMismatch
from CrowdKit.synthetic import TilePlant


def flat_patch(rgb, side=224):
    return np.full((side, side, 3), rgb, dtype=np.uint8)


def test_count_directions_order_by_distance():
    anchor = count_direction(90)
    others = [count_direction(c) for c in range(90, 301)]
    dots = [float(anchor @ u) for u in others]

    assert all(b < a for a, b in zip(dots, dots[1:]))
    assert dots[0] == pytest.approx(1.0)


def test_pixel_code_packs_counts_and_concepts():
    assert encode_pixel_code(300, 0, 0) == (17, 44, 1)
    assert decode_pixel_code((17, 44, 1)) == (300, 0, 0)
    assert decode_pixel_code((0, 0, 0)) == (0, -1, -1)
    with pytest.raises(ValueError):
        encode_pixel_code(70000)


def test_encode_images_returns_unit_rows():
    image_enc, _ = make_mock_count_encoder(seed=0)
    patches = [flat_patch(TilePlant(count=c).code()) for c in (20, 90, 195)]

    embeddings = encode_images(image_enc, patches)

    assert embeddings.rows == 3
    assert embeddings.dim == 16
    np.testing.assert_allclose(np.linalg.norm(embeddings.numpy(), axis=1), 1.0, atol=1e-6)
    assert image_enc.call_counter == 3
    assert image_enc.batch_counter == 1


def test_encode_images_rejects_bad_batches():
    image_enc, text_enc = make_mock_count_encoder(seed=0)

    with pytest.raises(ShapeMismatch):
        encode_images(image_enc, [])
    with pytest.raises(ShapeMismatch):
        encode_images(image_enc, [flat_patch((0, 0, 0), 224), flat_patch((0, 0, 0), 112)])
    with pytest.raises(ValueError):
        encode_images(text_enc, [flat_patch((0, 0, 0))])


def test_encode_texts():
    _, text_enc = make_mock_count_encoder(seed=0)

    embeddings = encode_texts(text_enc, ["There are 55 persons in the crowd", "The object is tree"])

    values = embeddings.numpy()
    np.testing.assert_allclose(values[0, :2], count_direction(55), atol=1e-6)
    assert values[1, 2 + 1] == pytest.approx(1.0)
    with pytest.raises(EncoderFailure):
        encode_texts(text_enc, [])


def test_unknown_text_is_seeded():
    _, text_a = make_mock_count_encoder(seed=3)
    _, text_b = make_mock_count_encoder(seed=3)

    a = encode_texts(text_a, ["a photo of nothing"]).numpy()
    b = encode_texts(text_b, ["a photo of nothing"]).numpy()

    np.testing.assert_array_equal(a, b)


class Exploding(nn.Module):
    def forward(self, batch):
        raise RuntimeError("out of memory")


def test_backend_errors_become_encoder_failures():
    handle = EncoderHandle(Kind.IMAGE, "test", Exploding())

    with pytest.raises(EncoderFailure, match="out of memory"):
        encode_images(handle, [flat_patch((1, 2, 3))])


def test_similarity():
    s = similarity(EmbeddingMatrix([[0.6, 0.8]]), EmbeddingMatrix([[0.8, 0.6]]))

    assert float(s.values[0, 0]) == pytest.approx(0.96)
    assert (s.m, s.n) == (1, 1)
    with pytest.raises(DimMismatch):
        similarity(EmbeddingMatrix([[1.0, 0.0]]), EmbeddingMatrix([[1.0, 0.0, 0.0]]))


def test_embedding_matrix_must_be_2d():
    with pytest.raises(ShapeMismatch):
        EmbeddingMatrix([1.0, 2.0])


def test_set_trainable():
    image_enc, _ = make_mock_count_encoder(seed=0)

    assert image_enc.trainable
    assert len(image_enc.parameters()) == 1

    set_trainable(image_enc, False)

    assert not image_enc.trainable
    assert image_enc.parameters() == []


def test_state_digest_tracks_weights():
    image_a, _ = make_mock_count_encoder(seed=0)
    image_b, _ = make_mock_count_encoder(seed=0)

    assert state_bytes(image_a.module) == state_bytes(image_b.module.state_dict())
    assert state_digest(image_a.module) == state_digest(image_b.module)

    with torch.no_grad():
        image_b.module.projection.weight[0, 0] += 1e-3

    assert state_digest(image_a.module) != state_digest(image_b.module)


def test_toy_encoder_reads_mean_intensity():
    toy = make_toy_image_encoder(dim=4, slope=-2.0, offset=1.0)

    values = encode_images(toy, [flat_patch((0, 0, 0)), flat_patch((255, 255, 255))]).numpy()

    np.testing.assert_allclose(values[0, :2], [np.cos(1.0), np.sin(1.0)], atol=1e-6)
    np.testing.assert_allclose(values[1, :2], [np.cos(-1.0), np.sin(-1.0)], atol=1e-6)


def test_mock_encoder_needs_room_for_concepts():
    with pytest.raises(ValueError):
        MockImageEncoder(dim=4)


def test_make_encoders_backends():
    image_enc, text_enc = make_encoders(EncoderConfig(backend="toy"))
    assert image_enc.backend == "toy"
    assert text_enc.backend == "mock"

    with pytest.raises(ValueError):
        EncoderConfig(backend="nope")


def test_zero_shot_bundle_shares_the_image_encoder(mock_encoder_cfg):
    bundle = load_encoders(mock_encoder_cfg)

    assert bundle.finetuned is bundle.original
    assert not bundle.original.trainable


def test_missing_open_clip(monkeypatch):
    monkeypatch.setitem(sys.modules, "open_clip", None)

    with pytest.raises(EncoderFailure, match="open_clip"):
        load_clip_towers()
