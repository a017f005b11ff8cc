import json
from itertools import combinations

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from CrowdKit.datasets import ingest
from CrowdKit.encoders import (
    EmbeddingMatrix,
    SimilarityMatrix,
    make_mock_count_encoder,
    make_toy_image_encoder,
    state_bytes,
)
from CrowdKit.errors import EmptyStream, KinkTooClose, NotSquare
from CrowdKit.geometry import build_pyramid
from CrowdKit.synthetic import make_ring_dataset, radial_image
from CrowdKit.training import (
    Checkpoint,
    TrainConfig,
    gradient_check,
    normalized_similarity_fn,
    pair_indices,
    pyramids_from_images,
    ranking_loss,
    train,
)


def brute_force_loss(s):
    m = s.shape[0]
    terms = [max(0.0, s[a, b] - s[b, b]) for a, b in combinations(range(m), 2)]
    return sum(terms) / len(terms)


@pytest.fixture
def ring_pyramids(tmp_path):
    manifest = ingest(make_ring_dataset(tmp_path, n_images=4))
    return pyramids_from_images(manifest.image_refs(), TrainConfig())


def test_loss_example():
    report = ranking_loss(SimilarityMatrix([[0.9, 0.8], [0.1, 0.5]]))

    assert report.value == pytest.approx(0.3)
    assert report.violated_pairs == 1
    assert report.total_pairs == 1


def test_loss_is_zero_on_an_ordered_diagonal():
    s = np.full((4, 4), 0.1)
    np.fill_diagonal(s, 0.9)

    assert ranking_loss(SimilarityMatrix(s)).value == 0.0


def test_loss_needs_a_square_matrix():
    with pytest.raises(NotSquare):
        ranking_loss(SimilarityMatrix(np.zeros((3, 4))))


def test_pair_modes():
    rows, cols = pair_indices(4, "adjacent")
    assert rows.tolist() == [0, 1, 2]
    assert cols.tolist() == [1, 2, 3]

    rows, cols = pair_indices(4)
    assert len(rows) == 6
    assert bool((rows < cols).all())

    with pytest.raises(ValueError):
        pair_indices(4, "diagonal")


def test_sum_reduction():
    s = SimilarityMatrix([[0.0, 0.4, 0.4], [0.0, 0.1, 0.3], [0.0, 0.0, 0.2]])

    report = ranking_loss(s, reduction="sum")

    assert report.value == pytest.approx(0.3 + 0.2 + 0.1)
    assert report.violated_pairs == 3


def test_loss_properties_on_random_matrices():
    rng = np.random.default_rng(0)

    for trial in range(1000):
        m = int(rng.integers(2, 9))
        s = rng.uniform(-1, 1, size=(m, m))
        if trial % 3 == 0:
            # Push the diagonal above its column so some matrices are perfectly ranked.
            s[np.diag_indices(m)] = s.max(axis=0) + rng.uniform(0, 0.1, size=m)

        loss = ranking_loss(SimilarityMatrix(s)).value
        ordered = all(s[a, b] <= s[b, b] for a, b in combinations(range(m), 2))
        assert (loss == 0.0) == ordered

        shifted = s + rng.uniform(-1, 1, size=(1, m))
        assert ranking_loss(SimilarityMatrix(shifted)).value == pytest.approx(loss, abs=1e-12)

        assert loss == pytest.approx(brute_force_loss(s), abs=1e-12)


def loss_of(s):
    return ranking_loss(SimilarityMatrix(s)).value


@given(seed=st.integers(0, 2**32 - 1), delta=st.floats(0.0, 1.0), data=st.data())
def test_loss_is_monotone_in_single_entries(seed, delta, data):
    m = data.draw(st.integers(2, 8))
    i = data.draw(st.integers(1, m - 1))
    smaller = data.draw(st.integers(0, i - 1))
    s = np.random.default_rng(seed).uniform(-1, 1, size=(m, m))
    base = loss_of(s)

    diagonal = s.copy()
    diagonal[i, i] += delta
    assert loss_of(diagonal) <= base + 1e-12

    upper = s.copy()
    upper[smaller, i] += delta
    assert loss_of(upper) >= base - 1e-12


@given(seed=st.integers(0, 2**32 - 1), m=st.integers(2, 8))
def test_reversed_rows_break_the_ranking(seed, m):
    rng = np.random.default_rng(seed)
    s = rng.uniform(-1, 1, size=(m, m))
    s[np.diag_indices(m)] = s.max(axis=0) + rng.uniform(0.01, 0.1, size=m)
    assert loss_of(s) == 0.0

    assert loss_of(s[::-1].copy()) > 0.0


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    checked = 0

    while checked < 100:
        text = rng.standard_normal((6, 8))
        text /= np.linalg.norm(text, axis=1, keepdims=True)
        point = rng.standard_normal((6, 8))
        try:
            error = gradient_check(normalized_similarity_fn(text), EmbeddingMatrix(point))
        except KinkTooClose:
            continue
        assert error < 1e-4
        checked += 1


def test_gradient_check_refuses_kinks():
    point = torch.tensor([[0.5, 0.5], [0.1, 0.5]], dtype=torch.float64)

    with pytest.raises(KinkTooClose):
        gradient_check(SimilarityMatrix, point)
    with pytest.raises(ValueError):
        gradient_check(SimilarityMatrix, point, epsilon=0.1)


def test_gradient_vanishes_when_every_pair_is_ordered():
    s = np.full((4, 4), 0.1)
    np.fill_diagonal(s, 0.9)
    point = torch.tensor(s, dtype=torch.float64, requires_grad=True)

    (grad,) = torch.autograd.grad(ranking_loss(SimilarityMatrix(point)).loss, point)

    assert bool((grad == 0).all())
    assert gradient_check(SimilarityMatrix, point.detach()) == 0.0


def test_train_config_validates():
    with pytest.raises(ValueError):
        TrainConfig(m=5)
    with pytest.raises(ValueError):
        TrainConfig(pair_mode="adjacent_pairs")
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)


def test_train_needs_pyramids():
    image_enc, text_enc = make_mock_count_encoder(seed=0)

    with pytest.raises(EmptyStream):
        train([], image_enc, text_enc, TrainConfig(epochs=1))


def test_frozen_encoders_leave_weights_untouched(ring_pyramids):
    image_enc, text_enc = make_mock_count_encoder(seed=0)
    before = state_bytes(image_enc.module)

    checkpoint = train(
        ring_pyramids, image_enc, text_enc, TrainConfig(epochs=2, freeze_image=True, freeze_text=True)
    )

    assert checkpoint.image_state_bytes == before
    assert checkpoint.text_encoder_state is None
    assert image_enc.version == 0


def test_rank_consistent_pyramids_have_zero_loss(ring_pyramids):
    image_enc, text_enc = make_mock_count_encoder(seed=0)
    before = state_bytes(image_enc.module)

    checkpoint = train(ring_pyramids, image_enc, text_enc, TrainConfig(epochs=3, batch_pyramids=2))

    assert checkpoint.manifest["loss_history"] == [0.0, 0.0, 0.0]
    assert checkpoint.image_state_bytes == before


def test_toy_encoder_learns_the_ranking(tmp_path):
    image = radial_image(tmp_path / "radial.png", side=256)
    cfg = TrainConfig(epochs=100, learning_rate=0.1, batch_pyramids=1)
    pyramids = [build_pyramid(image, cfg.m, cfg.min_ratio)]
    toy = make_toy_image_encoder()
    _, text_enc = make_mock_count_encoder(seed=0)

    checkpoint = train(pyramids, toy, text_enc, cfg)

    history = checkpoint.manifest["loss_history"]
    assert history[0] > 0
    assert history[-1] <= 0.5 * history[0]


def test_checkpoint_save_and_load(tmp_path, ring_pyramids):
    image_enc, text_enc = make_mock_count_encoder(seed=0)
    log_path = tmp_path / "train_log.jsonl"

    checkpoint = train(
        ring_pyramids, image_enc, text_enc, TrainConfig(epochs=2), log_path=log_path, dataset="rings"
    )
    checkpoint.save(tmp_path / "ckpt")
    loaded = Checkpoint.load(tmp_path / "ckpt")

    assert loaded.image_state_bytes == checkpoint.image_state_bytes
    assert loaded.dataset == "rings"
    assert loaded.manifest["epochs_completed"] == 2
    assert loaded.manifest["optimizer"]["name"] == "RAdam"

    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1]
    assert set(records[0]) == {"epoch", "mean_loss", "violated_pair_rate", "wall_time"}


def test_checkpoint_digest_is_checked(tmp_path, ring_pyramids):
    image_enc, text_enc = make_mock_count_encoder(seed=0)
    checkpoint = train(ring_pyramids, image_enc, text_enc, TrainConfig(epochs=1))
    checkpoint.manifest["image_state_sha256"] = "0" * 64
    checkpoint.save(tmp_path / "ckpt")

    with pytest.raises(ValueError):
        Checkpoint.load(tmp_path / "ckpt")
    with pytest.raises(FileNotFoundError):
        Checkpoint.load(tmp_path / "missing")
