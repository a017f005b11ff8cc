import gc

import pytest

from CrowdKit.encoders import make_mock_count_encoder
from CrowdKit.errors import ShapeMismatch, TargetMissing
from CrowdKit.prompts import (
    EmbeddingCache,
    PromptSet,
    RankingPromptSpec,
    Stage,
    build_filter_prompts,
    build_ranking_prompts,
    embed_prompt_set,
)


def test_default_ranking_prompts():
    prompts = build_ranking_prompts(RankingPromptSpec())

    assert prompts.stage is Stage.RANKING
    assert prompts.counts == (20, 55, 90, 125, 160, 195)
    assert prompts.texts[0] == "There are 20 persons in the crowd"
    assert prompts.texts[-1] == "There are 195 persons in the crowd"


def test_alternative_interval():
    prompts = build_ranking_prompts(RankingPromptSpec(r0=20, k=30))

    assert prompts.counts == (20, 50, 80, 110, 140, 170)


def test_alphabetic_mode():
    prompts = build_ranking_prompts(RankingPromptSpec(alphabetic_mode=True))

    assert prompts.texts[1] == "There are A + 55 persons in the crowd"
    assert prompts.counts[1] == 55


@pytest.mark.parametrize("template", ["There are persons", "{} and {}"])
def test_template_needs_one_placeholder(template):
    with pytest.raises(ValueError):
        RankingPromptSpec(template=template)


@pytest.mark.parametrize("field, value", [("k", 0), ("n", 1), ("r0", -1)])
def test_ranking_spec_validates(field, value):
    with pytest.raises(ValueError):
        RankingPromptSpec(**{field: value})


def test_filter_prompts():
    coarse = build_filter_prompts("coarse", ["tree", "crowd", "sky"], "crowd")
    fine = build_filter_prompts(Stage.FINE, ["human heads", "human legs"], "human heads")

    assert coarse.texts == ("The object is tree", "The object is crowd", "The object is sky")
    assert coarse.target_index == 1
    assert fine.texts[0] == "The objects are human heads"
    assert fine.target_index == 0


def test_filter_prompts_need_their_target():
    with pytest.raises(TargetMissing):
        build_filter_prompts("coarse", ["tree", "sky"], "crowd")


def test_filter_prompts_need_two_classes():
    with pytest.raises(ValueError):
        build_filter_prompts("coarse", ["crowd"], "crowd")


def test_prompt_set_validation():
    with pytest.raises(ShapeMismatch):
        PromptSet(Stage.COARSE, ())
    with pytest.raises(TargetMissing):
        PromptSet(Stage.COARSE, ("a", "b"), target_index=2)
    with pytest.raises(ValueError):
        PromptSet(Stage.RANKING, ("a", "b"), counts=(5, 5))


def test_embeddings_are_computed_once_per_encoder_version():
    _, text_enc = make_mock_count_encoder(seed=0)
    prompts = build_ranking_prompts(RankingPromptSpec())
    cache = EmbeddingCache()

    first = embed_prompt_set(prompts, text_enc, cache)
    second = embed_prompt_set(prompts, text_enc, cache)

    assert first is second
    assert first.rows == 6
    assert text_enc.call_counter == 6
    assert len(cache) == 1

    text_enc.bump_version()
    embed_prompt_set(prompts, text_enc, cache)

    assert text_enc.call_counter == 12
    assert len(cache) == 1
    assert cache.n_encoders == 1


def test_cache_is_keyed_per_encoder():
    _, text_a = make_mock_count_encoder(seed=0)
    _, text_b = make_mock_count_encoder(seed=0)
    prompts = build_ranking_prompts(RankingPromptSpec())
    cache = EmbeddingCache()

    embed_prompt_set(prompts, text_a, cache)
    embed_prompt_set(prompts, text_b, cache)

    assert text_a.call_counter == 6
    assert text_b.call_counter == 6
    cache.clear()
    assert len(cache) == 0


def test_cache_releases_dropped_encoders():
    prompts = build_ranking_prompts(RankingPromptSpec())
    cache = EmbeddingCache()

    for seed in range(3):
        _, text_enc = make_mock_count_encoder(seed=seed)
        embed_prompt_set(prompts, text_enc, cache)
    del text_enc
    gc.collect()

    assert cache.n_encoders == 0
    assert len(cache) == 0
