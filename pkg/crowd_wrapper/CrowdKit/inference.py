# -*- coding: utf-8 -*-
"""This module houses the progressive filtering inference pipeline.

An image is tiled into a P x P grid and each tile goes through up to three
stages:

1. coarse: the original image encoder against "The object is [class]"
   prompts; tiles not classified as the crowd class are dropped.
2. fine: the original image encoder against "The objects are [class]"
   prompts, on stage 1 survivors only; tiles not classified as heads are
   dropped.
3. ranking: the fine-tuned image encoder against the ranking prompts; each
   survivor is assigned the count of its most similar prompt.

Dropped tiles count as zero and the image total is the sum over tiles. Text
embeddings for all three prompt sets are computed once per process.

"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from CrowdKit.encoders import EmbeddingMatrix, encode_images
from CrowdKit.errors import DimMismatch, ShapeMismatch
from CrowdKit.geometry import (
    DEFAULT_TARGET_SIDE,
    Box,
    GridSpec,
    ImageRef,
    grid_patches,
    load_image,
    resize_long_side,
    tile_grid,
)
from CrowdKit.prompts import PromptSet, Stage, embed_prompt_set

logger = logging.getLogger(__name__)

STAGES = (Stage.COARSE, Stage.FINE, Stage.RANKING)


@dataclass
class InferenceConfig:
    grid: GridSpec
    coarse_prompts: PromptSet
    fine_prompts: PromptSet
    ranking_prompts: PromptSet
    use_finetuned_for_ranking: bool = True
    use_coarse_stage: bool = True
    use_fine_stage: bool = True
    keep_threshold: Optional[float] = None
    softmax_scale: float = 100.0
    resize_max_long: Optional[int] = None
    target_side: int = DEFAULT_TARGET_SIDE

    def __post_init__(self):
        if isinstance(self.grid, int):
            self.grid = GridSpec(self.grid)
        if self.ranking_prompts.counts is None:
            raise ValueError("ranking prompts must carry their counts")
        if self.coarse_prompts.stage is not Stage.COARSE or self.fine_prompts.stage is not Stage.FINE:
            raise ValueError("coarse_prompts/fine_prompts have the wrong stage")
        if self.keep_threshold is not None and not 0.0 <= self.keep_threshold <= 1.0:
            raise ValueError("keep_threshold must lie in [0, 1], got {}".format(self.keep_threshold))


@dataclass
class StageDecision:
    stage: Stage
    scores: Tuple[float, ...]
    chosen_index: int
    kept: Optional[bool] = None

    def to_dict(self):
        record = {
            "stage": self.stage.value,
            "scores": list(self.scores),
            "chosen_index": self.chosen_index,
        }
        if self.kept is not None:
            record["kept"] = self.kept
        return record


@dataclass
class TileResult:
    box: Box
    decisions: List[StageDecision] = field(default_factory=list)
    patch_count: int = 0

    def to_dict(self):
        return {
            "box": self.box.as_list(),
            "decisions": [d.to_dict() for d in self.decisions],
            "patch_count": self.patch_count,
        }


@dataclass
class CountPrediction:
    image: ImageRef
    p: int
    tiles: List[TileResult]
    total: int
    encoded: Dict[str, int] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def fps(self):
        seconds = self.timing.get("total", 0.0)
        return 1.0 / seconds if seconds > 0 else float("inf")

    def to_record(self, include_timing=False):
        """One JSON-ready record; timing is left out unless asked for."""
        record = {
            "image": self.image.path,
            "width": self.image.width,
            "height": self.image.height,
            "P": self.p,
            "tiles": [t.to_dict() for t in self.tiles],
            "encoded": dict(self.encoded),
            "total": self.total,
        }
        if include_timing:
            record["timing"] = dict(self.timing)
        return record


def _row(patch_embedding):
    if isinstance(patch_embedding, torch.Tensor):
        patch_embedding = patch_embedding.detach().cpu().to(torch.float64).numpy()
    return np.asarray(patch_embedding, dtype=np.float64).reshape(-1)


def _scores(patch_embedding, prompts, txt_matrix):
    row = _row(patch_embedding)
    text = txt_matrix.numpy() if isinstance(txt_matrix, EmbeddingMatrix) else np.asarray(txt_matrix, dtype=np.float64)

    if text.shape[0] != len(prompts):
        raise ShapeMismatch("{} text rows for {} prompts".format(text.shape[0], len(prompts)))
    if text.shape[1] != row.shape[0]:
        raise DimMismatch("patch dim {} != text dim {}".format(row.shape[0], text.shape[1]))

    return text @ row


def stage_filter(patch_embedding, prompts, txt_matrix, keep_threshold=None, softmax_scale=100.0):
    """Classify one tile against a filtering stage's class prompts.

    The tile is kept when the target class wins the argmax; a tie with the
    target counts as a win. With ``keep_threshold`` set, the tile is kept
    instead when the softmax probability of the target, at logit scale
    ``softmax_scale``, reaches the threshold.

    Parameters
    ----------
    patch_embedding : array_like, size (C)
    prompts : PromptSet
        A coarse or fine prompt set.
    txt_matrix : EmbeddingMatrix
        The prompt set's embeddings, one row per prompt.

    Returns
    -------
    StageDecision

    """
    if prompts.stage is Stage.RANKING:
        raise ValueError("stage_filter runs the coarse and fine stages only")

    scores = _scores(patch_embedding, prompts, txt_matrix)
    target = prompts.target_index

    best = scores.max()
    chosen = target if scores[target] == best else int(np.argmax(scores))

    if keep_threshold is None:
        kept = chosen == target
    else:
        logits = softmax_scale * (scores - best)
        probs = np.exp(logits) / np.exp(logits).sum()
        kept = bool(probs[target] >= keep_threshold)

    return StageDecision(prompts.stage, tuple(float(s) for s in scores), chosen, kept)


def rank_decision(patch_embedding, ranking_prompts, txt_matrix):
    """Pick the most similar ranking prompt; ties go to the smaller count."""
    if ranking_prompts.counts is None:
        raise ValueError("ranking prompts must carry their counts")

    scores = _scores(patch_embedding, ranking_prompts, txt_matrix)
    # counts increase with the index, so the first maximum is the smallest count
    chosen = int(np.argmax(scores))

    return StageDecision(Stage.RANKING, tuple(float(s) for s in scores), chosen)


def stage_count(patch_embedding, ranking_prompts, txt_matrix):
    """Map one tile to the count of its most similar ranking prompt.

    Examples
    --------
    A tile embedded at ``u(90)`` by the mock encoder, against the default
    ranking prompts, returns 90.

    """
    decision = rank_decision(patch_embedding, ranking_prompts, txt_matrix)
    return ranking_prompts.counts[decision.chosen_index]


def predict(image, enc_original, enc_finetuned, text_enc, cfg):
    """Count the people in one image with progressive filtering.

    Parameters
    ----------
    image : ImageRef
        The image at its native size; it is shrunk first when
        ``cfg.resize_max_long`` is set.
    enc_original : EncoderHandle
        The image encoder used for the filtering stages.
    enc_finetuned : EncoderHandle
        The image encoder used for the ranking stage. Ignored when
        ``cfg.use_finetuned_for_ranking`` is false.
    text_enc : EncoderHandle
        Embeds all three prompt sets.
    cfg : InferenceConfig

    Returns
    -------
    CountPrediction
        Per-tile decisions and counts, the total, the number of patches
        encoded per stage, and wall-clock seconds per stage.

    """
    start = time.perf_counter()

    if cfg.resize_max_long is not None:
        image = resize_long_side(image, cfg.resize_max_long)

    pixels = load_image(image)
    boxes = tile_grid(image, cfg.grid)
    patches = grid_patches(pixels, boxes, cfg.target_side)
    tiles = [TileResult(box) for box in boxes]

    timing = {"load": time.perf_counter() - start}
    encoded = {}
    survivors = list(range(len(tiles)))

    filters = (
        (Stage.COARSE, cfg.use_coarse_stage, cfg.coarse_prompts),
        (Stage.FINE, cfg.use_fine_stage, cfg.fine_prompts),
    )
    for stage, enabled, prompts in filters:
        stage_start = time.perf_counter()
        encoded[stage.value] = 0

        if enabled and survivors:
            text = embed_prompt_set(prompts, text_enc)
            rows = encode_images(enc_original, [patches[i] for i in survivors]).numpy()
            encoded[stage.value] = len(survivors)

            kept = []
            for row, index in zip(rows, survivors):
                decision = stage_filter(row, prompts, text, cfg.keep_threshold, cfg.softmax_scale)
                tiles[index].decisions.append(decision)
                if decision.kept:
                    kept.append(index)
            survivors = kept

        timing[stage.value] = time.perf_counter() - stage_start

    stage_start = time.perf_counter()
    encoded[Stage.RANKING.value] = 0

    if survivors:
        ranking_encoder = enc_finetuned if cfg.use_finetuned_for_ranking else enc_original
        text = embed_prompt_set(cfg.ranking_prompts, text_enc)
        rows = encode_images(ranking_encoder, [patches[i] for i in survivors]).numpy()
        encoded[Stage.RANKING.value] = len(survivors)

        for row, index in zip(rows, survivors):
            decision = rank_decision(row, cfg.ranking_prompts, text)
            tiles[index].decisions.append(decision)
            tiles[index].patch_count = cfg.ranking_prompts.counts[decision.chosen_index]

    timing[Stage.RANKING.value] = time.perf_counter() - stage_start
    timing["total"] = time.perf_counter() - start

    total = int(sum(tile.patch_count for tile in tiles))
    logger.debug("%s: %d/%d tiles counted, total %d", image.path, len(survivors), len(tiles), total)

    return CountPrediction(image=image, p=cfg.grid.p, tiles=tiles, total=total, encoded=encoded, timing=timing)


def random_baseline(image, cfg, seed=0):
    """Assign every tile a uniformly random ranking count.

    No encoder is involved; the result only depends on the image size, the
    grid and ``seed``.
    """
    if cfg.resize_max_long is not None:
        image = resize_long_side(image, cfg.resize_max_long)

    rng = np.random.default_rng(seed)
    counts = cfg.ranking_prompts.counts
    tiles = []
    for box in tile_grid(image, cfg.grid):
        index = int(rng.integers(len(counts)))
        decision = StageDecision(Stage.RANKING, (), index)
        tiles.append(TileResult(box, [decision], counts[index]))

    total = int(sum(tile.patch_count for tile in tiles))

    return CountPrediction(image=image, p=cfg.grid.p, tiles=tiles, total=total)
