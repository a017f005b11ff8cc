# -*- coding: utf-8 -*-
"""This module houses the multi-modal ranking loss and the fine-tuning loop.

Each training image yields one patch pyramid of M size-sorted crops. The crops
are encoded by the image encoder and compared against N = M ranking prompts
from a frozen text encoder, giving a square similarity matrix S. The loss asks
every diagonal entry ``s[i, i]`` to dominate the similarities that smaller
crops have with the same prompt, ``s[i', i]`` for ``i' < i``:

    L = mean over pairs of max(0, s[i', i] - s[i, i])

No annotation is read at any point; the trainer only ever sees ``ImageRef``.

"""

import hashlib
import json
import logging
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset
from tqdm import tqdm

from CrowdKit import __version__
from CrowdKit.array_utils import pixels_to_tensor
from CrowdKit.encoders import (
    EmbeddingMatrix,
    SimilarityMatrix,
    encode_images,
    encode_texts,
    set_trainable,
    state_bytes,
    state_digest,
)
from CrowdKit.errors import EmptyStream, ImageTooSmall, KinkTooClose, NotSquare
from CrowdKit.geometry import build_pyramid, load_image, pyramid_patches
from CrowdKit.prompts import RankingPromptSpec, build_ranking_prompts, embed_prompt_set

logger = logging.getLogger(__name__)

PAIR_MODES = ("all_pairs", "adjacent")
REDUCTIONS = ("mean", "sum")
CHECKPOINT_FORMAT = 1


@dataclass
class RankingLossReport:
    loss: torch.Tensor
    violated_pairs: int
    total_pairs: int

    @property
    def value(self):
        return float(self.loss.detach())


@dataclass
class TrainConfig:
    m: int = 6
    ranking: RankingPromptSpec = field(default_factory=RankingPromptSpec)
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_pyramids: int = 8
    freeze_text: bool = True
    freeze_image: bool = False
    seed: int = 0
    pair_mode: str = "all_pairs"
    reduction: str = "mean"
    min_ratio: float = 0.5
    target_side: int = 224
    num_workers: int = 0

    def __post_init__(self):
        if isinstance(self.ranking, dict):
            self.ranking = RankingPromptSpec(**self.ranking)
        if self.m != self.ranking.n:
            raise ValueError(
                "m ({}) must equal the number of ranking prompts ({})".format(self.m, self.ranking.n)
            )
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1, got {}".format(self.epochs))
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0, got {}".format(self.learning_rate))
        if self.batch_pyramids < 1:
            raise ValueError("batch_pyramids must be >= 1, got {}".format(self.batch_pyramids))
        if self.pair_mode not in PAIR_MODES:
            raise ValueError("pair_mode must be one of {}, got {!r}".format(PAIR_MODES, self.pair_mode))
        if self.reduction not in REDUCTIONS:
            raise ValueError("reduction must be one of {}, got {!r}".format(REDUCTIONS, self.reduction))

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    """Fine-tuned encoder weights plus the manifest describing how they were made."""

    image_encoder_state: "OrderedDict[str, torch.Tensor]"
    manifest: dict
    text_encoder_state: Optional["OrderedDict[str, torch.Tensor]"] = None

    @property
    def image_state_bytes(self):
        return state_bytes(self.image_encoder_state)

    @property
    def dataset(self):
        return self.manifest.get("dataset")

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)

        torch.save(self.image_encoder_state, directory / "image_encoder.pt")
        if self.text_encoder_state is not None:
            torch.save(self.text_encoder_state, directory / "text_encoder.pt")

        with open(directory / "manifest.json", "w") as f:
            json.dump(self.manifest, f, indent=2, sort_keys=True)
            f.write("\n")

        logger.info("Checkpoint written to %s", directory)
        return directory

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        manifest_path = directory / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError("checkpoint manifest not found: {}".format(manifest_path))

        with open(manifest_path) as f:
            manifest = json.load(f)

        if manifest.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(
                "unsupported checkpoint format {!r}".format(manifest.get("format_version"))
            )

        image_state = torch.load(directory / "image_encoder.pt", map_location="cpu")
        text_path = directory / "text_encoder.pt"
        text_state = torch.load(text_path, map_location="cpu") if text_path.exists() else None

        if state_digest(image_state) != manifest["image_state_sha256"]:
            raise ValueError("image encoder weights do not match the manifest digest")

        return cls(image_encoder_state=image_state, manifest=manifest, text_encoder_state=text_state)


def pair_indices(m, pair_mode="all_pairs"):
    """Return the ``(i', i)`` row/column index pairs checked by the loss.

    ``all_pairs`` checks every ``i' < i``; ``adjacent`` only ``i' = i - 1``.
    """
    if pair_mode == "all_pairs":
        rows, cols = np.triu_indices(m, k=1)
    elif pair_mode == "adjacent":
        rows, cols = np.arange(m - 1), np.arange(1, m)
    else:
        raise ValueError("unknown pair_mode {!r}".format(pair_mode))

    return torch.as_tensor(rows, dtype=torch.long), torch.as_tensor(cols, dtype=torch.long)


def hinge_arguments(S, pair_mode="all_pairs"):
    """Return ``s[i', i] - s[i, i]`` for every checked pair, as a tensor."""
    values = S.values
    if values.shape[0] != values.shape[1]:
        raise NotSquare("ranking loss needs a square matrix, got {}x{}".format(*values.shape))

    rows, cols = pair_indices(values.shape[0], pair_mode)
    rows, cols = rows.to(values.device), cols.to(values.device)

    return values[rows, cols] - values[cols, cols]


def ranking_loss(S, pair_mode="all_pairs", reduction="mean"):
    """Hinge ranking loss over the upper triangle of a square similarity matrix.

    Parameters
    ----------
    S : SimilarityMatrix
        ``M x M`` similarities between size-sorted patches and ranking prompts.
    pair_mode : {"all_pairs", "adjacent"}, optional
        Which ``i' < i`` pairs are checked, by default "all_pairs"
    reduction : {"mean", "sum"}, optional
        How hinge terms are combined, by default "mean"

    Returns
    -------
    RankingLossReport
        The loss (a differentiable tensor), how many hinge terms were strictly
        positive and how many pairs were checked.

    Raises
    ------
    NotSquare
        If ``S`` is not square.

    Examples
    --------
    >>> report = ranking_loss(SimilarityMatrix([[0.9, 0.8], [0.1, 0.5]]))
    >>> round(report.value, 6), report.violated_pairs, report.total_pairs
    (0.3, 1, 1)

    """
    args = hinge_arguments(S, pair_mode)
    hinge = torch.clamp(args, min=0.0)

    if hinge.numel() == 0:
        loss = S.values.sum() * 0.0
    elif reduction == "mean":
        loss = hinge.mean()
    elif reduction == "sum":
        loss = hinge.sum()
    else:
        raise ValueError("unknown reduction {!r}".format(reduction))

    return RankingLossReport(
        loss=loss,
        violated_pairs=int((args > 0).sum()),
        total_pairs=int(args.numel()),
    )


def normalized_similarity_fn(text_embeddings):
    """Map raw image embeddings to ``S`` against fixed text embeddings.

    Handy as the ``similarity_fn`` of ``gradient_check``: it includes the L2
    normalisation that the encoders apply.
    """
    text = text_embeddings.values if isinstance(text_embeddings, EmbeddingMatrix) else torch.as_tensor(text_embeddings)

    def similarity_fn(raw):
        unit = raw / raw.norm(dim=1, keepdim=True)
        return SimilarityMatrix(unit @ text.to(raw).T)

    return similarity_fn


def gradient_check(similarity_fn, point, epsilon=1e-5, pair_mode="all_pairs", reduction="mean"):
    """Compare the autograd gradient of the ranking loss with finite differences.

    Parameters
    ----------
    similarity_fn : callable
        Maps a float64 tensor shaped like ``point`` to a ``SimilarityMatrix``.
    point : EmbeddingMatrix or array_like
        Where to evaluate the gradient.
    epsilon : float, optional
        Central-difference step, in ``[1e-7, 1e-3]``, by default 1e-5

    Returns
    -------
    float
        ``max |analytic - numeric|`` divided by the largest gradient magnitude
        (0 when both gradients vanish).

    Raises
    ------
    KinkTooClose
        If any hinge argument lies within ``10 * epsilon`` of zero, where the
        loss is not differentiable.

    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3], got {}".format(epsilon))

    values = point.values if isinstance(point, EmbeddingMatrix) else point
    x = torch.as_tensor(values).detach().cpu().to(torch.float64).clone()
    x.requires_grad_(True)

    S = similarity_fn(x)
    args = hinge_arguments(S, pair_mode)
    closest = float(args.detach().abs().min()) if args.numel() else float("inf")
    if closest < 10 * epsilon:
        raise KinkTooClose(
            "hinge argument {:.3g} within {:.3g} of zero".format(closest, 10 * epsilon)
        )

    loss = ranking_loss(S, pair_mode, reduction).loss
    (analytic,) = torch.autograd.grad(loss, x, allow_unused=True)
    analytic = torch.zeros_like(x) if analytic is None else analytic.detach()

    numeric = torch.zeros_like(x)
    flat = numeric.view(-1)
    base = x.detach().clone()
    with torch.no_grad():
        for index in range(base.numel()):
            shifted = base.clone().view(-1)
            shifted[index] += epsilon
            upper = ranking_loss(similarity_fn(shifted.view_as(base)), pair_mode, reduction).loss
            shifted[index] -= 2 * epsilon
            lower = ranking_loss(similarity_fn(shifted.view_as(base)), pair_mode, reduction).loss
            flat[index] = (upper - lower) / (2 * epsilon)

    error = float((analytic - numeric).abs().max())
    scale = max(float(analytic.abs().max()), float(numeric.abs().max()))
    if scale < 1e-12:
        return error

    return error / scale


class PyramidDataset(Dataset):
    """Loads and crops one pyramid per item into an ``(M, 3, T, T)`` tensor."""

    def __init__(self, pyramids):
        self.pyramids = list(pyramids)

    def __len__(self):
        return len(self.pyramids)

    def __getitem__(self, index):
        pyramid = self.pyramids[index]
        pixels = load_image(pyramid.image)
        return pixels_to_tensor(pyramid_patches(pixels, pyramid))


def pyramids_from_images(images, cfg):
    """Build one pyramid per image, skipping images too small to crop."""
    pyramids = []
    for image in images:
        try:
            pyramids.append(build_pyramid(image, cfg.m, cfg.min_ratio, cfg.target_side))
        except ImageTooSmall as err:
            logger.warning("Skipping %s: %s", image.path, err)

    return pyramids


def train(pyramids, image_enc, text_enc, cfg, log_path=None, dataset=None, progress=False):
    """Fine-tune the image encoder so patch size order matches prompt order.

    Parameters
    ----------
    pyramids : sequence of PatchPyramid
        One pyramid per training image; iterated once per epoch.
    image_enc, text_enc : EncoderHandle
        The encoders to align. Their trainability is set from
        ``cfg.freeze_image`` and ``cfg.freeze_text``.
    cfg : TrainConfig
    log_path : str or Path, optional
        Where to append one JSON record per epoch.
    dataset : str, optional
        Name of the training dataset, recorded in the manifest.
    progress : bool, optional
        Show a tqdm bar over epochs, by default False

    Returns
    -------
    Checkpoint
        Final weights, with per-epoch loss history in the manifest.

    Raises
    ------
    EmptyStream
        If there are no pyramids.

    """
    pyramids = list(pyramids)
    if not pyramids:
        raise EmptyStream("no training pyramids")
    for pyramid in pyramids:
        if pyramid.m != cfg.m:
            raise ValueError("pyramid of {} crops, config expects {}".format(pyramid.m, cfg.m))

    torch.manual_seed(cfg.seed)

    set_trainable(image_enc, not cfg.freeze_image)
    set_trainable(text_enc, not cfg.freeze_text)

    prompts = build_ranking_prompts(cfg.ranking)
    params = image_enc.parameters() + text_enc.parameters()
    optimizer = torch.optim.RAdam(params, lr=cfg.learning_rate) if params else None

    if optimizer is None:
        logger.info("Both encoders frozen, weights will not change")

    loader = DataLoader(
        PyramidDataset(pyramids),
        batch_size=cfg.batch_pyramids,
        shuffle=True,
        generator=torch.Generator().manual_seed(cfg.seed),
        num_workers=cfg.num_workers,
    )

    log_file = open(log_path, "a") if log_path is not None else None
    history = []

    try:
        for epoch in tqdm(range(cfg.epochs), desc="epochs", disable=not progress):
            start = time.perf_counter()
            loss_sum, violated, total = 0.0, 0, 0

            for batch in loader:
                reports = _train_step(batch, image_enc, text_enc, prompts, optimizer, cfg)
                loss_sum += sum(r.value for r in reports)
                violated += sum(r.violated_pairs for r in reports)
                total += sum(r.total_pairs for r in reports)

            record = {
                "epoch": epoch,
                "mean_loss": loss_sum / len(pyramids),
                "violated_pair_rate": violated / total if total else 0.0,
                "wall_time": time.perf_counter() - start,
            }
            history.append(record["mean_loss"])
            logger.debug("epoch %d: loss %.6f", epoch, record["mean_loss"])

            if log_file is not None:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()

    if optimizer is not None:
        image_enc.bump_version()
        text_enc.bump_version()

    logger.info("Training finished: loss %.6f -> %.6f", history[0], history[-1])

    return _make_checkpoint(image_enc, text_enc, cfg, history, optimizer, dataset)


def _train_step(batch, image_enc, text_enc, prompts, optimizer, cfg):
    n_pyramids, m = batch.shape[:2]

    if cfg.freeze_text:
        text = embed_prompt_set(prompts, text_enc)
    else:
        text = encode_texts(text_enc, prompts.texts, grad=True)

    image = encode_images(image_enc, batch.flatten(0, 1), grad=not cfg.freeze_image)
    per_pyramid = image.values.view(n_pyramids, m, -1)
    text_values = text.values.to(per_pyramid)

    reports = [
        ranking_loss(SimilarityMatrix(per_pyramid[b] @ text_values.T), cfg.pair_mode, cfg.reduction)
        for b in range(n_pyramids)
    ]

    if optimizer is not None:
        loss = torch.stack([r.loss for r in reports]).mean()
        optimizer.zero_grad()
        if loss.requires_grad:
            loss.backward()
        optimizer.step()

    return reports


def _make_checkpoint(image_enc, text_enc, cfg, history, optimizer, dataset):
    image_state = OrderedDict((k, v.detach().cpu().clone()) for k, v in image_enc.module.state_dict().items())
    text_state = None
    if not cfg.freeze_text:
        text_state = OrderedDict((k, v.detach().cpu().clone()) for k, v in text_enc.module.state_dict().items())

    optimizer_info = {"name": "RAdam", "lr": cfg.learning_rate}
    if optimizer is not None:
        defaults = optimizer.defaults
        optimizer_info.update(
            betas=list(defaults["betas"]), eps=defaults["eps"], weight_decay=defaults["weight_decay"]
        )

    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "code_version": __version__,
        "backend": image_enc.backend,
        "dataset": dataset,
        "ranking": asdict(cfg.ranking),
        "epochs_completed": len(history),
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "batch_pyramids": cfg.batch_pyramids,
        "loss_history": history,
        "optimizer": optimizer_info,
        "image_state_sha256": state_digest(image_state),
    }

    return Checkpoint(image_encoder_state=image_state, manifest=manifest, text_encoder_state=text_state)
