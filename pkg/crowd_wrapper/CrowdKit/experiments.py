# -*- coding: utf-8 -*-
"""This module houses the experiment runners built on ``inference.predict``.

``run_eval`` predicts every image of one split and reduces the totals to an
``EvalReport``; ``run_cross_eval`` does the same for a model trained on a
different dataset; ``run_ablation`` sweeps one design choice and collects a
report per setting into a table.

Images are independent, so evaluation fans out over a thread pool. Results
are gathered back in manifest order and every reduction is a plain sum, which
keeps reports identical whatever the number of threads.

"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, List

import pandas as pd
from tqdm import tqdm

from CrowdKit.datasets import Split, subsample
from CrowdKit.encoders import load_encoders, make_encoders
from CrowdKit.errors import EmptyDataset
from CrowdKit.geometry import GridSpec
from CrowdKit.inference import predict, random_baseline
from CrowdKit.metrics import compute_metrics, throughput_summary
from CrowdKit.prompts import RankingPromptSpec, build_ranking_prompts
from CrowdKit.training import pyramids_from_images, train

logger = logging.getLogger(__name__)

ABLATION_KINDS = ("prompts", "patch_number", "freeze", "data_size", "stages")

FREEZE_GRID = ((False, False), (False, True), (True, False), (True, True))
STAGES_GRID = (
    (False, False, False),
    (False, False, True),
    (True, False, True),
    (True, True, True),
    "random",
)


def _n_workers(n_threads):
    if n_threads is None or n_threads == -1:
        return os.cpu_count() or 1
    if n_threads < 1:
        raise ValueError("n_threads must be -1 or >= 1, got {}".format(n_threads))
    return n_threads


def apply_policy(cfg, manifest):
    """Use the dataset's own grid size and resize limit."""
    return replace(cfg, grid=GridSpec(manifest.default_p), resize_max_long=manifest.resize_max_long)


def run_eval(manifest, encoders, cfg, split=Split.TEST, use_policy=True, n_threads=1, progress=False, baseline_seed=None):
    """Predict every image of a split and compute MAE and MSE.

    Parameters
    ----------
    manifest : DatasetManifest
    encoders : EncoderBundle
        From ``load_encoders``; a checkpoint, if any, is already applied.
    cfg : InferenceConfig
    split : Split or str, optional
        By default the test split.
    use_policy : bool, optional
        Replace the grid size and resize limit in ``cfg`` with the dataset's
        policy, by default True
    n_threads : int, optional
        Worker threads; -1 uses every logical core, by default 1
    progress : bool, optional
        Show a tqdm bar over images, by default False
    baseline_seed : int, optional
        Predict with ``random_baseline`` instead of the encoders. Image ``i``
        uses seed ``baseline_seed + i``.

    Returns
    -------
    EvalReport
        With per-image records keyed by image path, the throughput range in
        frames per second and the predictions themselves.

    Raises
    ------
    EmptyDataset
        If the split has no images.

    """
    items = manifest.split(split)
    if not items:
        raise EmptyDataset("{} has no {} images".format(manifest.name, Split(split).value))

    if use_policy:
        cfg = apply_policy(cfg, manifest)

    def work(job):
        index, item = job
        if baseline_seed is not None:
            return random_baseline(item.image, cfg, seed=baseline_seed + index)
        return predict(item.image, encoders.original, encoders.finetuned, encoders.text, cfg)

    jobs = list(enumerate(items))
    bar = tqdm(total=len(jobs), desc=manifest.name, disable=not progress)
    with ThreadPoolExecutor(max_workers=_n_workers(n_threads)) as pool:
        predictions = []
        for prediction in pool.map(work, jobs):
            predictions.append(prediction)
            bar.update(1)
    bar.close()

    report = compute_metrics(
        [p.total for p in predictions],
        [item.count for item in items],
        ids=[item.image.path for item in items],
    )
    if baseline_seed is None:
        report.throughput_fps = throughput_summary([p.fps for p in predictions])
    report.predictions = predictions

    logger.info("%s (%s, P=%d): MAE %.2f, MSE %.2f", manifest.name, Split(split).value, cfg.grid.p, report.mae, report.mse)

    return report


def run_cross_eval(train_manifest, test_manifest, encoders, cfg, checkpoint=None, **kwargs):
    """Evaluate a model trained on one dataset against another one.

    The test dataset's own grid size and resize policy apply. Training and
    testing on the same dataset is allowed but logged as a warning. Extra
    keyword arguments go to ``run_eval``.

    Returns
    -------
    EvalReport
        Labelled ``"<train>→<test>"``.

    """
    train_name = train_manifest if isinstance(train_manifest, str) else train_manifest.name

    if checkpoint is not None and checkpoint.dataset not in (None, train_name):
        logger.warning("Checkpoint was trained on %s, not %s", checkpoint.dataset, train_name)
    if train_name == test_manifest.name:
        logger.warning("Cross-dataset evaluation with %s on both sides", train_name)

    kwargs.setdefault("use_policy", True)
    report = run_eval(test_manifest, encoders, cfg, **kwargs)
    report.label = "{}→{}".format(train_name, test_manifest.name)

    return report


@dataclass
class AblationContext:
    """Everything a sweep needs besides the settings themselves.

    ``train_manifest`` is required by the kinds that fine-tune (``prompts``,
    ``freeze`` and ``data_size``); ``patch_number`` and ``stages`` evaluate
    ``encoders`` as given.
    """

    test_manifest: Any
    encoder_cfg: Any
    train_cfg: Any
    infer_cfg: Any
    train_manifest: Any = None
    extra_manifest: Any = None
    encoders: Any = None
    seed: int = 0
    n_threads: int = 1
    progress: bool = False


@dataclass
class AblationResult:
    kind: str
    table: pd.DataFrame
    reports: List[Any] = field(default_factory=list, repr=False)

    def series(self):
        """Plot-ready series: one x label per setting, MAE and MSE per row."""
        return {
            "kind": self.kind,
            "x": self.table["setting"].tolist(),
            "mae": self.table["mae"].tolist(),
            "mse": self.table["mse"].tolist(),
        }


def _train_and_load(ctx, train_cfg, images):
    if ctx.train_manifest is None:
        raise ValueError("this ablation needs a training manifest")

    classes = _classes(ctx)
    image_enc, text_enc = make_encoders(ctx.encoder_cfg, *classes)
    pyramids = pyramids_from_images(images, train_cfg)
    checkpoint = train(pyramids, image_enc, text_enc, train_cfg, dataset=ctx.train_manifest.name)

    return load_encoders(ctx.encoder_cfg, checkpoint, *classes)


def _classes(ctx):
    return ctx.infer_cfg.coarse_prompts.classes, ctx.infer_cfg.fine_prompts.classes


def _base_encoders(ctx):
    if ctx.encoders is not None:
        return ctx.encoders
    if ctx.train_manifest is not None:
        return _train_and_load(ctx, ctx.train_cfg, ctx.train_manifest.image_refs(Split.TRAIN))
    return load_encoders(ctx.encoder_cfg, None, *_classes(ctx))


def _parse_prompt_setting(setting):
    if isinstance(setting, RankingPromptSpec):
        return setting
    if isinstance(setting, dict):
        return RankingPromptSpec(**setting)
    r0, k = setting
    return RankingPromptSpec(r0=int(r0), k=int(k))


def _parse_data_setting(setting):
    if isinstance(setting, dict):
        return float(setting["fraction"]), bool(setting.get("extra", False))
    return float(setting), False


def _evaluate(ctx, encoders, cfg, use_policy=True, baseline_seed=None):
    return run_eval(
        ctx.test_manifest,
        encoders,
        cfg,
        use_policy=use_policy,
        n_threads=ctx.n_threads,
        progress=ctx.progress,
        baseline_seed=baseline_seed,
    )


def _row(kind, setting, report, **columns):
    row = {"kind": kind, "setting": setting, "n_images": report.n_images, "mae": report.mae, "mse": report.mse}
    row.update(columns)
    return row


def run_ablation(kind, settings, ctx):
    """Sweep one design choice and evaluate every setting on the test split.

    Parameters
    ----------
    kind : {"prompts", "patch_number", "freeze", "data_size", "stages"}
        * ``prompts``: ``(r0, k)`` pairs or ``RankingPromptSpec`` fields; the
          encoder is fine-tuned and evaluated with each prompt design.
        * ``patch_number``: grid sizes P, overriding the dataset policy.
        * ``freeze``: ``(freeze_image, freeze_text)`` pairs, one training run
          each.
        * ``data_size``: training fractions, or ``{"fraction", "extra"}``
          where ``extra`` appends the extra manifest's training images.
        * ``stages``: ``(use_coarse, use_fine, use_finetuned)`` triples or
          ``"random"`` for the random-count baseline.
    settings : list, optional
        Defaults to the freeze and stages grids for those kinds.
    ctx : AblationContext

    Returns
    -------
    AblationResult
        One table row per setting, in order.

    """
    if kind not in ABLATION_KINDS:
        raise ValueError("unknown ablation kind {!r}, expected one of {}".format(kind, ABLATION_KINDS))

    if settings is None or len(settings) == 0:
        defaults = {"freeze": FREEZE_GRID, "stages": STAGES_GRID}
        if kind not in defaults:
            raise ValueError("ablation {!r} needs at least one setting".format(kind))
        settings = defaults[kind]

    rows, reports = [], []

    if kind in ("patch_number", "stages"):
        encoders = _base_encoders(ctx)

    for setting in settings:
        logger.info("Ablation %s: %s", kind, setting)

        if kind == "prompts":
            spec = _parse_prompt_setting(setting)
            train_cfg = replace(ctx.train_cfg, ranking=spec, m=spec.n)
            encoders = _train_and_load(ctx, train_cfg, ctx.train_manifest.image_refs(Split.TRAIN))
            cfg = replace(ctx.infer_cfg, ranking_prompts=build_ranking_prompts(spec))
            report = _evaluate(ctx, encoders, cfg)
            label = "r0={},k={}".format(spec.r0, spec.k)
            row = _row(kind, label, report, r0=spec.r0, k=spec.k, n=spec.n)

        elif kind == "patch_number":
            p = int(setting)
            report = _evaluate(ctx, encoders, replace(ctx.infer_cfg, grid=GridSpec(p)), use_policy=False)
            row = _row(kind, str(p), report, p=p)

        elif kind == "freeze":
            freeze_image, freeze_text = (bool(v) for v in setting)
            train_cfg = replace(ctx.train_cfg, freeze_image=freeze_image, freeze_text=freeze_text)
            encoders = _train_and_load(ctx, train_cfg, ctx.train_manifest.image_refs(Split.TRAIN))
            report = _evaluate(ctx, encoders, ctx.infer_cfg)
            label = "image={},text={}".format(
                "fixed" if freeze_image else "tuned", "fixed" if freeze_text else "tuned"
            )
            row = _row(kind, label, report, freeze_image=freeze_image, freeze_text=freeze_text)

        elif kind == "data_size":
            fraction, extra = _parse_data_setting(setting)
            images = subsample(ctx.train_manifest.image_refs(Split.TRAIN), fraction, seed=ctx.seed)
            if extra:
                if ctx.extra_manifest is None:
                    raise ValueError("data_size setting asks for extra data but no extra manifest is set")
                images = images + ctx.extra_manifest.image_refs(Split.TRAIN)
            encoders = _train_and_load(ctx, ctx.train_cfg, images)
            report = _evaluate(ctx, encoders, ctx.infer_cfg)
            label = "{:g}{}".format(fraction, "+extra" if extra else "")
            row = _row(kind, label, report, fraction=fraction, extra=extra, n_train=len(images))

        else:
            if setting == "random":
                report = _evaluate(ctx, encoders, ctx.infer_cfg, baseline_seed=ctx.seed)
                row = _row(kind, "random", report)
            else:
                use_coarse, use_fine, use_finetuned = (bool(v) for v in setting)
                cfg = replace(
                    ctx.infer_cfg,
                    use_coarse_stage=use_coarse,
                    use_fine_stage=use_fine,
                    use_finetuned_for_ranking=use_finetuned,
                )
                report = _evaluate(ctx, encoders, cfg)
                label = "{}{}3{}".format(
                    "1+" if use_coarse else "", "2+" if use_fine else "", "" if use_finetuned else " zero-shot"
                )
                row = _row(kind, label, report, use_coarse=use_coarse, use_fine=use_fine, use_finetuned=use_finetuned)

        rows.append(row)
        reports.append(report)

    return AblationResult(kind=kind, table=pd.DataFrame(rows), reports=reports)

