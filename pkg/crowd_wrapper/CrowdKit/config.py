# -*- coding: utf-8 -*-
"""This module houses the run configuration.

A run is configured by one YAML file (see ``configs/default.yaml``) whose
sections mirror the dataclasses below. Values are resolved in this order,
later ones winning:

1. the dataclass defaults, which encode the published setup (M = N = 6,
   R0 = 20, K = 35, learning rate 1e-4, 100 epochs);
2. the YAML file;
3. ``--set section.key=value`` overrides, whose values are parsed as YAML
   scalars.

Everything is validated before any work starts; failures raise
``ConfigError``.

"""

import hashlib
import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, List, Optional

import yaml

from CrowdKit.encoders import BACKENDS
from CrowdKit.errors import ConfigError
from CrowdKit.experiments import ABLATION_KINDS
from CrowdKit.geometry import DEFAULT_TARGET_SIDE, GridSpec
from CrowdKit.inference import InferenceConfig
from CrowdKit.prompts import (
    DEFAULT_COARSE_CLASSES,
    DEFAULT_FINE_CLASSES,
    RANKING_TEMPLATE,
    RankingPromptSpec,
    Stage,
    build_filter_prompts,
    build_ranking_prompts,
)
from CrowdKit.training import PAIR_MODES, REDUCTIONS, TrainConfig

logger = logging.getLogger(__name__)

_FLOAT = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)[eE][-+]?\d+$")


@dataclass
class EncoderConfig:
    backend: str = "pretrained"
    model_name: str = "ViT-B-16"
    pretrained: str = "openai"
    device: str = "cpu"
    dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError("encoder.backend must be one of {}, got {!r}".format(BACKENDS, self.backend))


@dataclass
class RankingConfig:
    r0: int = 20
    k: int = 35
    n: int = 6
    template: str = RANKING_TEMPLATE
    alphabetic_mode: bool = False


@dataclass
class PromptConfig:
    ranking: RankingConfig = field(default_factory=RankingConfig)
    coarse_classes: List[str] = field(default_factory=lambda: list(DEFAULT_COARSE_CLASSES))
    coarse_target: str = DEFAULT_COARSE_CLASSES[0]
    fine_classes: List[str] = field(default_factory=lambda: list(DEFAULT_FINE_CLASSES))
    fine_target: str = DEFAULT_FINE_CLASSES[0]

    def ranking_spec(self):
        return RankingPromptSpec(**asdict(self.ranking))


@dataclass
class DataConfig:
    train_manifest: Optional[str] = None
    test_manifest: Optional[str] = None
    extra_manifest: Optional[str] = None
    split: str = "test"

    def __post_init__(self):
        if self.split not in ("train", "val", "test"):
            raise ValueError("data.split must be train, val or test, got {!r}".format(self.split))


@dataclass
class TrainSection:
    m: int = 6
    min_ratio: float = 0.5
    target_side: int = DEFAULT_TARGET_SIDE
    epochs: int = 100
    learning_rate: float = 1e-4
    batch_pyramids: int = 8
    freeze_image: bool = False
    freeze_text: bool = True
    pair_mode: str = "all_pairs"
    reduction: str = "mean"
    num_workers: int = 0

    def __post_init__(self):
        if self.pair_mode not in PAIR_MODES:
            raise ValueError("train.pair_mode must be one of {}".format(PAIR_MODES))
        if self.reduction not in REDUCTIONS:
            raise ValueError("train.reduction must be one of {}".format(REDUCTIONS))


@dataclass
class InferenceSection:
    p: Optional[int] = None
    resize_max_long: Optional[int] = None
    use_coarse_stage: bool = True
    use_fine_stage: bool = True
    use_finetuned_for_ranking: bool = True
    keep_threshold: Optional[float] = None
    softmax_scale: float = 100.0
    target_side: int = DEFAULT_TARGET_SIDE
    n_threads: int = 1


@dataclass
class AblationConfig:
    kind: str = "patch_number"
    settings: List[Any] = field(default_factory=lambda: [3, 4, 5])

    def __post_init__(self):
        if self.kind not in ABLATION_KINDS:
            raise ValueError("ablation.kind must be one of {}".format(ABLATION_KINDS))


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint: Optional[str] = None
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    prompts: PromptConfig = field(default_factory=PromptConfig)
    train: TrainSection = field(default_factory=TrainSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self):
        return asdict(self)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def config_hash(self):
        """sha256 of the canonical JSON config; the output directory is left out."""
        values = self.to_dict()
        values.pop("out_dir")
        canonical = json.dumps(values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def train_config(self):
        """The ``TrainConfig`` for this run; the run seed seeds training."""
        return TrainConfig(ranking=self.prompts.ranking_spec(), seed=self.seed, **asdict(self.train))

    def inference_config(self, manifest=None, p=None):
        """Build the ``InferenceConfig`` for one dataset.

        The grid size is, in order of precedence, ``p``, ``inference.p``, the
        manifest's policy, or 3. The resize limit is ``inference.resize_max_long``
        or the manifest's policy.
        """
        section = self.inference
        grid = p or section.p or (manifest.default_p if manifest is not None else 3)
        resize = section.resize_max_long
        if resize is None and manifest is not None:
            resize = manifest.resize_max_long

        try:
            return InferenceConfig(
                grid=GridSpec(grid),
                coarse_prompts=build_filter_prompts(Stage.COARSE, self.prompts.coarse_classes, self.prompts.coarse_target),
                fine_prompts=build_filter_prompts(Stage.FINE, self.prompts.fine_classes, self.prompts.fine_target),
                ranking_prompts=build_ranking_prompts(self.prompts.ranking_spec()),
                use_finetuned_for_ranking=section.use_finetuned_for_ranking,
                use_coarse_stage=section.use_coarse_stage,
                use_fine_stage=section.use_fine_stage,
                keep_threshold=section.keep_threshold,
                softmax_scale=section.softmax_scale,
                resize_max_long=resize,
                target_side=section.target_side,
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err


def parse_scalar(text):
    """Parse an override value the way YAML would, accepting ``1e-4`` as a float."""
    if _FLOAT.match(text.strip()):
        return float(text)
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("cannot parse override value {!r}: {}".format(text, err)) from err


def apply_override(tree, assignment):
    """Apply one ``dotted.key=value`` assignment to a nested dict in place."""
    if "=" not in assignment:
        raise ConfigError("override {!r} is not of the form key=value".format(assignment))

    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError("bad override key {!r}".format(key))

    node = tree
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError("override {!r} descends into a scalar".format(key))
        node = child
    node[parts[-1]] = parse_scalar(value)

    return tree


def _build(cls, values, path):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError("{} must be a mapping, got {!r}".format(path or "config", values))

    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError("unknown key(s) in {}: {}".format(path or "config", ", ".join(unknown)))

    kwargs = {}
    for name, value in values.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else None
        if hasattr(default, "__dataclass_fields__"):
            kwargs[name] = _build(type(default), value, "{}.{}".format(path, name).lstrip("."))
        else:
            kwargs[name] = value

    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError("{}: {}".format(path or "config", err)) from err


def load_config(path=None, overrides=()):
    """Load a ``RunConfig`` from a YAML file plus command-line overrides.

    Parameters
    ----------
    path : str or Path, optional
        The YAML file; the dataclass defaults are used when omitted.
    overrides : list of str, optional
        ``dotted.key=value`` assignments applied on top of the file.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError
        If the file is missing or unreadable, or validation fails.

    Examples
    --------
    >>> cfg = load_config("configs/default.yaml", ["train.epochs=3", "encoder.backend=mock"])
    >>> cfg.train.epochs, cfg.train.learning_rate
    (3, 0.0001)

    """
    tree = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("config file not found: {}".format(path))
        try:
            with open(path, encoding="utf-8") as f:
                tree = yaml.safe_load(f) or {}
        except yaml.YAMLError as err:
            raise ConfigError("cannot parse {}: {}".format(path, err)) from err

    for assignment in overrides:
        apply_override(tree, assignment)

    cfg = _build(RunConfig, tree, "")
    _validate(cfg)

    logger.debug("Config %s resolved, hash %s", path, cfg.config_hash()[:12])

    return cfg


def _validate(cfg):
    cfg.encoder.seed = cfg.seed

    try:
        cfg.train_config()
        cfg.inference_config()
    except ValueError as err:
        raise ConfigError(str(err)) from err

    if cfg.inference.p is not None and cfg.inference.p < 1:
        raise ConfigError("inference.p must be >= 1")
