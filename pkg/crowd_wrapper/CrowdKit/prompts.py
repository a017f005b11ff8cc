# -*- coding: utf-8 -*-
"""This module houses the text prompts and their cached embeddings.

Three prompt families are used. Ranking prompts name a count, one per rank,
and are shared by fine-tuning and the last inference stage. Coarse and fine
prompts name scene classes and body parts for the two filtering stages. Text
encoders are sensitive to wording, so the templates below are kept exactly as
they are written, without a trailing period.

"""

import enum
import logging
import string
import threading
import weakref
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

from CrowdKit.errors import ShapeMismatch, TargetMissing

logger = logging.getLogger(__name__)

RANKING_TEMPLATE = "There are {} persons in the crowd"
COARSE_TEMPLATE = "The object is {}"
FINE_TEMPLATE = "The objects are {}"

DEFAULT_COARSE_CLASSES = ("crowd", "tree", "car", "building", "road", "sky")
DEFAULT_FINE_CLASSES = ("human heads", "human bodies", "human legs")


class Stage(str, enum.Enum):
    COARSE = "coarse"
    FINE = "fine"
    RANKING = "ranking"


@dataclass(frozen=True)
class RankingPromptSpec:
    """Reference count, counting interval and number of ranks.

    The ranks are ``[r0, r0 + k, ..., r0 + (n - 1) * k]``. In alphabetic mode
    each rank is rendered as ``"A + <count>"``.
    """

    r0: int = 20
    k: int = 35
    n: int = 6
    template: str = RANKING_TEMPLATE
    alphabetic_mode: bool = False

    def __post_init__(self):
        if self.r0 < 0:
            raise ValueError("r0 must be >= 0, got {}".format(self.r0))
        if self.k < 1:
            raise ValueError("k must be >= 1, got {}".format(self.k))
        if self.n < 2:
            raise ValueError("n must be >= 2, got {}".format(self.n))
        if _placeholders(self.template) != [""]:
            raise ValueError(
                "template must contain exactly one bare '{{}}' placeholder: {!r}".format(
                    self.template
                )
            )

    @property
    def counts(self):
        return tuple(self.r0 + j * self.k for j in range(self.n))


@dataclass(frozen=True)
class PromptSet:
    stage: Stage
    texts: Tuple[str, ...]
    target_index: int = 0
    counts: Optional[Tuple[int, ...]] = None
    classes: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "stage", Stage(self.stage))
        object.__setattr__(self, "texts", tuple(self.texts))

        if not self.texts:
            raise ShapeMismatch("a prompt set needs at least one text")
        if self.stage is not Stage.RANKING and not 0 <= self.target_index < len(self.texts):
            raise TargetMissing(
                "target_index {} outside {} prompts".format(self.target_index, len(self.texts))
            )
        if self.counts is not None:
            counts = tuple(int(c) for c in self.counts)
            object.__setattr__(self, "counts", counts)
            if len(counts) != len(self.texts):
                raise ShapeMismatch("counts and texts differ in length")
            if any(b <= a for a, b in zip(counts, counts[1:])):
                raise ValueError("ranking counts must be strictly increasing")

    def __len__(self):
        return len(self.texts)


def _placeholders(template):
    return [name for _, name, _, _ in string.Formatter().parse(template) if name is not None]


def build_ranking_prompts(spec):
    """Render one ranking prompt per rank, smallest count first.

    Examples
    --------
    >>> ps = build_ranking_prompts(RankingPromptSpec(r0=20, k=35, n=6))
    >>> ps.counts
    (20, 55, 90, 125, 160, 195)
    >>> ps.texts[0]
    'There are 20 persons in the crowd'

    """
    counts = spec.counts
    if spec.alphabetic_mode:
        tokens = ["A + {}".format(c) for c in counts]
    else:
        tokens = [str(c) for c in counts]

    return PromptSet(
        stage=Stage.RANKING,
        texts=tuple(spec.template.format(t) for t in tokens),
        target_index=0,
        counts=counts,
    )


def build_filter_prompts(stage, classes: Sequence[str], target):
    """Render the class prompts for a filtering stage.

    Parameters
    ----------
    stage : Stage or str
        ``"coarse"`` (scene classes) or ``"fine"`` (body parts).
    classes : list of str
        At least two class names.
    target : str
        The class whose patches are kept.

    Raises
    ------
    TargetMissing
        If ``target`` is not one of ``classes``.

    """
    stage = Stage(stage)
    classes = tuple(classes)

    if stage is Stage.RANKING:
        raise ValueError("use build_ranking_prompts for the ranking stage")
    if len(classes) < 2:
        raise ValueError("a filtering stage needs at least two classes, got {}".format(classes))
    if target not in classes:
        raise TargetMissing("target {!r} not in {}".format(target, list(classes)))

    template = COARSE_TEMPLATE if stage is Stage.COARSE else FINE_TEMPLATE

    return PromptSet(
        stage=stage,
        texts=tuple(template.format(c) for c in classes),
        target_index=classes.index(target),
        classes=classes,
    )


class EmbeddingCache:
    """Process-wide cache of prompt embeddings.

    Entries are held per encoder handle through a weak reference, so a handle
    that goes out of scope takes its embeddings with it. Only the latest
    weight version of a handle is kept. Reads are lock-free; the first
    embedding of a set is computed under a lock so it happens once.
    """

    def __init__(self):
        # handle -> (version, {texts: EmbeddingMatrix})
        self._entries = weakref.WeakKeyDictionary()
        self._lock = threading.Lock()

    def _lookup(self, text_encoder, texts):
        slot = self._entries.get(text_encoder)
        if slot is None or slot[0] != text_encoder.version:
            return None
        return slot[1].get(texts)

    def get(self, prompt_set, text_encoder, compute):
        cached = self._lookup(text_encoder, prompt_set.texts)
        if cached is not None:
            return cached

        with self._lock:
            cached = self._lookup(text_encoder, prompt_set.texts)
            if cached is None:
                logger.debug("embedding %d %s prompts", len(prompt_set), prompt_set.stage.value)
                version = text_encoder.version
                cached = compute()
                slot = self._entries.get(text_encoder)
                if slot is None or slot[0] != version:
                    slot = (version, {})
                    self._entries[text_encoder] = slot
                slot[1][prompt_set.texts] = cached

        return cached

    @property
    def n_encoders(self):
        return len(self._entries)

    def clear(self):
        with self._lock:
            self._entries.clear()

    def __len__(self):
        return sum(len(slot[1]) for slot in list(self._entries.values()))


_CACHE = EmbeddingCache()


def embed_prompt_set(prompt_set, text_encoder, cache=None):
    """Embed a prompt set once and reuse the result afterwards.

    Parameters
    ----------
    prompt_set : PromptSet
    text_encoder : EncoderHandle
        A handle of kind ``text``.
    cache : EmbeddingCache, optional
        Defaults to the process-wide cache.

    Returns
    -------
    EmbeddingMatrix
        One normalised row per prompt, in order.

    """
    from CrowdKit.encoders import encode_texts

    if not len(prompt_set):
        raise ShapeMismatch("cannot embed an empty prompt set")

    cache = _CACHE if cache is None else cache

    return cache.get(prompt_set, text_encoder, lambda: encode_texts(text_encoder, prompt_set.texts))


def clear_cache():
    _CACHE.clear()
