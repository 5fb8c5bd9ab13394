"""JND localisation on a ladder's per-level perceptual labels.

Labels use 1 for perceptually lossy and 0 for lossless, so on clean ground
truth they are non-increasing in level. The naive rule picks the first
lossless level; the sliding-window rule picks the smallest start level whose
inclusive window ``[start, start + w]`` (``w + 1`` labels) holds at most
``theta`` lossy labels, which tolerates isolated misclassifications.

On a noise-free sequence with target ``t`` the window rule returns
``max(lo, t - theta)`` (``None`` when that start leaves no room for the
window), i.e. it sits ``theta`` levels below the naive answer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Union

import numpy as np

from jndscope.core import (
    CodecId,
    IncompleteSequence,
    JNDResult,
    LabelSequence,
    SearchStrategy,
)
from jndscope.errors import JndscopeError

if TYPE_CHECKING:
    from jndscope.configuration.schema import SearchConfig

__all__ = [
    "IncompleteSequence",
    "InvalidSpec",
    "SearchSpec",
    "naive_search",
    "run_search",
    "search_defaults",
    "window_search",
]


class InvalidSpec(JndscopeError, ValueError):
    """Search parameters are inconsistent with themselves or with the sequence."""


@dataclass(frozen=True)
class SearchSpec:
    strategy: SearchStrategy = SearchStrategy.WINDOW
    window: int = 6
    threshold: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", SearchStrategy(self.strategy))
        if self.window < 0 or self.threshold < 0:
            raise InvalidSpec("window and threshold must be non-negative")
        if self.strategy is SearchStrategy.WINDOW and self.threshold > self.window + 1:
            raise InvalidSpec(
                f"threshold {self.threshold} exceeds the {self.window + 1} labels "
                "a window covers"
            )

    @classmethod
    def naive(cls) -> "SearchSpec":
        return cls(SearchStrategy.NAIVE, 0, 0)

    @classmethod
    def from_config(cls, config: "SearchConfig") -> "SearchSpec":
        return cls(SearchStrategy(config.strategy), config.window, config.threshold)


def search_defaults(codec_id: Union[CodecId, str]) -> SearchSpec:
    """Window parameters used for each ladder family (BPG ladders run as GENERIC)."""
    if CodecId(codec_id) is CodecId.JPEG:
        return SearchSpec(SearchStrategy.WINDOW, window=6, threshold=5)
    return SearchSpec(SearchStrategy.WINDOW, window=3, threshold=2)


def naive_search(labels: LabelSequence) -> JNDResult:
    """First perceptually lossless level, or ``None`` when every level is lossy."""
    bits = labels.bits()
    zeros = np.flatnonzero(bits == 0)
    level = None if zeros.size == 0 else labels.codec.level_range[0] + int(zeros[0])
    return JNDResult(
        jnd_level=level,
        strategy=SearchStrategy.NAIVE,
        window=0,
        threshold=0,
        source_labels=labels,
    )


def window_search(labels: LabelSequence, spec: SearchSpec) -> JNDResult:
    bits = labels.bits()
    lo, hi = labels.codec.level_range
    span = spec.window + 1
    if spec.threshold > span:
        raise InvalidSpec(f"threshold {spec.threshold} exceeds window of {span} labels")
    if lo > hi - spec.window:
        raise InvalidSpec(
            f"window of {span} labels does not fit level range [{lo}, {hi}]"
        )
    cumulative = np.concatenate(([0], np.cumsum(bits)))
    sums = cumulative[span:] - cumulative[: bits.size - spec.window]
    hits = np.flatnonzero(sums <= spec.threshold)
    level = None if hits.size == 0 else lo + int(hits[0])
    return JNDResult(
        jnd_level=level,
        strategy=SearchStrategy.WINDOW,
        window=spec.window,
        threshold=spec.threshold,
        source_labels=labels,
    )


def run_search(labels: LabelSequence, spec: SearchSpec) -> JNDResult:
    if spec.strategy is SearchStrategy.NAIVE:
        return naive_search(labels)
    return window_search(labels, spec)
