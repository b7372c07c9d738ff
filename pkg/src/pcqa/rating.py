"""Five-level quality vocabulary: MOS binning and rating-token softmax."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteLogit, OutOfRange


class RatingLevel(enum.IntEnum):
    BAD = 1
    POOR = 2
    FAIR = 3
    GOOD = 4
    EXCELLENT = 5

    @property
    def text(self) -> str:
        return self.name.lower()


LEVELS = tuple(RatingLevel)
LEVEL_WORDS = tuple(level.text for level in LEVELS)


@dataclass(frozen=True)
class MosRange:
    m: float
    M: float

    def __post_init__(self):
        if not (math.isfinite(self.m) and math.isfinite(self.M)):
            raise ValueError("score range bounds must be finite")
        if not self.M > self.m:
            raise ValueError(f"score range needs M > m, got ({self.m}, {self.M})")

    def contains(self, mos: float) -> bool:
        return self.m <= mos <= self.M


def mos_to_level(mos: float, rng: MosRange) -> RatingLevel:
    """Level ``i`` such that ``m + (i-1)/5 (M-m) < mos <= m + i/5 (M-m)``.

    ``mos == m`` is assigned ``bad``.
    """
    if not (rng.m <= mos <= rng.M):
        raise OutOfRange(f"mos {mos} outside [{rng.m}, {rng.M}]")
    span = rng.M - rng.m
    for i in range(1, 5):
        if mos <= rng.m + i * span / 5:
            return RatingLevel(i)
    return RatingLevel.EXCELLENT


def level_text(level: RatingLevel) -> str:
    return RatingLevel(level).text


def text_to_level(text: str) -> RatingLevel:
    word = text.strip().lower()
    try:
        return RatingLevel[word.upper()]
    except KeyError:
        raise ValueError(f"unknown rating word {text!r}") from None


@dataclass(frozen=True)
class LmmEvaluation:
    """Rating-token log-probabilities (natural log) and their softmax."""

    logprobs: np.ndarray
    probs: np.ndarray

    @property
    def argmax_level(self) -> RatingLevel:
        return RatingLevel(int(np.argmax(self.probs)) + 1)

    @property
    def expected_level(self) -> float:
        return float(np.dot(np.arange(1, 6), self.probs))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def logits_to_probabilities(logprobs) -> LmmEvaluation:
    lp = np.array(logprobs, dtype=np.float64).ravel()
    if lp.shape != (5,):
        raise ValueError(f"expected 5 log-probabilities, got {lp.shape}")
    if not np.all(np.isfinite(lp)):
        raise NonFiniteLogit(f"non-finite log-probability in {lp.tolist()}")
    return LmmEvaluation(lp, softmax(lp))
