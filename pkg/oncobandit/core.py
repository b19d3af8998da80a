"""Shared domain types and the deterministic RNG contract."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
import hashlib
from typing import NewType

import numpy as np

from .const import (
    REWARD_DIFF,
    REWARD_PERCENTILE,
    REWARD_RANK,
    STATE_BOTH,
    STATE_GENOMIC,
    STATE_GUIDELINE,
)

DrugId = NewType("DrugId", int)
UnitId = NewType("UnitId", int)
RngSeed = NewType("RngSeed", int)
RngStream = np.random.Generator

MEDIAN_TOLERANCE = 1e-9


class StateMode(Enum):
    """Which features make up the context handed to an agent."""

    GENOMIC = STATE_GENOMIC
    GUIDELINE = STATE_GUIDELINE
    BOTH = STATE_BOTH


class RewardKind(Enum):
    """Reward metric; the value is the serialized name."""

    DIFF_BEST = REWARD_DIFF
    RANK = REWARD_RANK
    PERCENTILE = REWARD_PERCENTILE


def context_length(mode: StateMode, embedding_width: int, num_drugs: int) -> int:
    """Length of a context vector for the given mode.

    With the default 20-wide embedding and 7 drugs this is 20, 7 or 27.
    """
    if mode is StateMode.GENOMIC:
        return embedding_width
    if mode is StateMode.GUIDELINE:
        return num_drugs
    return embedding_width + num_drugs


@dataclass(frozen=True, eq=False)
class ResponseMatrix:
    """Dense response scores, shape (units, drugs); lower means more sensitive."""

    scores: np.ndarray

    def __post_init__(self) -> None:
        """Freeze the score array and reject missing entries."""
        scores = np.array(self.scores, dtype=np.float64, copy=True)
        if scores.ndim != 2:
            raise ValueError(f"scores must be 2-dimensional, got {scores.ndim}")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores contain missing or non-finite entries")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def num_units(self) -> int:
        """Number of rows."""
        return self.scores.shape[0]

    @property
    def num_drugs(self) -> int:
        """Number of columns."""
        return self.scores.shape[1]

    def column_medians(self) -> np.ndarray:
        """Per-drug median (even counts average the two central values)."""
        return np.median(self.scores, axis=0)

    @property
    def is_centered(self) -> bool:
        """Whether every drug's median is zero."""
        return bool(np.all(np.abs(self.column_medians()) < MEDIAN_TOLERANCE))


@dataclass(frozen=True, eq=False)
class Context:
    """Feature vector shown to an agent before it acts.

    ``embedding_width`` pins the exact length when known; without it only
    the recommendation block is checked.
    """

    values: np.ndarray
    mode: StateMode
    num_drugs: int
    embedding_width: int | None = None

    def __post_init__(self) -> None:
        """Check the length for the mode and that the guideline block is binary."""
        values = np.array(self.values, dtype=np.float64, copy=True)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError(f"context must be a vector, got shape {values.shape}")
        length = values.shape[0]
        if self.embedding_width is not None:
            expected = context_length(self.mode, self.embedding_width, self.num_drugs)
            if length != expected:
                raise ValueError(
                    f"{self.mode.value} context has length {length}, expected {expected}"
                )
        elif self.mode is StateMode.GUIDELINE and length != self.num_drugs:
            raise ValueError(f"guideline context has length {length}, expected {self.num_drugs}")
        elif self.mode is StateMode.BOTH and length <= self.num_drugs:
            raise ValueError(
                f"both context has length {length}, expected more than {self.num_drugs}"
            )
        elif self.mode is StateMode.GENOMIC and length == 0:
            raise ValueError("genomic context is empty")
        if self.mode is StateMode.GENOMIC:
            return
        block = values[-self.num_drugs :]
        if not np.all((block == 0.0) | (block == 1.0)):
            raise ValueError("guideline block entries must be 0 or 1")

    def __len__(self) -> int:
        """Number of features."""
        return self.values.shape[0]


@dataclass(frozen=True)
class RewardValue:
    """A scalar reward tagged with its kind.

    Range per kind: diff <= 0, rank in [1, k], percentile in (0, 1].
    """

    value: float
    kind: RewardKind
    num_drugs: int = field(default=0)

    def __post_init__(self) -> None:
        """Reject values outside the kind's range."""
        value = self.value
        if self.kind is RewardKind.DIFF_BEST:
            valid = value <= 0.0
        elif self.kind is RewardKind.RANK:
            valid = 1.0 <= value <= max(self.num_drugs, 1)
        else:
            valid = 0.0 < value <= 1.0
        if not valid:
            raise ValueError(f"{self.kind.value} reward out of range: {value}")

    def __float__(self) -> float:
        """Return the raw reward."""
        return float(self.value)


def derive_stream(seed: RngSeed | int, label: str) -> RngStream:
    """Derive a named random stream from a seed.

    The stream is a Philox counter-based generator keyed by a hash of the
    seed and label, so identical (seed, label) pairs give identical draws on
    every platform and distinct labels give unrelated streams. Nested
    streams use slash-separated labels, e.g. ``agent/train``.
    """
    if not label:
        raise ValueError("stream label must be non-empty")
    digest = hashlib.sha256(f"{int(seed)}\x1f{label}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))
