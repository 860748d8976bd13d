"""Perception contracts: goal queries, detections, frontier scores, confirmation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from ..geometry import ShapeError

log = logging.getLogger(__name__)

TAU_DET = 0.30
N_CONFIRM = 2
BLEND_W = 0.35
FALLBACK_SCORE = 0.5


class BackendUnavailable(RuntimeError):
    """A perception backend could not answer; callers degrade gracefully."""


@dataclass(frozen=True)
class GoalQuery:
    text: str
    query_id: int = 0

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("goal query text must be non-empty")


@dataclass
class Detection:
    bbox: tuple[int, int, int, int]  # x1, y1, x2, y2 (x2, y2 exclusive)
    confidence: float
    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        x1, y1, x2, y2 = self.bbox
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate bbox {self.bbox}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        rows, cols = np.nonzero(self.mask)
        if rows.size and (cols.min() < x1 or cols.max() >= x2 or rows.min() < y1 or rows.max() >= y2):
            raise ValueError("mask extends outside bbox")


@dataclass
class FrontierScores:
    scores: list[float]
    fallback: bool = False

    def __post_init__(self):
        self.scores = [float(s) for s in self.scores]
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ValueError(f"score {s} outside [0, 1]")

    def __len__(self):
        return len(self.scores)

    @classmethod
    def uniform(cls, n: int, fallback: bool = False) -> "FrontierScores":
        return cls([FALLBACK_SCORE] * n, fallback)


@dataclass
class ScoreRequest:
    """Everything a frontier scorer may look at for one decision."""

    query: GoalQuery
    frontiers_xy: list[tuple[float, float]]  # world meters
    frontier_cells: list[tuple[int, int]]
    pose: tuple[float, float, float]
    rgb: np.ndarray | None = None
    history: dict = field(default_factory=dict)
    stages: tuple[str, ...] = ("caption", "room_type", "gate", "rank")


class Detector(Protocol):
    def detect(self, obs, query: GoalQuery) -> list[Detection]: ...


class Scorer(Protocol):
    def score_frontiers(self, request: ScoreRequest) -> FrontierScores: ...


@dataclass(frozen=True)
class ConfirmationState:
    query_id: int = 0
    consecutive_hits: int = 0
    last_confirmed_detection: Detection | None = None


def confirm(state: ConfirmationState, detections: Sequence[Detection], tau_det: float = TAU_DET, n_confirm: int = N_CONFIRM) -> tuple[ConfirmationState, bool]:
    best = max(detections, key=lambda d: d.confidence, default=None)
    if best is None or not best.confidence > tau_det:
        return replace(state, consecutive_hits=0), False
    hits = state.consecutive_hits + 1
    if hits >= n_confirm:
        return replace(state, consecutive_hits=hits, last_confirmed_detection=best), True
    return replace(state, consecutive_hits=hits), False


def blend_utility(scores, values, w: float = BLEND_W) -> np.ndarray:
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if s.shape != v.shape:
        raise ShapeError(f"{s.shape[0] if s.ndim else 0} scores vs {v.shape[0] if v.ndim else 0} values")
    return (1.0 - w) * s + w * v


def best_index(utilities) -> int:
    """argmax, lowest index on ties."""
    return int(np.argmax(np.asarray(utilities)))


def safe_detect(detector, obs, query: GoalQuery) -> list[Detection]:
    try:
        dets = detector.detect(obs, query)
    except BackendUnavailable as e:
        log.warning("detector unavailable, treating frame as empty: %s", e)
        return []
    return sorted(dets, key=lambda d: -d.confidence)


def safe_score(scorer, request: ScoreRequest) -> FrontierScores:
    n = len(request.frontiers_xy)
    try:
        out = scorer.score_frontiers(request)
    except BackendUnavailable as e:
        log.warning("scorer unavailable, uniform fallback: %s", e)
        return FrontierScores.uniform(n, fallback=True)
    if len(out) != n:
        log.warning("scorer returned %d scores for %d frontiers, uniform fallback", len(out), n)
        return FrontierScores.uniform(n, fallback=True)
    return out
