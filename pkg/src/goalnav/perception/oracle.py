"""Ground-truth perception backed by the simulator."""
from __future__ import annotations

import math

import numpy as np

from ..geometry import CameraExtrinsics, CameraIntrinsics
from .base import Detection, FrontierScores, GoalQuery, ScoreRequest

MIN_PIXELS = 20
TAU_S = 5.0


class OracleDetector:
    """Detections from the label-color render.

    Confidence is the fraction of the object's unoccluded in-range pixels
    that actually show it, so partial occlusion lowers it and walls hide it.
    """

    def __init__(self, world, intr: CameraIntrinsics, ext: CameraExtrinsics, min_pixels: int = MIN_PIXELS):
        self.world = world
        self.intr = intr
        self.ext = ext
        self.min_pixels = min_pixels

    def detect(self, obs, query: GoalQuery) -> list[Detection]:
        ids = self.world.decode_ids(obs.rgb)
        valid = obs.depth > 0
        out = []
        for obj in self.world.objects_with_label(query.text, reflections=True):
            seen = (ids == obj.id) & valid
            n_seen = int(seen.sum())
            if n_seen < self.min_pixels:
                continue
            n_free = int(self.world.unoccluded_pixels(obj, obs.pose, self.intr, self.ext).sum())
            conf = min(1.0, n_seen / max(n_free, n_seen))
            rows, cols = np.nonzero(seen)
            bbox = (int(cols.min()), int(rows.min()), int(cols.max()) + 1, int(rows.max()) + 1)
            out.append(Detection(bbox, conf, seen))
        out.sort(key=lambda d: -d.confidence)
        return out


def _field_value(field, cell, window: int = 2) -> float:
    i, j = cell
    a = field.arrival
    sub = a[max(i - window, 0): i + window + 1, max(j - window, 0): j + window + 1]
    return float(sub.min()) if sub.size else math.inf


class OracleScorer:
    """exp(-geodesic / tau) from each frontier to the nearest true goal."""

    def __init__(self, world, tau_s: float = TAU_S):
        self.world = world
        self.tau_s = tau_s

    def raw(self, request: ScoreRequest) -> list[float]:
        field = self.world.goal_field(request.query.text)
        return [math.exp(-_field_value(field, c) / self.tau_s) for c in request.frontier_cells]

    def score_frontiers(self, request: ScoreRequest) -> FrontierScores:
        return FrontierScores(self.raw(request))


class UniformScorer:
    def score_frontiers(self, request: ScoreRequest) -> FrontierScores:
        return FrontierScores.uniform(len(request.frontiers_xy))


class AdversarialScorer(OracleScorer):
    """Inverted oracle: prefers frontiers far from the goal."""

    def score_frontiers(self, request: ScoreRequest) -> FrontierScores:
        return FrontierScores([1.0 - s for s in self.raw(request)])
