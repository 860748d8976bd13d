"""Frontier extraction on the BEV map."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .mapping import SemanticBevMap
from .planner import DistanceField

MIN_FRONTIER_CELLS = 4
MAX_FRONTIERS = 4

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class Frontier:
    cells: np.ndarray  # (n, 2) int, sorted
    centroid: tuple[float, float]  # mean cell, fractional
    anchor: tuple[int, int]  # member cell closest to the centroid

    @property
    def size(self) -> int:
        return len(self.cells)

    @classmethod
    def from_cells(cls, cells) -> "Frontier":
        cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
        cells = cells[np.lexsort((cells[:, 1], cells[:, 0]))]
        c = cells.mean(axis=0)
        d2 = ((cells - c) ** 2).sum(axis=1)
        a = cells[int(np.argmin(d2))]
        return cls(cells, (float(c[0]), float(c[1])), (int(a[0]), int(a[1])))


def frontier_cells(explored: np.ndarray, obstacle: np.ndarray) -> np.ndarray:
    """Explored free cells with at least one unknown 4-neighbor (in-bounds)."""
    free = explored & ~obstacle
    unknown = ~explored
    touch = np.zeros_like(unknown)
    touch[1:, :] |= unknown[:-1, :]
    touch[:-1, :] |= unknown[1:, :]
    touch[:, 1:] |= unknown[:, :-1]
    touch[:, :-1] |= unknown[:, 1:]
    return free & touch


def extract_frontiers(bev: SemanticBevMap, min_size: int = MIN_FRONTIER_CELLS, max_count: int | None = MAX_FRONTIERS) -> list[Frontier]:
    boundary = frontier_cells(bev.explored, bev.obstacle)
    labels, n = ndimage.label(boundary, structure=_EIGHT)
    if n == 0:
        return []
    idx = np.nonzero(labels)
    order = np.argsort(labels[idx], kind="stable")
    lab_sorted = labels[idx][order]
    cells = np.stack(idx, axis=1)[order]
    splits = np.flatnonzero(np.diff(lab_sorted)) + 1
    out = [Frontier.from_cells(group) for group in np.split(cells, splits) if len(group) >= min_size]
    # largest first; ties broken by lexicographic centroid
    out.sort(key=lambda f: (-f.size, f.centroid))
    if max_count is not None:
        out = out[:max_count]
    return out


def frontier_reachability_filter(frontiers: list[Frontier], dist_field: DistanceField) -> list[Frontier]:
    return [f for f in frontiers if dist_field.reachable(f.anchor)]
