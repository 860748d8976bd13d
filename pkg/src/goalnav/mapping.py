"""Voxel accumulation, BEV height slicing and goal-mask projection."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    InvalidParameterError,
    PointCloud,
    Pose,
    ShapeError,
    depth_to_world,
)

CELL_SIZE = 0.05
Z_BINS = 40  # 0 .. 2.0 m in 5 cm bins
Z_MIN = 0.25
TAU_OBS = 0.5
# floor returns can land a few ulp below z=0
_FLOOR_EPS = 1e-6


def obstacle_band(sensor_height_m: float) -> tuple[float, float]:
    return Z_MIN, sensor_height_m + 0.50


class NoValidDepthError(RuntimeError):
    """Every masked pixel had an invalid depth reading."""


@dataclass
class VoxelGrid:
    counts: np.ndarray  # (nx, ny, nz, C)
    cell_size: float = CELL_SIZE
    origin: tuple[float, float] = (0.0, 0.0)
    dropped: int = 0

    @classmethod
    def empty(cls, nx, ny, nz=Z_BINS, channels=1, cell_size=CELL_SIZE, origin=(0.0, 0.0)):
        if cell_size <= 0:
            raise InvalidParameterError("cell_size must be positive")
        return cls(np.zeros((nx, ny, nz, channels), dtype=np.int32), cell_size, tuple(origin))

    @property
    def height_m(self) -> float:
        return self.counts.shape[2] * self.cell_size

    def bin_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Voxel indices (N, 3) for points and the in-bounds mask."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        rel = np.empty_like(pts)
        rel[:, 0] = pts[:, 0] - self.origin[0]
        rel[:, 1] = pts[:, 1] - self.origin[1]
        rel[:, 2] = pts[:, 2]
        idx = np.floor(rel / self.cell_size).astype(np.int64)
        idx[(idx[:, 2] == -1) & (rel[:, 2] > -_FLOOR_EPS), 2] = 0
        nx, ny, nz, _ = self.counts.shape
        inb = (
            (idx[:, 0] >= 0) & (idx[:, 0] < nx)
            & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
            & (idx[:, 2] >= 0) & (idx[:, 2] < nz)
        )
        return idx, inb


def splat_points(grid: VoxelGrid, pc, channel_labels=None) -> VoxelGrid:
    """Nearest-voxel accumulation. Mutates and returns ``grid``.

    Every in-bounds point adds one count to channel 0 and, when a label > 0 is
    given, one more to its own channel. Out-of-bounds points only bump
    ``grid.dropped``.
    """
    points = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
    idx, inb = grid.bin_points(points)
    grid.dropped += int((~inb).sum())
    sel = idx[inb]
    np.add.at(grid.counts, (sel[:, 0], sel[:, 1], sel[:, 2], 0), 1)
    if channel_labels is not None:
        labels = np.asarray(channel_labels, dtype=np.int64).reshape(-1)[inb]
        keep = labels > 0
        s = sel[keep]
        np.add.at(grid.counts, (s[:, 0], s[:, 1], s[:, 2], labels[keep]), 1)
    return grid


def _band_bins(grid: VoxelGrid, z_min: float, z_max: float) -> tuple[int, int]:
    if not z_min < z_max:
        raise InvalidParameterError("z_min must be below z_max")
    if z_min < 0 or z_max > grid.height_m:
        raise InvalidParameterError(f"band [{z_min}, {z_max}] outside grid height {grid.height_m}")
    lo = int(math.floor(z_min / grid.cell_size + 1e-9))
    hi = min(int(math.floor(z_max / grid.cell_size + 1e-9)), grid.counts.shape[2] - 1)
    return lo, hi


def slice_obstacles(grid: VoxelGrid, z_min=Z_MIN, z_max=1.81, tau_obs=TAU_OBS) -> np.ndarray:
    lo, hi = _band_bins(grid, z_min, z_max)
    return grid.counts[:, :, lo : hi + 1, 0].sum(axis=2) > tau_obs


def slice_explored(grid: VoxelGrid) -> np.ndarray:
    return grid.counts[:, :, :, 0].sum(axis=2) > 0


@dataclass
class SemanticBevMap:
    obstacle: np.ndarray
    explored: np.ndarray
    semantic: np.ndarray  # (S, S, C) float32, one channel per goal query
    origin: tuple[float, float] = (0.0, 0.0)
    cell_size: float = CELL_SIZE

    @classmethod
    def empty(cls, shape, channels=1, cell_size=CELL_SIZE, origin=(0.0, 0.0)):
        shape = tuple(shape)
        return cls(
            np.zeros(shape, dtype=bool),
            np.zeros(shape, dtype=bool),
            np.zeros(shape + (channels,), dtype=np.float32),
            tuple(origin),
            float(cell_size),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.obstacle.shape

    @property
    def geometry(self):
        return (self.obstacle.shape, self.semantic.shape[2], self.origin, self.cell_size)

    @property
    def free(self) -> np.ndarray:
        return self.explored & ~self.obstacle

    @property
    def unknown(self) -> np.ndarray:
        return ~self.explored

    def copy(self) -> "SemanticBevMap":
        return SemanticBevMap(
            self.obstacle.copy(), self.explored.copy(), self.semantic.copy(), self.origin, self.cell_size
        )

    def world_to_cell(self, x, y):
        ix = np.floor((np.asarray(x) - self.origin[0]) / self.cell_size).astype(np.int64)
        iy = np.floor((np.asarray(y) - self.origin[1]) / self.cell_size).astype(np.int64)
        return ix, iy

    def cell_to_world(self, ix, iy):
        return (
            self.origin[0] + (np.asarray(ix) + 0.5) * self.cell_size,
            self.origin[1] + (np.asarray(iy) + 0.5) * self.cell_size,
        )

    def pose_cell(self, pose: Pose) -> tuple[int, int]:
        ix, iy = self.world_to_cell(pose.x, pose.y)
        return int(ix), int(iy)

    def in_bounds(self, ix, iy):
        return (ix >= 0) & (ix < self.shape[0]) & (iy >= 0) & (iy < self.shape[1])

    def __eq__(self, other):
        if not isinstance(other, SemanticBevMap):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.obstacle, other.obstacle)
            and np.array_equal(self.explored, other.explored)
            and np.array_equal(self.semantic, other.semantic)
        )


@dataclass
class BevGoal:
    centroid: tuple[float, float]  # mean support cell (ix, iy), fractional
    support_cells: np.ndarray  # (K, 2) int
    source: str = "detector"
    confidence: float = 0.0

    def __post_init__(self):
        self.support_cells = np.asarray(self.support_cells, dtype=np.int64).reshape(-1, 2)
        if self.source == "detector" and len(self.support_cells) == 0:
            raise ValueError("detector goals need a non-empty support")

    @property
    def centroid_cell(self) -> tuple[int, int]:
        return int(round(self.centroid[0])), int(round(self.centroid[1]))


def project_goal_mask(
    mask: np.ndarray,
    depth: np.ndarray,
    intr: CameraIntrinsics,
    ext: CameraExtrinsics,
    pose: Pose,
    bev: SemanticBevMap,
    channel: int | None = None,
    confidence: float = 1.0,
    min_depth: float = 0.5,
    max_depth: float = 5.0,
) -> BevGoal:
    """Back-project a detection mask through depth into BEV goal cells.

    The support is also written (as confidence, max-pooled) into ``channel`` of
    ``bev.semantic`` wherever the cell is already explored.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != np.shape(depth):
        raise ShapeError(f"mask {mask.shape} and depth {np.shape(depth)} differ")
    if not mask.any():
        raise ValueError("empty detection mask")
    masked_depth = np.where(mask, depth, 0.0)
    pc = depth_to_world(masked_depth, intr, ext, pose, min_depth, max_depth)
    if len(pc) == 0:
        raise NoValidDepthError("no masked pixel has a valid depth")
    ix, iy = bev.world_to_cell(pc.points[:, 0], pc.points[:, 1])
    inb = bev.in_bounds(ix, iy)
    if not inb.any():
        raise NoValidDepthError("all masked points fall outside the map")
    cells = np.unique(np.stack([ix[inb], iy[inb]], axis=1), axis=0)
    centroid = tuple(float(c) for c in cells.mean(axis=0))
    if channel is not None:
        known = bev.explored[cells[:, 0], cells[:, 1]]
        k = cells[known]
        cur = bev.semantic[k[:, 0], k[:, 1], channel]
        bev.semantic[k[:, 0], k[:, 1], channel] = np.maximum(cur, np.float32(confidence))
    return BevGoal(centroid, cells, "detector", float(confidence))


@njit(cache=True)
def _accumulate(counts, sel, total, band, lo, hi, tau, explored, obstacle):
    for n in range(sel.shape[0]):
        i, j, k = sel[n, 0], sel[n, 1], sel[n, 2]
        counts[i, j, k, 0] += 1
        total[i, j] += 1
        explored[i, j] = True
        if lo <= k <= hi:
            band[i, j] += 1
            if band[i, j] > tau:
                obstacle[i, j] = True


@dataclass
class Mapper:
    """Per-agent voxel accumulator that keeps its BEV slices current.

    BEV channels are maintained incrementally from 2D band/total counts; they
    always equal :func:`slice_obstacles` / :func:`slice_explored` on ``grid``
    OR-ed with carved free space.
    """

    grid: VoxelGrid
    bev: SemanticBevMap
    z_band: tuple[float, float] = (Z_MIN, 1.81)
    tau_obs: float = TAU_OBS
    band_counts: np.ndarray = field(init=False)
    total_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self._lo, self._hi = _band_bins(self.grid, *self.z_band)
        self.band_counts = self.grid.counts[:, :, self._lo : self._hi + 1, 0].sum(axis=2).astype(np.int64)
        self.total_counts = self.grid.counts[:, :, :, 0].sum(axis=2).astype(np.int64)

    @classmethod
    def create(cls, shape, channels=1, cell_size=CELL_SIZE, origin=(0.0, 0.0), sensor_height_m=1.31, tau_obs=TAU_OBS):
        grid = VoxelGrid.empty(shape[0], shape[1], Z_BINS, 1, cell_size, origin)
        bev = SemanticBevMap.empty(shape, channels, cell_size, origin)
        return cls(grid, bev, obstacle_band(sensor_height_m), tau_obs)

    def integrate(self, points: np.ndarray) -> None:
        idx, inb = self.grid.bin_points(points)
        self.grid.dropped += int((~inb).sum())
        sel = np.ascontiguousarray(idx[inb])
        if len(sel) == 0:
            return
        _accumulate(self.grid.counts, sel, self.total_counts, self.band_counts, self._lo, self._hi,
                    float(self.tau_obs), self.bev.explored, self.bev.obstacle)

    def carve(self, visible: np.ndarray) -> None:
        self.bev.explored |= visible

    def add_bump(self, x: float, y: float) -> None:
        z = 0.5 * (self.z_band[0] + self.z_band[1])
        pts = np.repeat([[x, y, z]], int(math.floor(self.tau_obs)) + 1, axis=0)
        self.integrate(pts)


# ---------------------------------------------------------------------------
# snapshot export

def _to_image_rows(grid2d: np.ndarray) -> np.ndarray:
    # map arrays are indexed [ix, iy]; images put +y at the top row
    return np.flipud(np.asarray(grid2d).T)


def write_pgm(path, grid2d: np.ndarray) -> None:
    img = np.ascontiguousarray(_to_image_rows(grid2d), dtype=np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(t) for t in parts[1].split())
    img = np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
    return np.flipud(img).T.copy()


def export_snapshot(bev: SemanticBevMap, out_dir, prefix: str, value_mu: np.ndarray | None = None) -> list[Path]:
    """Write obstacle/explored(/value) PGMs plus a ``.txt`` header with the map geometry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    layers = {
        "obstacle": bev.obstacle.astype(np.uint8) * 255,
        "explored": bev.explored.astype(np.uint8) * 255,
    }
    if value_mu is not None:
        layers["value"] = np.round(np.clip(value_mu, 0.0, 1.0) * 255.0).astype(np.uint8)
    written = []
    for name, arr in layers.items():
        p = out_dir / f"{prefix}_{name}.pgm"
        write_pgm(p, arr)
        written.append(p)
    header = out_dir / f"{prefix}.txt"
    header.write_text(
        "goalnav-map 1\n"
        f"origin_x {bev.origin[0]:.6f}\n"
        f"origin_y {bev.origin[1]:.6f}\n"
        f"cell_size {bev.cell_size:.6f}\n"
        f"width {bev.shape[0]}\n"
        f"height {bev.shape[1]}\n"
        f"layers {' '.join(layers)}\n"
    )
    written.append(header)
    return written
