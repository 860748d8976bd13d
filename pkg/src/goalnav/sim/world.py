"""Voxel world, rendering, kinematics and ground-truth queries."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..geometry import CameraExtrinsics, CameraIntrinsics, Pose, camera_rays
from ..planner import (
    COARSE_TURN,
    FINE_TURN,
    FORWARD_STEP_M,
    INFLATE_CELLS,
    Action,
    DistanceField,
    _disk,
    fmm_solve,
)
from .render import FLOOR, SKY, WALL, march_rays, slab_hits

MIN_DEPTH = 0.5
MAX_DEPTH = 5.0
_SUBSTEP_M = 0.01


class ScenarioError(ValueError):
    pass


@dataclass
class WorldObject:
    id: int
    label: str
    aabb: tuple  # voxel-snapped (x0, y0, z0, x1, y1, z1), meters
    footprint: np.ndarray  # (n, 2) cells
    depth_offset_m: float = 0.0
    reflection: bool = False  # seen by sensors but never a valid goal


@dataclass
class Observation:
    rgb: np.ndarray
    depth: np.ndarray
    pose: Pose
    ids: np.ndarray | None = None


@dataclass
class World:
    vox: np.ndarray  # (nx, ny, nz) int16 ids; 0 empty
    cell_size: float
    objects: list[WorldObject]
    spawns: list[Pose]
    subtasks: list[str]
    name: str = "world"
    agent_radius_cells: int = INFLATE_CELLS
    col_hi: np.ndarray = field(init=False)
    blocked: np.ndarray = field(init=False)
    collision: np.ndarray = field(init=False)
    _goal_fields: dict = field(init=False, default_factory=dict)

    def __post_init__(self):
        occ = self.vox != 0
        nz = self.vox.shape[2]
        any_occ = occ.any(axis=2)
        hi = nz - 1 - np.argmax(occ[:, :, ::-1], axis=2)
        self.col_hi = np.where(any_occ, hi, -1).astype(np.int16)
        self.blocked = any_occ
        self.collision = ndimage.binary_dilation(self.blocked, structure=_disk(self.agent_radius_cells))
        self._goal_fields = {}
        self.depth_offset = np.zeros(max(3, len(self.objects) + 3))
        for o in self.objects:
            self.depth_offset[o.id] = o.depth_offset_m
        self.palette = _palette(len(self.depth_offset))

    @property
    def shape(self) -> tuple[int, int]:
        return self.vox.shape[:2]

    @property
    def traversable(self) -> np.ndarray:
        return ~self.collision

    def cell_of(self, x, y) -> tuple[int, int]:
        return int(math.floor(x / self.cell_size)), int(math.floor(y / self.cell_size))

    def is_free(self, x, y) -> bool:
        i, j = self.cell_of(x, y)
        if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
            return False
        return not self.collision[i, j]

    def labels(self) -> list[str]:
        return sorted({o.label for o in self.objects})

    def objects_with_label(self, label: str, reflections: bool = False) -> list[WorldObject]:
        return [o for o in self.objects if o.label == label and (reflections or not o.reflection)]

    # -- sensing ----------------------------------------------------------

    def render(self, pose: Pose, intr: CameraIntrinsics, ext: CameraExtrinsics, min_depth=MIN_DEPTH, max_depth=MAX_DEPTH) -> Observation:
        dirs = camera_rays(intr, ext, pose)
        origin = (pose.x, pose.y, ext.sensor_height_m)
        depth, ids = march_rays(self.vox, self.col_hi, origin, dirs, self.cell_size, max_depth, self.depth_offset)
        depth[(depth < min_depth) | (depth > max_depth)] = 0.0
        rgb = self.palette[ids]
        return Observation(rgb, depth, pose, ids)

    def decode_ids(self, rgb: np.ndarray) -> np.ndarray:
        key = _pack(rgb)
        pk = _pack(self.palette)
        order = np.argsort(pk)
        pos = np.searchsorted(pk[order], key)
        pos = np.clip(pos, 0, len(pk) - 1)
        ids = order[pos]
        ids[pk[ids] != key] = SKY
        return ids

    def unoccluded_pixels(self, obj: WorldObject, pose: Pose, intr, ext, min_depth=MIN_DEPTH, max_depth=MAX_DEPTH) -> np.ndarray:
        dirs = camera_rays(intr, ext, pose)
        t = slab_hits(dirs, (pose.x, pose.y, ext.sensor_height_m), obj.aabb[:3], obj.aabb[3:])
        t = t + obj.depth_offset_m
        return (t >= min_depth) & (t <= max_depth)

    # -- motion -----------------------------------------------------------

    def step(self, pose: Pose, action: Action) -> tuple[Pose, bool, float]:
        """Apply one action. Returns (new pose, collided, displacement in m)."""
        action = Action(action)
        if action == Action.STOP:
            return pose, False, 0.0
        if action in (Action.TURN_LEFT, Action.TURN_RIGHT, Action.TURN_LEFT_S, Action.TURN_RIGHT_S):
            mag = COARSE_TURN if action in (Action.TURN_LEFT, Action.TURN_RIGHT) else FINE_TURN
            sign = 1.0 if action in (Action.TURN_LEFT, Action.TURN_LEFT_S) else -1.0
            return Pose(pose.x, pose.y, pose.theta + sign * mag), False, 0.0
        fx, fy = -math.sin(pose.theta), math.cos(pose.theta)
        n = int(round(FORWARD_STEP_M / _SUBSTEP_M))
        x, y = pose.x, pose.y
        collided = False
        for k in range(1, n + 1):
            nxp = pose.x + fx * _SUBSTEP_M * k
            nyp = pose.y + fy * _SUBSTEP_M * k
            if not self.is_free(nxp, nyp):
                collided = True
                break
            x, y = nxp, nyp
        return Pose(x, y, pose.theta), collided, math.hypot(x - pose.x, y - pose.y)

    # -- ground truth -----------------------------------------------------

    def goal_region(self, label: str) -> np.ndarray:
        """Traversable cells next to any footprint of ``label``."""
        objs = self.objects_with_label(label)
        if not objs:
            raise ScenarioError(f"no object labelled {label!r}")
        fp = np.zeros(self.shape, dtype=bool)
        for o in objs:
            fp[o.footprint[:, 0], o.footprint[:, 1]] = True
        near = ndimage.binary_dilation(fp, structure=_disk(self.agent_radius_cells + 1))
        return np.argwhere(near & self.traversable)

    def goal_field(self, label: str) -> DistanceField:
        if label not in self._goal_fields:
            region = self.goal_region(label)
            if len(region) == 0:
                self._goal_fields[label] = DistanceField(np.full(self.shape, np.inf), region, self.cell_size)
            else:
                self._goal_fields[label] = fmm_solve(self.traversable, region, self.cell_size)
        return self._goal_fields[label]

    def geodesic_to(self, pose: Pose, label: str) -> float:
        i, j = self.cell_of(pose.x, pose.y)
        f = self.goal_field(label)
        if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
            return math.inf
        return float(f.arrival[i, j])

    def distance_to_object(self, x: float, y: float, label: str) -> float:
        """Euclidean distance from a floor point to the nearest footprint of ``label``."""
        best = math.inf
        for o in self.objects_with_label(label):
            x0, y0, _, x1, y1, _ = o.aabb
            dx = max(x0 - x, 0.0, x - x1)
            dy = max(y0 - y, 0.0, y - y1)
            best = min(best, math.hypot(dx, dy))
        return best


def _pack(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.int64)
    return (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]


def _palette(n: int) -> np.ndarray:
    pal = np.zeros((n, 3), dtype=np.uint8)
    pal[FLOOR] = (96, 96, 96)
    pal[WALL] = (192, 192, 192)
    for k in range(3, n):
        pal[k] = (k & 0xFF, (k >> 8) & 0xFF, 255)
    return pal


def _box_cells(lo: float, hi: float, cell: float, n: int) -> tuple[int, int]:
    """Index range [a, b) of cells whose centers fall inside [lo, hi]."""
    a = max(int(math.ceil(lo / cell - 0.5 - 1e-9)), 0)
    b = min(int(math.floor(hi / cell - 0.5 + 1e-9)) + 1, n)
    return a, b


def build_world(scn: dict) -> World:
    """Rasterize a validated scenario dict into a :class:`World`."""
    cell = float(scn.get("cell_size", 0.05))
    w, h = scn["size_m"]
    height = float(scn.get("height_m", 2.5))
    nx, ny, nz = int(round(w / cell)), int(round(h / cell)), int(round(height / cell))
    vox = np.zeros((nx, ny, nz), dtype=np.int16)
    for wall in scn.get("walls", []):
        (x0, y0), (x1, y1) = wall["from"], wall["to"]
        t = float(wall.get("thickness", 0.1)) / 2.0
        zt = float(wall.get("height", height))
        a, b = _box_cells(min(x0, x1) - t, max(x0, x1) + t, cell, nx)
        c, d = _box_cells(min(y0, y1) - t, max(y0, y1) + t, cell, ny)
        _, e = _box_cells(0.0, zt, cell, nz)
        vox[a:b, c:d, 0:e] = WALL
    objects = []
    for k, ob in enumerate(scn.get("objects", [])):
        oid = 3 + k
        x0, y0, z0, x1, y1, z1 = (float(v) for v in ob["aabb"])
        a, b = _box_cells(x0, x1, cell, nx)
        c, d = _box_cells(y0, y1, cell, ny)
        e, f = _box_cells(z0, z1, cell, nz)
        if a >= b or c >= d or e >= f:
            raise ScenarioError(f"object {ob['label']!r} is smaller than one voxel")
        vox[a:b, c:d, e:f] = oid
        ii, jj = np.mgrid[a:b, c:d]
        objects.append(
            WorldObject(
                oid,
                str(ob["label"]),
                (a * cell, c * cell, e * cell, b * cell, d * cell, f * cell),
                np.stack([ii.ravel(), jj.ravel()], axis=1),
                float(ob.get("depth_offset_m", 0.0)),
                bool(ob.get("reflection", False)),
            )
        )
    spawns = [Pose(float(s[0]), float(s[1]), math.radians(float(s[2]) if len(s) > 2 else 0.0)) for s in scn.get("spawns", [])]
    world = World(vox, cell, objects, spawns, list(scn.get("subtasks", [])), str(scn.get("name", "world")))
    for o in world.objects:
        if not np.all(world.vox[o.footprint[:, 0], o.footprint[:, 1]].max(axis=-1) != 0):
            raise ScenarioError(f"object {o.label!r} footprint not occupied")
    for s in world.spawns:
        if not world.is_free(s.x, s.y):
            raise ScenarioError(f"spawn ({s.x:.2f}, {s.y:.2f}) is not on free floor")
    for label in world.subtasks:
        if not world.objects_with_label(label):
            raise ScenarioError(f"subtask goal {label!r} has no object in the scene")
    return world
