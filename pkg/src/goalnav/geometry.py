"""Camera model, depth back-projection and frame transforms.

Frames used throughout the package:

* camera frame: (right, forward, up). Image rows grow downward, so the row
  term of the pinhole model is negated once, in :func:`backproject_depth`.
* geocentric frame: camera frame rotated by the elevation (pitch) and lifted by
  the sensor height, so the third component is height above the floor.
* world/map frame: x, y on the floor plane, z up. A heading of 0 faces +y and
  positive headings turn counter-clockwise.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np


class InvalidParameterError(ValueError):
    pass


class ShapeError(ValueError):
    pass


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(a, 2.0 * math.pi)
    return math.pi if a <= -math.pi else a


@dataclass(frozen=True)
class CameraIntrinsics:
    sensor_width_px: int
    sensor_height_px: int
    hfov_rad: float
    proc_width_px: int
    proc_height_px: int
    f_x: float
    f_z: float
    c_x: float
    c_y: float

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols) of a processed image."""
        return (self.proc_height_px, self.proc_width_px)


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    @property
    def forward(self) -> np.ndarray:
        return np.array([-math.sin(self.theta), math.cos(self.theta)])

    def inverse(self) -> "Pose":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.theta)

    def compose(self, other: "Pose") -> "Pose":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )


@dataclass(frozen=True)
class CameraExtrinsics:
    elevation_rad: float = 0.0
    sensor_height_m: float = 1.31

    def __post_init__(self):
        if not self.sensor_height_m > 0:
            raise InvalidParameterError("sensor_height_m must be positive")


@dataclass
class PointCloud:
    """Points as an (N, 3) array plus the per-pixel validity mask they came from.

    ``points`` holds only the valid pixels, in row-major pixel order.
    """

    points: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        return PointCloud(points, self.valid)


def compute_intrinsics(sensor_w, sensor_h, hfov, proc_w, proc_h) -> CameraIntrinsics:
    vals = (sensor_w, sensor_h, hfov, proc_w, proc_h)
    if not all(isinstance(v, (int, float, np.integer, np.floating)) and math.isfinite(v) for v in vals):
        raise InvalidParameterError(f"non-finite intrinsics input {vals}")
    if min(sensor_w, sensor_h, proc_w, proc_h) < 2:
        raise InvalidParameterError("image dimensions must be >= 2")
    if not 0.0 < hfov < math.pi:
        raise InvalidParameterError(f"hfov must lie in (0, pi), got {hfov}")
    f_s = sensor_w / (2.0 * math.tan(hfov / 2.0))
    s_x = proc_w / sensor_w
    s_y = proc_h / sensor_h
    return CameraIntrinsics(
        sensor_width_px=int(sensor_w),
        sensor_height_px=int(sensor_h),
        hfov_rad=float(hfov),
        proc_width_px=int(proc_w),
        proc_height_px=int(proc_h),
        f_x=f_s * s_x,
        f_z=f_s * s_y,
        c_x=(proc_w - 1) / 2.0,
        c_y=(proc_h - 1) / 2.0,
    )


def default_intrinsics() -> CameraIntrinsics:
    # portrait 360x640 sensor processed at 160x120, 42 degree HFOV
    return compute_intrinsics(360, 640, math.radians(42.0), 160, 120)


def backproject_depth(depth: np.ndarray, intr: CameraIntrinsics, min_depth=0.5, max_depth=5.0) -> PointCloud:
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != intr.shape:
        raise ShapeError(f"depth shape {depth.shape} != processing shape {intr.shape}")
    # 0 encodes a missing return and is always invalid
    valid = np.isfinite(depth) & (depth > 0) & (depth >= min_depth) & (depth <= max_depth)
    v, u = np.nonzero(valid)
    d = depth[v, u]
    pts = np.empty((len(d), 3))
    pts[:, 0] = (u - intr.c_x) * d / intr.f_x
    pts[:, 1] = d
    pts[:, 2] = -(v - intr.c_y) * d / intr.f_z
    return PointCloud(pts, valid)


def project_points(points: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of the pinhole back-projection: camera points -> (u, v, depth)."""
    points = np.atleast_2d(points)
    d = points[:, 1]
    u = points[:, 0] * intr.f_x / d + intr.c_x
    v = -points[:, 2] * intr.f_z / d + intr.c_y
    return u, v, d


def pitch_matrix(elevation: float) -> np.ndarray:
    c, s = math.cos(elevation), math.sin(elevation)
    # rotation about the right axis; negative elevation tips the forward axis down
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def to_geocentric(pc: PointCloud, ext: CameraExtrinsics) -> PointCloud:
    pts = pc.points @ pitch_matrix(ext.elevation_rad).T
    pts[:, 2] += ext.sensor_height_m
    return pc.with_points(pts)


def world_transform(pc: PointCloud, pose: Pose) -> PointCloud:
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    pts = pc.points.copy()
    x, y = pc.points[:, 0], pc.points[:, 1]
    pts[:, 0] = pose.x + c * x - s * y
    pts[:, 1] = pose.y + s * x + c * y
    return pc.with_points(pts)


@functools.lru_cache(maxsize=16)
def _geocentric_rays(intr: CameraIntrinsics, ext: CameraExtrinsics) -> np.ndarray:
    v, u = np.mgrid[0 : intr.proc_height_px, 0 : intr.proc_width_px]
    cam = np.stack(
        [(u - intr.c_x) / intr.f_x, np.ones(u.shape), -(v - intr.c_y) / intr.f_z], axis=-1
    ).reshape(-1, 3)
    geo = cam @ pitch_matrix(ext.elevation_rad).T
    geo.setflags(write=False)
    return geo


def camera_rays(intr: CameraIntrinsics, ext: CameraExtrinsics, pose: Pose) -> np.ndarray:
    """World-frame ray directions for every pixel, scaled so that the ray
    parameter equals forward (optical-axis) depth. Shape (H, W, 3)."""
    geo = _geocentric_rays(intr, ext)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out = np.empty_like(geo)
    out[:, 0] = c * geo[:, 0] - s * geo[:, 1]
    out[:, 1] = s * geo[:, 0] + c * geo[:, 1]
    out[:, 2] = geo[:, 2]
    return out.reshape(intr.proc_height_px, intr.proc_width_px, 3)


def depth_to_world(depth, intr, ext, pose, min_depth=0.5, max_depth=5.0) -> PointCloud:
    pc = backproject_depth(depth, intr, min_depth, max_depth)
    return world_transform(to_geocentric(pc, ext), pose)
