"""Bayesian belief/variance map fused over visible cones, scored with UCB."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import CameraExtrinsics, CameraIntrinsics, InvalidParameterError, Pose

MU0 = 0.5
SIGMA2_0 = 0.5
BETA = 1.7
UCB_RADIUS_M = 0.5
FEATHER_CELLS = 2.0
_EPS = 1e-6


@dataclass
class ValueMap:
    mu: np.ndarray
    sigma2: np.ndarray
    mu0: float = MU0
    sigma2_0: float = SIGMA2_0

    @classmethod
    def fresh(cls, shape, mu0=MU0, sigma2_0=SIGMA2_0) -> "ValueMap":
        return cls(np.full(shape, mu0), np.full(shape, sigma2_0), mu0, sigma2_0)

    def copy(self) -> "ValueMap":
        return ValueMap(self.mu.copy(), self.sigma2.copy(), self.mu0, self.sigma2_0)


@dataclass
class ConeMask:
    m: np.ndarray


def build_cone_mask(
    depth: np.ndarray,
    intr: CameraIntrinsics,
    ext: CameraExtrinsics,
    pose: Pose,
    shape,
    origin=(0.0, 0.0),
    cell_size: float = 0.05,
    min_depth: float = 0.5,
    max_depth: float = 5.0,
    feather_cells: float = FEATHER_CELLS,
) -> ConeMask:
    """Floor-plane footprint of what the camera saw this frame.

    A cell is inside when it projects into an image column and lies no
    farther (along the optical axis) than the deepest valid return of that
    column. ``m`` ramps from 0 at the cone boundary to 1 at ``feather_cells``
    inside it. Camera pitch is ignored for the floor-plane footprint.
    """
    depth = np.asarray(depth, dtype=np.float64)
    m = np.zeros(tuple(shape))
    valid = (depth > 0) & (depth >= min_depth) & (depth <= max_depth) & np.isfinite(depth)
    if not valid.any():
        return ConeMask(m)
    col_range = np.where(valid, depth, 0.0).max(axis=0)
    reach = float(col_range.max())

    ix0 = int(math.floor((pose.x - reach - origin[0]) / cell_size)) - 1
    ix1 = int(math.floor((pose.x + reach - origin[0]) / cell_size)) + 2
    iy0 = int(math.floor((pose.y - reach - origin[1]) / cell_size)) - 1
    iy1 = int(math.floor((pose.y + reach - origin[1]) / cell_size)) + 2
    ix0, iy0 = max(ix0, 0), max(iy0, 0)
    ix1, iy1 = min(ix1, shape[0]), min(iy1, shape[1])
    if ix0 >= ix1 or iy0 >= iy1:
        return ConeMask(m)

    gx, gy = np.meshgrid(
        origin[0] + (np.arange(ix0, ix1) + 0.5) * cell_size,
        origin[1] + (np.arange(iy0, iy1) + 0.5) * cell_size,
        indexing="ij",
    )
    dx, dy = gx - pose.x, gy - pose.y
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    right = c * dx + s * dy
    fwd = -s * dx + c * dy

    half_w = (intr.c_x + 0.5) / intr.f_x  # tan of the half field of view
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.c_x + intr.f_x * right / fwd
    ahead = fwd > 1e-9
    col = np.clip(np.round(np.where(ahead, u, 0.0)), 0, intr.proc_width_px - 1).astype(np.int64)
    rng = col_range[col]
    lateral = (fwd * half_w - np.abs(right)) / cell_size
    radial = (rng - fwd) / cell_size
    margin = np.minimum(lateral, radial)
    inside = ahead & (margin > 0) & (rng > 0)
    m[ix0:ix1, iy0:iy1] = np.where(inside, np.clip(margin / feather_cells, 0.0, 1.0), 0.0)
    return ConeMask(m)


def bayes_update(vm: ValueMap, confidence: float, mask: ConeMask) -> ValueMap:
    if not (0.0 <= confidence <= 1.0) or not math.isfinite(confidence):
        raise InvalidParameterError(f"confidence must lie in [0, 1], got {confidence}")
    m = mask.m
    sel = m > 0
    if not sel.any():
        return vm
    mu, sig, mm = vm.mu[sel], vm.sigma2[sel], m[sel]
    obs_var = 1.0 - mm
    denom = sig + obs_var
    safe = denom > _EPS
    d = np.where(safe, denom, 1.0)
    # fully confident prior re-observed with full trust: take the observation
    new_mu = np.where(safe, (obs_var * mu + sig * confidence * mm) / d, confidence * mm)
    new_sig = np.where(safe, sig * obs_var / d, 0.0)
    out = vm.copy()
    out.mu[sel] = np.clip(new_mu, 0.0, 1.0)
    out.sigma2[sel] = new_sig
    return out


def _disk_cells(shape, center, radius_cells):
    cx, cy = center
    r = int(math.ceil(radius_cells)) + 1
    i0, i1 = max(int(math.floor(cx)) - r, 0), min(int(math.floor(cx)) + r + 2, shape[0])
    j0, j1 = max(int(math.floor(cy)) - r, 0), min(int(math.floor(cy)) + r + 2, shape[1])
    if i0 >= i1 or j0 >= j1:
        return None
    ii, jj = np.mgrid[i0:i1, j0:j1]
    inside = (ii - cx) ** 2 + (jj - cy) ** 2 <= radius_cells**2 + 1e-9
    return ii[inside], jj[inside]


def ucb_score(vm: ValueMap, center, radius_m: float = UCB_RADIUS_M, beta: float = BETA, cell_size: float = 0.05) -> float:
    """UCB of the median belief and variance in a disk around ``center``.

    ``center`` is a map cell (fractional allowed) or anything with a
    ``centroid`` attribute.
    """
    if radius_m <= 0:
        raise InvalidParameterError("radius must be positive")
    center = getattr(center, "centroid", center)
    cells = _disk_cells(vm.mu.shape, center, radius_m / cell_size)
    if cells is None or len(cells[0]) == 0:
        mu, s2 = vm.mu0, vm.sigma2_0
    else:
        mu = float(np.median(vm.mu[cells]))
        s2 = float(np.median(vm.sigma2[cells]))
    return mu + beta * math.sqrt(max(s2, 0.0))


def normalize_values(scores) -> list[float]:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return []
    lo, hi = s.min(), s.max()
    if hi - lo <= 1e-12:
        return [0.5] * len(s)
    return list((s - lo) / (hi - lo))


def fuse_value_maps(maps: list[ValueMap]) -> ValueMap:
    mu = np.maximum.reduce([m.mu for m in maps])
    s2 = np.minimum.reduce([m.sigma2 for m in maps])
    return ValueMap(mu, s2, maps[0].mu0, maps[0].sigma2_0)
