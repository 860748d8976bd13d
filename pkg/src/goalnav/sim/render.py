"""Per-pixel ray marching through the voxel world."""
from __future__ import annotations

import math

import numpy as np
from numba import njit

SKY = 0
FLOOR = 1
WALL = 2


@njit(cache=True)
def _march(vox, col_hi, origin, dirs, cell, max_depth, depth_offset, depth_out, id_out):
    nx, ny, nz = vox.shape
    H, W = dirs.shape[0], dirs.shape[1]
    ox, oy, oz = origin[0], origin[1], origin[2]
    top = nz * cell
    for r in range(H):
        for c in range(W):
            dx = dirs[r, c, 0]
            dy = dirs[r, c, 1]
            dz = dirs[r, c, 2]
            t_floor = oz / (-dz) if dz < 0.0 else np.inf
            t_lim = min(t_floor, max_depth * 1.000001)
            ix = int(math.floor(ox / cell))
            iy = int(math.floor(oy / cell))
            sx = 1 if dx > 0 else -1
            sy = 1 if dy > 0 else -1
            if dx != 0.0:
                tdx = cell / abs(dx)
                tmx = ((ix + (1 if dx > 0 else 0)) * cell - ox) / dx
            else:
                tdx = np.inf
                tmx = np.inf
            if dy != 0.0:
                tdy = cell / abs(dy)
                tmy = ((iy + (1 if dy > 0 else 0)) * cell - oy) / dy
            else:
                tdy = np.inf
                tmy = np.inf
            t_in = 0.0
            hit_t = -1.0
            hit_id = 0
            while True:
                if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
                    break
                z_in = oz + dz * t_in
                if dz >= 0.0 and z_in >= top:
                    break
                t_out = min(tmx, tmy)
                seg_end = min(t_out, t_lim)
                if col_hi[ix, iy] >= 0 and seg_end >= t_in:
                    z_out = oz + dz * seg_end
                    zlo = min(z_in, z_out)
                    zhi = max(z_in, z_out)
                    k0 = int(math.floor(zlo / cell))
                    k1 = int(math.floor(zhi / cell))
                    if k0 < 0:
                        k0 = 0
                    if k1 > col_hi[ix, iy]:
                        k1 = col_hi[ix, iy]
                    if k0 <= k1:
                        if dz < 0.0:
                            k = k1
                            kstep = -1
                            kend = k0 - 1
                        else:
                            k = k0
                            kstep = 1
                            kend = k1 + 1
                        while k != kend:
                            v = vox[ix, iy, k]
                            if v != 0:
                                if dz < 0.0:
                                    tz = (oz - (k + 1) * cell) / (-dz)
                                elif dz > 0.0:
                                    tz = (k * cell - oz) / dz
                                else:
                                    tz = t_in
                                hit_t = max(t_in, tz)
                                hit_id = v
                                break
                            k += kstep
                    if hit_id != 0:
                        break
                if t_out >= t_lim:
                    break
                t_in = t_out
                if tmx < tmy:
                    ix += sx
                    tmx += tdx
                else:
                    iy += sy
                    tmy += tdy
            if hit_id != 0:
                depth_out[r, c] = hit_t + depth_offset[hit_id]
                id_out[r, c] = hit_id
            elif t_floor <= t_lim:
                depth_out[r, c] = t_floor
                id_out[r, c] = 1
            else:
                depth_out[r, c] = 0.0
                id_out[r, c] = 0


@njit(cache=True)
def _march_columns(vox, col_hi, origin, dirs, cell, max_depth, depth_offset, depth_out, id_out):
    """Same result as ``_march`` when every image column shares one horizontal
    direction (level camera): the xy traversal is done once per column."""
    nx, ny, nz = vox.shape
    H, W = dirs.shape[0], dirs.shape[1]
    ox, oy, oz = origin[0], origin[1], origin[2]
    t_lim = np.empty(H)
    done = np.zeros(H, dtype=np.bool_)
    for c in range(W):
        dx = dirs[0, c, 0]
        dy = dirs[0, c, 1]
        t_far = 0.0
        for r in range(H):
            dz = dirs[r, c, 2]
            t_floor = oz / (-dz) if dz < 0.0 else np.inf
            t_lim[r] = min(t_floor, max_depth * 1.000001)
            if t_lim[r] > t_far:
                t_far = t_lim[r]
            done[r] = False
        left = H
        ix = int(math.floor(ox / cell))
        iy = int(math.floor(oy / cell))
        sx = 1 if dx > 0 else -1
        sy = 1 if dy > 0 else -1
        if dx != 0.0:
            tdx = cell / abs(dx)
            tmx = ((ix + (1 if dx > 0 else 0)) * cell - ox) / dx
        else:
            tdx = np.inf
            tmx = np.inf
        if dy != 0.0:
            tdy = cell / abs(dy)
            tmy = ((iy + (1 if dy > 0 else 0)) * cell - oy) / dy
        else:
            tdy = np.inf
            tmy = np.inf
        t_in = 0.0
        while left > 0 and t_in <= t_far:
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny:
                break
            t_out = min(tmx, tmy)
            hi_k = col_hi[ix, iy]
            if hi_k >= 0:
                for r in range(H):
                    if done[r]:
                        continue
                    dz = dirs[r, c, 2]
                    if t_in > t_lim[r]:
                        continue
                    z_in = oz + dz * t_in
                    seg_end = min(t_out, t_lim[r])
                    z_out = oz + dz * seg_end
                    k0 = int(math.floor(min(z_in, z_out) / cell))
                    k1 = int(math.floor(max(z_in, z_out) / cell))
                    if k0 < 0:
                        k0 = 0
                    if k1 > hi_k:
                        k1 = hi_k
                    if k0 > k1:
                        continue
                    if dz < 0.0:
                        k = k1
                        kstep = -1
                        kend = k0 - 1
                    else:
                        k = k0
                        kstep = 1
                        kend = k1 + 1
                    while k != kend:
                        v = vox[ix, iy, k]
                        if v != 0:
                            if dz < 0.0:
                                tz = (oz - (k + 1) * cell) / (-dz)
                            elif dz > 0.0:
                                tz = (k * cell - oz) / dz
                            else:
                                tz = t_in
                            depth_out[r, c] = max(t_in, tz) + depth_offset[v]
                            id_out[r, c] = v
                            done[r] = True
                            left -= 1
                            break
                        k += kstep
            t_in = t_out
            if tmx < tmy:
                ix += sx
                tmx += tdx
            else:
                iy += sy
                tmy += tdy
        for r in range(H):
            if done[r]:
                continue
            dz = dirs[r, c, 2]
            t_floor = oz / (-dz) if dz < 0.0 else np.inf
            if t_floor <= t_lim[r]:
                depth_out[r, c] = t_floor
                id_out[r, c] = 1
            else:
                depth_out[r, c] = 0.0
                id_out[r, c] = 0


def march_rays(vox, col_hi, origin, dirs, cell_size, max_depth, depth_offset, per_column=None):
    """Forward depth and hit ids for every ray. Depth 0 means no return.

    ``per_column`` selects the column-coherent kernel; by default it is used
    whenever all rays of each image column share their horizontal direction.
    """
    H, W = dirs.shape[:2]
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    if per_column is None:
        per_column = bool(np.all(dirs[:, :, :2] == dirs[:1, :, :2]))
    depth = np.zeros((H, W))
    ids = np.zeros((H, W), dtype=np.int16)
    kernel = _march_columns if per_column else _march
    kernel(
        vox, col_hi, np.asarray(origin, dtype=np.float64), dirs,
        float(cell_size), float(max_depth), np.asarray(depth_offset, dtype=np.float64), depth, ids,
    )
    return depth, ids


def slab_hits(dirs: np.ndarray, origin, box_min, box_max) -> np.ndarray:
    """Entry parameter of each ray into an axis-aligned box (+inf on a miss)."""
    o = np.asarray(origin, dtype=np.float64)
    d = dirs.reshape(-1, 3)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (np.asarray(box_min) - o) * inv
        t2 = (np.asarray(box_max) - o) * inv
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    t_enter = tmin.max(axis=1)
    t_exit = tmax.min(axis=1)
    hit = (t_exit >= np.maximum(t_enter, 0.0))
    out = np.where(hit, np.maximum(t_enter, 0.0), np.inf)
    return out.reshape(dirs.shape[:2])
