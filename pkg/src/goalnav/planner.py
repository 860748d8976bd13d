"""Fast Marching geodesics, short-term-goal descent and discrete actions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import ndimage

from .geometry import InvalidParameterError, Pose, normalize_angle

FORWARD_STEP_M = 0.25
COARSE_TURN = math.radians(30.0)
FINE_TURN = math.radians(10.0)
STG_MAX_CELLS = 25
INFLATE_CELLS = 2
GOAL_SNAP_M = 0.6


class Action(enum.IntEnum):
    STOP = 0
    MOVE_FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3
    TURN_LEFT_S = 4
    TURN_RIGHT_S = 5


class ReplanRequired(RuntimeError):
    """The agent's cell has no finite arrival time in the field."""


class GoalUnreachable(RuntimeError):
    pass


@dataclass
class DistanceField:
    arrival: np.ndarray  # meters, +inf where unreachable
    goal_cells: np.ndarray  # (K, 2)
    cell_size: float = 1.0

    def at(self, cell) -> float:
        return float(self.arrival[cell[0], cell[1]])

    def reachable(self, cell) -> bool:
        i, j = cell
        if not (0 <= i < self.arrival.shape[0] and 0 <= j < self.arrival.shape[1]):
            return False
        return bool(np.isfinite(self.arrival[i, j]))


@njit(cache=True)
def _sift_up(hk, hv, pos, k):
    while k > 0:
        p = (k - 1) >> 1
        if hk[p] <= hk[k]:
            break
        hk[p], hk[k] = hk[k], hk[p]
        hv[p], hv[k] = hv[k], hv[p]
        pos[hv[p]] = p
        pos[hv[k]] = k
        k = p


@njit(cache=True)
def _sift_down(hk, hv, pos, k, n):
    while True:
        l = 2 * k + 1
        if l >= n:
            break
        c = l
        if l + 1 < n and hk[l + 1] < hk[l]:
            c = l + 1
        if hk[k] <= hk[c]:
            break
        hk[c], hk[k] = hk[k], hk[c]
        hv[c], hv[k] = hv[k], hv[c]
        pos[hv[c]] = c
        pos[hv[k]] = k
        k = c


@njit(cache=True)
def _line_of_sight(trav, i0, j0, i1, j1):
    """Supercover walk from cell (i0, j0) to (i1, j1); every touched cell
    except the start must be traversable. Corner crossings test both sides."""
    di = i1 - i0
    dj = j1 - j0
    si = 1 if di > 0 else -1
    sj = 1 if dj > 0 else -1
    ai = abs(di)
    aj = abs(dj)
    i = i0
    j = j0
    ci = 0
    cj = 0
    while ci < ai or cj < aj:
        # compare crossing times (2*c+1)/(2*a) without division
        lhs = (2 * ci + 1) * aj
        rhs = (2 * cj + 1) * ai
        if ci < ai and (cj >= aj or lhs < rhs):
            i += si
            ci += 1
        elif cj < aj and (ci >= ai or rhs < lhs):
            j += sj
            cj += 1
        else:
            if not trav[i + si, j] or not trav[i, j + sj]:
                return False
            i += si
            j += sj
            ci += 1
            cj += 1
        if not trav[i, j]:
            return False
    return True


@njit(cache=True)
def _upwind(T, known, a, b, da, db, nx, ny):
    best = np.inf
    for s in (-1, 1):
        i1 = a + s * da
        j1 = b + s * db
        if 0 <= i1 < nx and 0 <= j1 < ny and known[i1, j1] and T[i1, j1] < best:
            best = T[i1, j1]
    return best


@njit(cache=True)
def _push(hk, hv, pos, size, g, val):
    if pos[g] == -1:
        hk[size] = val
        hv[size] = g
        pos[g] = size
        _sift_up(hk, hv, pos, size)
        return size + 1
    hk[pos[g]] = val
    _sift_up(hk, hv, pos, pos[g])
    return size


@njit(cache=True)
def _fmm_kernel(speed_ok, sources, stop_i, stop_j, stop_margin, seed_radius):
    nx, ny = speed_ok.shape
    n = nx * ny
    T = np.full((nx, ny), np.inf)
    known = np.zeros((nx, ny), dtype=np.bool_)
    hk = np.empty(n)
    hv = np.empty(n, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    size = 0
    for k in range(sources.shape[0]):
        T[sources[k, 0], sources[k, 1]] = 0.0
        size = _push(hk, hv, pos, size, sources[k, 0] * ny + sources[k, 1], 0.0)
    # exact Euclidean seeding around each source removes the point-source
    # error of the first-order stencil
    r = int(seed_radius)
    for k in range(sources.shape[0]):
        si = sources[k, 0]
        sj = sources[k, 1]
        for a in range(max(si - r, 0), min(si + r + 1, nx)):
            for b in range(max(sj - r, 0), min(sj + r + 1, ny)):
                if not speed_ok[a, b]:
                    continue
                d = math.sqrt(float((a - si) * (a - si) + (b - sj) * (b - sj)))
                if d == 0.0 or d > seed_radius or d >= T[a, b]:
                    continue
                if not _line_of_sight(speed_ok, si, sj, a, b):
                    continue
                T[a, b] = d
                size = _push(hk, hv, pos, size, a * ny + b, d)
    stop_at = np.inf
    while size > 0:
        t = hk[0]
        f = hv[0]
        size -= 1
        if size > 0:
            hk[0] = hk[size]
            hv[0] = hv[size]
            pos[hv[0]] = 0
            _sift_down(hk, hv, pos, 0, size)
        pos[f] = -2
        if t > stop_at:
            break
        i = f // ny
        j = f - i * ny
        known[i, j] = True
        if i == stop_i and j == stop_j:
            stop_at = t + stop_margin
        for k in range(4):
            a = i + (1 if k == 0 else -1 if k == 1 else 0)
            b = j + (1 if k == 2 else -1 if k == 3 else 0)
            if a < 0 or a >= nx or b < 0 or b >= ny:
                continue
            if known[a, b] or not speed_ok[a, b]:
                continue
            tx = _upwind(T, known, a, b, 1, 0, nx, ny)
            ty = _upwind(T, known, a, b, 0, 1, nx, ny)
            lo = min(tx, ty)
            hi = max(tx, ty)
            if hi - lo >= 1.0:
                new = lo + 1.0
            else:
                new = 0.5 * (lo + hi + math.sqrt(2.0 - (hi - lo) * (hi - lo)))
            if new < T[a, b]:
                T[a, b] = new
                size = _push(hk, hv, pos, size, a * ny + b, new)
    # trial values left behind by an early stop are bounds, not arrivals
    for i in range(nx):
        for j in range(ny):
            if not known[i, j]:
                T[i, j] = np.inf
    return T


def fmm_solve(
    traversable: np.ndarray,
    goals,
    cell_size: float = 1.0,
    stop_at_cell=None,
    stop_margin_cells: float = 3.0,
    seed_radius: float = 3.0,
) -> DistanceField:
    """First-order upwind FMM with unit speed on ``traversable`` cells.

    Cells within ``seed_radius`` of a source and in its line of sight start
    from their exact Euclidean distance.

    Goal cells are sources regardless of their own traversability. With
    ``stop_at_cell`` the march halts once that cell is accepted (plus a margin),
    leaving everything not yet accepted at +inf.
    """
    goals = np.asarray(goals, dtype=np.int64).reshape(-1, 2)
    if len(goals) == 0:
        raise InvalidParameterError("goal set is empty")
    trav = np.ascontiguousarray(traversable, dtype=np.bool_)
    inb = (goals[:, 0] >= 0) & (goals[:, 0] < trav.shape[0]) & (goals[:, 1] >= 0) & (goals[:, 1] < trav.shape[1])
    goals = goals[inb]
    if len(goals) == 0:
        raise InvalidParameterError("no goal cell inside the grid")
    si, sj = (-1, -1) if stop_at_cell is None else (int(stop_at_cell[0]), int(stop_at_cell[1]))
    T = _fmm_kernel(trav, goals, si, sj, float(stop_margin_cells), float(seed_radius))
    return DistanceField(T * cell_size, goals, cell_size)


_NEIGHBORS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def descent_path(field: DistanceField, start, max_cells: int = STG_MAX_CELLS) -> list[tuple[int, int]]:
    """Steepest-neighbor descent on the arrival field (8-neighborhood, no
    corner cutting). Returns visited cells including ``start``."""
    T = field.arrival
    nx, ny = T.shape
    i, j = int(start[0]), int(start[1])
    if not field.reachable((i, j)):
        raise ReplanRequired(f"cell {(i, j)} has no finite arrival time")
    path = [(i, j)]
    for _ in range(max_cells):
        cur = T[i, j]
        if cur == 0.0:
            break
        best, best_t = None, cur
        for di, dj in _NEIGHBORS8:
            a, b = i + di, j + dj
            if not (0 <= a < nx and 0 <= b < ny):
                continue
            if di and dj and not (np.isfinite(T[i + di, j]) and np.isfinite(T[i, j + dj])):
                continue
            t = T[a, b]
            if t < best_t:
                best, best_t = (a, b), t
        if best is None:
            break
        i, j = best
        path.append(best)
    return path


def extract_stg(field: DistanceField, agent_cell, max_cells: int = STG_MAX_CELLS) -> tuple[int, int]:
    return descent_path(field, agent_cell, max_cells)[-1]


def visible_stg(field: DistanceField, agent_cell, traversable: np.ndarray, max_cells: int = STG_MAX_CELLS) -> tuple[int, int]:
    """Farthest cell of the clipped descent path that the agent can reach in a
    straight line over ``traversable``. Steering at it never cuts a corner."""
    path = descent_path(field, agent_cell, max_cells)
    trav = np.ascontiguousarray(traversable, dtype=np.bool_)
    i0, j0 = path[0]
    for k in range(len(path) - 1, 0, -1):
        if _line_of_sight(trav, i0, j0, path[k][0], path[k][1]):
            return path[k]
    return path[1] if len(path) > 1 else path[0]


def select_action(
    pose: Pose,
    stg_xy,
    stop_eligible: bool = False,
    goal_distance: float = math.inf,
    goal_radius: float = 1.0,
) -> Action:
    """Turn toward the short-term goal, then move forward.

    Coarse turns above 15 degrees of bearing error, fine turns above 5.
    """
    if stop_eligible and goal_distance <= goal_radius:
        return Action.STOP
    rel = relative_bearing(pose, stg_xy)
    if abs(rel) > COARSE_TURN / 2:
        return Action.TURN_LEFT if rel > 0 else Action.TURN_RIGHT
    if abs(rel) > FINE_TURN / 2:
        return Action.TURN_LEFT_S if rel > 0 else Action.TURN_RIGHT_S
    return Action.MOVE_FORWARD


def relative_bearing(pose: Pose, target_xy) -> float:
    dx = float(target_xy[0]) - pose.x
    dy = float(target_xy[1]) - pose.y
    # heading 0 is +y and counter-clockwise positive, so the bearing of
    # (dx, dy) is atan2(-dx, dy)
    return normalize_angle(math.atan2(-dx, dy) - pose.theta)


def _disk(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= radius_cells * radius_cells


def inflate(obstacle: np.ndarray, cells: int = INFLATE_CELLS) -> np.ndarray:
    if cells <= 0:
        return obstacle.copy()
    return ndimage.binary_dilation(obstacle, structure=_disk(cells))


def traversable_grid(obstacle, explored, unknown_traversable: bool, agent_cell=None, inflate_cells=INFLATE_CELLS) -> np.ndarray:
    """Planning mask. Unknown space counts as free only in exploration mode.

    When the agent's own cell lies inside the inflation margin, nearby cells at
    least as far from raw obstacles as the agent are freed, so it can back out
    but never plan closer to an obstacle than it already is.
    """
    trav = ~inflate(obstacle, inflate_cells)
    if not unknown_traversable:
        trav &= explored
    if agent_cell is not None:
        i, j = agent_cell
        if trav[i, j]:
            return trav
        r = inflate_cells + 1
        x0, x1 = max(i - r, 0), min(i + r + 1, trav.shape[0])
        y0, y1 = max(j - r, 0), min(j + r + 1, trav.shape[1])
        # distance to raw obstacles over a window wide enough to be exact here
        p = r + inflate_cells + 1
        wx0, wx1 = max(i - p, 0), min(i + p + 1, trav.shape[0])
        wy0, wy1 = max(j - p, 0), min(j + p + 1, trav.shape[1])
        edt = ndimage.distance_transform_edt(~obstacle[wx0:wx1, wy0:wy1])
        clear = edt[x0 - wx0 : x1 - wx0, y0 - wy0 : y1 - wy0] >= edt[i - wx0, j - wy0] - 1e-9
        d = _disk(r)[x0 - i + r : x1 - i + r, y0 - j + r : y1 - j + r]
        trav[x0:x1, y0:y1] |= d & clear & ~obstacle[x0:x1, y0:y1]
        trav[i, j] = not obstacle[i, j]
    return trav


def resolve_goal_cells(goal_cells, traversable: np.ndarray, cell_size: float, snap_m: float = GOAL_SNAP_M) -> np.ndarray:
    """Replace non-traversable goal cells by their nearest traversable cell
    within ``snap_m``. Raises GoalUnreachable when nothing survives."""
    goal_cells = np.asarray(goal_cells, dtype=np.int64).reshape(-1, 2)
    ok = traversable[goal_cells[:, 0], goal_cells[:, 1]]
    out = [goal_cells[ok]]
    bad = goal_cells[~ok]
    if len(bad) and traversable.any():
        dist, (ni, nj) = ndimage.distance_transform_edt(~traversable, return_indices=True)
        d = dist[bad[:, 0], bad[:, 1]] * cell_size
        near = d <= snap_m + 1e-9
        snapped = np.stack([ni[bad[near, 0], bad[near, 1]], nj[bad[near, 0], bad[near, 1]]], axis=1)
        out.append(snapped)
    cells = np.unique(np.concatenate(out), axis=0)
    if len(cells) == 0:
        raise GoalUnreachable("no traversable cell near the goal")
    return cells
