"""Independent reference implementations used as test oracles."""
import math

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra


def grid_dijkstra(traversable, sources, connectivity=4, corner_cutting=True):
    """Shortest path lengths in cells over traversable cells (sources always allowed)."""
    trav = np.asarray(traversable, dtype=bool).copy()
    src = np.asarray(sources, dtype=np.int64).reshape(-1, 2)
    trav[src[:, 0], src[:, 1]] = True
    nx, ny = trav.shape
    ii, jj = np.nonzero(trav)
    steps = [(1, 0), (0, 1)]
    if connectivity == 8:
        steps += [(1, 1), (1, -1)]
    rows, cols, w = [], [], []
    for di, dj in steps:
        a, b = ii + di, jj + dj
        ok = (a >= 0) & (a < nx) & (b >= 0) & (b < ny)
        ok[ok] = trav[a[ok], b[ok]]
        if di and dj and not corner_cutting:
            ok[ok] = trav[ii[ok] + di, jj[ok]] & trav[ii[ok], jj[ok] + dj]
        rows.append(ii[ok] * ny + jj[ok])
        cols.append(a[ok] * ny + b[ok])
        w.append(np.full(int(ok.sum()), math.hypot(di, dj)))
    r, c, ww = np.concatenate(rows), np.concatenate(cols), np.concatenate(w)
    g = coo_matrix((ww, (r, c)), shape=(nx * ny, nx * ny)).tocsr()
    d = dijkstra(g, directed=False, indices=src[:, 0] * ny + src[:, 1], min_only=True)
    return d.reshape(nx, ny)


def naive_dijkstra(traversable, sources, connectivity=4):
    """Plain heapq reference for cross-checking :func:`grid_dijkstra` on small grids."""
    import heapq

    trav = np.asarray(traversable, dtype=bool).copy()
    nx, ny = trav.shape
    dist = np.full((nx, ny), np.inf)
    heap = []
    for i, j in np.asarray(sources).reshape(-1, 2):
        trav[i, j] = True
        dist[i, j] = 0.0
        heap.append((0.0, int(i), int(j)))
    heapq.heapify(heap)
    nb = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    if connectivity == 8:
        nb += [(1, 1), (1, -1), (-1, 1), (-1, -1)]
    while heap:
        d, i, j = heapq.heappop(heap)
        if d > dist[i, j]:
            continue
        for di, dj in nb:
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and trav[a, b]:
                nd = d + math.hypot(di, dj)
                if nd < dist[a, b]:
                    dist[a, b] = nd
                    heapq.heappush(heap, (nd, a, b))
    return dist


def random_maze(n, rng, corridor=1):
    """Perfect maze (randomised DFS) carved with corridors ``corridor`` cells wide,
    walls one cell thick. Returns a boolean traversable grid of shape (n, n)."""
    pitch = corridor + 1
    m = (n - 1) // pitch
    grid = np.zeros((n, n), dtype=bool)

    def carve(ci, cj):
        i, j = 1 + ci * pitch, 1 + cj * pitch
        grid[i: i + corridor, j: j + corridor] = True

    seen = np.zeros((m, m), dtype=bool)
    stack = [(0, 0)]
    seen[0, 0] = True
    carve(0, 0)
    while stack:
        ci, cj = stack[-1]
        nbrs = [(ci + a, cj + b) for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= ci + a < m and 0 <= cj + b < m and not seen[ci + a, cj + b]]
        if not nbrs:
            stack.pop()
            continue
        ni, nj = nbrs[rng.integers(len(nbrs))]
        seen[ni, nj] = True
        carve(ni, nj)
        # knock out the wall between the two cells
        i0, j0 = 1 + min(ci, ni) * pitch, 1 + min(cj, nj) * pitch
        if ni != ci:
            grid[i0 + corridor, j0: j0 + corridor] = True
        else:
            grid[i0: i0 + corridor, j0 + corridor] = True
        stack.append((ni, nj))
    return grid


def point_box_distance_bruteforce(x, y, box, samples=401):
    x0, y0, x1, y1 = box
    xs = np.linspace(x0, x1, samples)
    ys = np.linspace(y0, y1, samples)
    border = np.concatenate([
        np.stack([xs, np.full_like(xs, y0)], 1), np.stack([xs, np.full_like(xs, y1)], 1),
        np.stack([np.full_like(ys, x0), ys], 1), np.stack([np.full_like(ys, x1), ys], 1),
    ])
    inside = x0 <= x <= x1 and y0 <= y <= y1
    return 0.0 if inside else float(np.hypot(border[:, 0] - x, border[:, 1] - y).min())


def summary_bruteforce(episodes):
    """Independent recomputation of the headline batch numbers from raw record fields.

    ``episodes`` is a list of lists of SubtaskRecord.
    """
    n = succ = 0
    spl_sum = 0.0
    steps = []
    fail_dtg = []
    cats = {"perfect": 0, "partial": 0, "complete-failure": 0}
    for ep in episodes:
        if not ep:
            continue
        k = 0
        for r in ep:
            n += 1
            ok = r.stop_called and r.dtg_final <= 1.0
            assert ok == r.success
            if ok:
                succ += 1
                k += 1
                spl_sum += r.d_geo / (r.d_agent if r.d_agent > r.d_geo else r.d_geo)
                steps.append(r.steps)
            elif r.dtg_final != float("inf"):
                fail_dtg.append(r.dtg_final)
        cats["perfect" if k == len(ep) else "partial" if k else "complete-failure"] += 1
    return {
        "sr": succ / n,
        "spl": spl_sum / n,
        "steps_success_mean": sum(steps) / len(steps) if steps else None,
        "dtg_fail_mean": sum(fail_dtg) / len(fail_dtg) if fail_dtg else None,
        "category_counts": cats,
    }


def random_records(rng, n_episodes, max_sub=5):
    from goalnav.metrics import SubtaskRecord

    episodes = []
    for e in range(n_episodes):
        ep = []
        for s in range(int(rng.integers(1, max_sub + 1))):
            d_geo = float(rng.uniform(0.2, 20.0))
            stop = bool(rng.random() < 0.7)
            dtg = float(rng.uniform(0.0, 6.0))
            ok = stop and dtg <= 1.0
            ep.append(SubtaskRecord(ok, d_geo, float(rng.uniform(0.0, 3 * d_geo)), dtg, int(rng.integers(1, 500)),
                                    stop, f"e{e}", s, str(rng.choice(["chair", "bed", "tv"]))))
        episodes.append(ep)
    return episodes


def thick_line_of_sight(blocked, a, b, half_width=0.4):
    """True when three parallel segments (centre and +-half_width cells) from
    cell a to cell b cross no blocked cell other than b itself."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    v = b - a
    length = np.linalg.norm(v)
    if length == 0:
        return True
    nrm = np.array([-v[1], v[0]]) / length
    t = np.linspace(0.0, 1.0, int(length * 4) + 2)[1:-1]
    for off in (-half_width, 0.0, half_width):
        c = np.floor(a + off * nrm + t[:, None] * v + 0.5).astype(int)
        keep = np.abs(c - b).max(axis=1) != 0
        if blocked[c[keep, 0], c[keep, 1]].any():
            return False
    return True


def visible_face_cells(world, pose, z_band, r_min=1.5, r_max=4.5, max_incidence_cos=0.26):
    """Occupied cells (within the height band) facing the agent's free space that a
    camera at ``pose`` sees head-on enough to sample: some free 4-neighbour in
    the agent's component is in clear line of sight at an incidence within
    about 75 degrees of the face normal, at horizontal range [r_min, r_max]."""
    from scipy import ndimage

    cell = world.cell_size
    iz0 = int(np.ceil(z_band[0] / cell))
    iz1 = int(z_band[1] / cell)
    truth = (world.vox[:, :, iz0:iz1 + 1] != 0).any(axis=2)
    lab, _ = ndimage.label(~world.blocked)
    ci = np.array(world.cell_of(pose.x, pose.y))
    comp = lab == lab[tuple(ci)]
    face = truth & ndimage.binary_dilation(comp, ndimage.generate_binary_structure(2, 1))
    cand = np.argwhere(face)
    d = np.hypot(*(cand - ci).T) * cell
    out = []
    for c in cand[(d > r_min) & (d < r_max)]:
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            n = (c[0] + dx, c[1] + dy)
            v = np.array(n, dtype=float) - ci
            v /= np.linalg.norm(v)
            if comp[n] and -(v[0] * dx + v[1] * dy) > max_incidence_cos and thick_line_of_sight(world.blocked, ci, n):
                out.append(tuple(c))
                break
    return truth, out
