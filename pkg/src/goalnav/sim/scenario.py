"""Scenario files (JSON, versioned) and the seeded multi-room generator."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .world import ScenarioError, World, build_world

SCHEMA = "goalnav-scenario"
VERSION = 1

ROOM_TYPES = {
    "bedroom": ["bed", "wardrobe", "nightstand"],
    "kitchen": ["refrigerator", "oven", "dining table"],
    "living room": ["sofa", "tv", "armchair"],
    "bathroom": ["toilet", "sink", "bathtub"],
    "office": ["desk", "bookshelf", "printer"],
}
# (width, depth, height) ranges in meters
_SIZES = {
    "bed": ((1.2, 1.6), (0.9, 1.1), (0.5, 0.7)),
    "wardrobe": ((0.8, 1.2), (0.5, 0.6), (1.6, 1.9)),
    "nightstand": ((0.4, 0.5), (0.4, 0.5), (0.5, 0.6)),
    "refrigerator": ((0.6, 0.8), (0.6, 0.7), (1.6, 1.8)),
    "oven": ((0.6, 0.7), (0.5, 0.6), (0.8, 0.9)),
    "dining table": ((1.0, 1.4), (0.7, 0.9), (0.7, 0.8)),
    "sofa": ((1.4, 1.8), (0.7, 0.9), (0.7, 0.9)),
    "tv": ((0.9, 1.2), (0.2, 0.3), (1.0, 1.3)),
    "armchair": ((0.7, 0.8), (0.7, 0.8), (0.7, 0.9)),
    "toilet": ((0.4, 0.5), (0.6, 0.7), (0.7, 0.8)),
    "sink": ((0.5, 0.7), (0.4, 0.5), (0.8, 0.9)),
    "bathtub": ((1.4, 1.6), (0.7, 0.8), (0.5, 0.6)),
    "desk": ((1.0, 1.4), (0.6, 0.7), (0.7, 0.8)),
    "bookshelf": ((0.8, 1.2), (0.3, 0.4), (1.6, 1.9)),
    "printer": ((0.4, 0.5), (0.4, 0.5), (0.9, 1.1)),
}

_REQUIRED = ("schema", "version", "name", "size_m", "walls", "objects", "spawns", "subtasks")


def validate(scn: dict, check_reachability: bool = True) -> World:
    """Check the schema and world-level invariants. Returns the built world."""
    missing = [k for k in _REQUIRED if k not in scn]
    if missing:
        raise ScenarioError(f"missing fields: {', '.join(missing)}")
    if scn["schema"] != SCHEMA or scn["version"] != VERSION:
        raise ScenarioError(f"unsupported schema {scn['schema']!r} v{scn['version']}")
    if len(scn["size_m"]) != 2 or min(scn["size_m"]) <= 0:
        raise ScenarioError("size_m must be two positive numbers")
    if not scn["spawns"]:
        raise ScenarioError("at least one spawn is required")
    if not scn["subtasks"]:
        raise ScenarioError("subtask chain is empty")
    for ob in scn["objects"]:
        if len(ob.get("aabb", ())) != 6 or not ob.get("label"):
            raise ScenarioError(f"bad object entry {ob!r}")
    world = build_world(scn)
    if check_reachability:
        for label in world.subtasks:
            for s in world.spawns:
                d = world.geodesic_to(s, label)
                if not math.isfinite(d):
                    raise ScenarioError(f"{label!r} unreachable from spawn ({s.x:.2f}, {s.y:.2f})")
    return world


def load(path) -> dict:
    with open(path) as f:
        return json.load(f)


def save(scn: dict, path) -> None:
    Path(path).write_text(json.dumps(scn, indent=1, sort_keys=True) + "\n")


def load_world(path) -> World:
    return validate(load(path))


def _r(x: float) -> float:
    return round(float(x), 2)


def generate(
    seed: int,
    rooms: tuple[int, int] = (3, 3),
    room_m: float = 3.0,
    n_subtasks: tuple[int, int] = (3, 5),
    n_spawns: int = 4,
    extra_door_p: float = 0.25,
    door_m: float = 1.0,
    margin: float = 0.5,
) -> dict:
    """Seeded grid of rooms joined by doors, furnished by room type.

    Doors follow a random spanning tree over the room grid plus a few extra
    openings, so every room is reachable. Furniture sits against walls away
    from door gaps.
    """
    rng = np.random.default_rng(seed)
    rx, ry = rooms
    W, H = rx * room_m + 2 * margin, ry * room_m + 2 * margin
    x_at = lambda i: margin + i * room_m  # noqa: E731
    y_at = lambda j: margin + j * room_m  # noqa: E731

    # spanning tree via randomized DFS
    doors = set()
    seen = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        i, j = stack[-1]
        nbrs = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < rx and 0 <= j + dj < ry and (i + di, j + dj) not in seen]
        if not nbrs:
            stack.pop()
            continue
        n = nbrs[rng.integers(len(nbrs))]
        doors.add(tuple(sorted([(i, j), n])))
        seen.add(n)
        stack.append(n)
    for i in range(rx):
        for j in range(ry):
            for n in ((i + 1, j), (i, j + 1)):
                if n[0] < rx and n[1] < ry and rng.random() < extra_door_p:
                    doors.add(((i, j), n))

    walls = []
    gaps: dict[tuple, list[tuple[float, float]]] = {}  # room -> door intervals along walls (for furniture)
    walls.append({"from": [x_at(0), y_at(0)], "to": [x_at(rx), y_at(0)]})
    walls.append({"from": [x_at(0), y_at(ry)], "to": [x_at(rx), y_at(ry)]})
    walls.append({"from": [x_at(0), y_at(0)], "to": [x_at(0), y_at(ry)]})
    walls.append({"from": [x_at(rx), y_at(0)], "to": [x_at(rx), y_at(ry)]})
    door_pos = {}
    for (a, b) in sorted(doors):
        off = float(rng.uniform(0.3, room_m - 0.3 - door_m))
        door_pos[(a, b)] = off
    # vertical walls between (i, j) and (i+1, j)
    for i in range(1, rx):
        for j in range(ry):
            lo, hi = y_at(j), y_at(j + 1)
            key = ((i - 1, j), (i, j))
            if key in door_pos:
                d0 = lo + door_pos[key]
                walls.append({"from": [x_at(i), lo], "to": [x_at(i), d0]})
                walls.append({"from": [x_at(i), d0 + door_m], "to": [x_at(i), hi]})
                gaps.setdefault(key[0], []).append(("E", d0, d0 + door_m))
                gaps.setdefault(key[1], []).append(("W", d0, d0 + door_m))
            else:
                walls.append({"from": [x_at(i), lo], "to": [x_at(i), hi]})
    for j in range(1, ry):
        for i in range(rx):
            lo, hi = x_at(i), x_at(i + 1)
            key = ((i, j - 1), (i, j))
            if key in door_pos:
                d0 = lo + door_pos[key]
                walls.append({"from": [lo, y_at(j)], "to": [d0, y_at(j)]})
                walls.append({"from": [d0 + door_m, y_at(j)], "to": [hi, y_at(j)]})
                gaps.setdefault(key[0], []).append(("N", d0, d0 + door_m))
                gaps.setdefault(key[1], []).append(("S", d0, d0 + door_m))
            else:
                walls.append({"from": [lo, y_at(j)], "to": [hi, y_at(j)]})
    for w in walls:
        w["from"] = [_r(v) for v in w["from"]]
        w["to"] = [_r(v) for v in w["to"]]
        w["thickness"] = 0.1
        w["height"] = 2.5

    types = list(ROOM_TYPES)
    objects = []
    for i in range(rx):
        for j in range(ry):
            rtype = types[int(rng.integers(len(types)))]
            labels = list(ROOM_TYPES[rtype])
            rng.shuffle(labels)
            used_sides = set()
            for label in labels[: int(rng.integers(1, 3))]:
                sides = [s for s in "NSEW" if s not in used_sides]
                side = sides[int(rng.integers(len(sides)))]
                used_sides.add(side)
                box = _place(rng, label, side, x_at(i), y_at(j), room_m, gaps.get((i, j), []))
                if box is not None and not any(_overlap(box, o["aabb"], 0.3) for o in objects):
                    objects.append({"label": label, "aabb": [_r(v) for v in box]})

    labels = sorted({o["label"] for o in objects})
    k = int(rng.integers(n_subtasks[0], n_subtasks[1] + 1))
    chain = [labels[int(t)] for t in rng.choice(len(labels), size=min(k, len(labels)), replace=False)]

    scn = {
        "schema": SCHEMA,
        "version": VERSION,
        "name": f"procgen-{seed:04d}",
        "size_m": [_r(W), _r(H)],
        "cell_size": 0.05,
        "height_m": 2.5,
        "walls": walls,
        "objects": objects,
        "spawns": [],
        "subtasks": chain,
    }
    world = build_world(scn)
    spawns = []
    tries = 0
    while len(spawns) < n_spawns and tries < 1000:
        tries += 1
        x, y = rng.uniform(margin + 0.3, W - margin - 0.3), rng.uniform(margin + 0.3, H - margin - 0.3)
        if not world.is_free(x, y) or _near_any_free_wall(world, x, y, 0.35):
            continue
        spawns.append([_r(x), _r(y), float(rng.integers(0, 12) * 30)])
    scn["spawns"] = spawns
    return scn


def _near_any_free_wall(world: World, x: float, y: float, r: float) -> bool:
    for dx, dy in ((r, 0), (-r, 0), (0, r), (0, -r)):
        if not world.is_free(x + dx, y + dy):
            return True
    return False


def _overlap(a, b, pad):
    return a[0] - pad < b[3] and b[0] - pad < a[3] and a[1] - pad < b[4] and b[1] - pad < a[4]


def _place(rng, label, side, x0, y0, room_m, gaps):
    """Box against wall ``side`` of the room at (x0, y0), clear of door gaps."""
    (wl, wh), (dl, dh), (hl, hh) = _SIZES[label]
    w, d, h = rng.uniform(wl, wh), rng.uniform(dl, dh), rng.uniform(hl, hh)
    inset = 0.1  # clearance from the wall face
    lo, hi = 0.35, room_m - 0.35 - w
    if hi <= lo:
        return None
    blocked = [(a, b) for s, a, b in gaps if s == side]
    base = y0 if side in "EW" else x0
    for _ in range(20):
        t = rng.uniform(lo, hi)
        a, b = base + t, base + t + w
        if all(b < ga - 0.5 or a > gb + 0.5 for ga, gb in blocked):
            break
    else:
        return None
    if side == "S":
        return (a, y0 + 0.05 + inset, 0.0, b, y0 + 0.05 + inset + d, h)
    if side == "N":
        return (a, y0 + room_m - 0.05 - inset - d, 0.0, b, y0 + room_m - 0.05 - inset, h)
    if side == "W":
        return (x0 + 0.05 + inset, a, 0.0, x0 + 0.05 + inset + d, b, h)
    return (x0 + room_m - 0.05 - inset - d, a, 0.0, x0 + room_m - 0.05 - inset, b, h)


def generate_valid(seed: int, **kw) -> dict:
    """First generator output at or after ``seed`` that passes validation."""
    for k in range(100):
        scn = generate(seed * 101 + k, **kw)
        scn["name"] = f"procgen-{seed:04d}"
        try:
            validate(scn)
        except ScenarioError:
            continue
        return scn
    raise ScenarioError(f"no valid scenario near seed {seed}")


def write_procedural_set(out_dir, n: int, seed: int = 0, **kw) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(n):
        p = out / f"procgen-{seed + k:04d}.json"
        save(generate_valid(seed + k, **kw), p)
        paths.append(p)
    return paths


def builtin_dir() -> Path:
    """Directory holding the hand-built scenes shipped with the package."""
    return Path(__file__).resolve().parent.parent / "scenarios"
