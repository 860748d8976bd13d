"""Map fusion, greedy frontier allocation and the lockstep multi-agent loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .frontier import Frontier, extract_frontiers
from .geometry import CameraExtrinsics, CameraIntrinsics, Pose, ShapeError, depth_to_world
from .mapping import BevGoal, Mapper, NoValidDepthError, SemanticBevMap, project_goal_mask
from .metrics import SubtaskRecord, accumulate_multiagent_path, dtg
from .perception import (
    BLEND_W,
    N_CONFIRM,
    TAU_DET,
    ConfirmationState,
    GoalQuery,
    ScoreRequest,
    blend_utility,
    confirm,
    safe_detect,
    safe_score,
)
from .planner import (
    Action,
    GoalUnreachable,
    ReplanRequired,
    fmm_solve,
    resolve_goal_cells,
    select_action,
    traversable_grid,
    visible_stg,
)
from .valuemap import BETA, ValueMap, bayes_update, build_cone_mask, fuse_value_maps, normalize_values, ucb_score

log = logging.getLogger(__name__)

_FOUR = ndimage.generate_binary_structure(2, 1)
_FINE = {Action.TURN_LEFT: Action.TURN_LEFT_S, Action.TURN_RIGHT: Action.TURN_RIGHT_S}


@dataclass
class NavConfig:
    w: float = BLEND_W
    beta: float = BETA
    tau_det: float = TAU_DET
    n_confirm: int = N_CONFIRM
    budget: int = 500
    use_value_map: bool = True
    share_value_maps: bool = False
    stickiness: float = 0.15
    stop_radius_m: float = 0.9
    success_m: float = 1.0
    max_frontiers: int = 4
    min_frontier_cells: int = 4
    sticky_match_m: float = 1.0
    goal_unknown_traversable: bool = False
    send_image: bool = False


# ---------------------------------------------------------------------------
# fusion and allocation

def fuse_maps(maps: Sequence[SemanticBevMap]) -> SemanticBevMap:
    """Element-wise max over agents; boolean layers fuse with OR."""
    if not maps:
        raise ValueError("nothing to fuse")
    g = maps[0].geometry
    for m in maps[1:]:
        if m.geometry != g:
            raise ShapeError(f"map geometry {m.geometry} != {g}")
    out = maps[0].copy()
    for m in maps[1:]:
        out.obstacle |= m.obstacle
        out.explored |= m.explored
        np.maximum(out.semantic, m.semantic, out=out.semantic)
    return out


@dataclass
class Allocation:
    assignment: dict[int, int | None]

    def __post_init__(self):
        taken = [f for f in self.assignment.values() if f is not None]
        if len(taken) != len(set(taken)):
            raise AssertionError(f"frontier assigned twice: {self.assignment}")


def allocate_frontiers(utilities, agent_ids: Sequence[int] | None = None, previous: dict | None = None, stickiness: float = 0.0) -> Allocation:
    """Sequential greedy: each agent in id order takes its best remaining frontier.

    ``utilities[k][f]`` is agent k's utility for frontier f (-inf marks
    unreachable). An agent keeps ``previous[id]`` if it is still free and its
    utility is within ``stickiness`` of the best remaining one.
    """
    U = np.asarray(utilities, dtype=np.float64)
    if U.ndim == 1:
        U = U.reshape(1, -1)
    ids = list(agent_ids) if agent_ids is not None else list(range(U.shape[0]))
    previous = previous or {}
    free = np.ones(U.shape[1] if U.ndim == 2 else 0, dtype=bool)
    out: dict[int, int | None] = {}
    for k in sorted(range(len(ids)), key=lambda k: ids[k]):
        row = np.where(free, U[k], -np.inf) if free.size else np.array([])
        if row.size == 0 or not np.isfinite(row).any():
            out[ids[k]] = None
            continue
        best = int(np.argmax(row))
        prev = previous.get(ids[k])
        if prev is not None and 0 <= prev < row.size and np.isfinite(row[prev]) and row[prev] >= row[best] - stickiness:
            best = prev
        out[ids[k]] = best
        free[best] = False
    return Allocation(out)


# ---------------------------------------------------------------------------
# agents

@dataclass
class AgentState:
    id: int
    pose: Pose
    mapper: Mapper
    value_map: ValueMap
    confirmation: ConfirmationState = field(default_factory=ConfirmationState)
    current_goal: BevGoal | None = None
    target_xy: tuple[float, float] | None = None
    steps_taken: int = 0
    last_rgb: np.ndarray | None = None
    searched: np.ndarray | None = None  # cells observed since the subtask began

    @property
    def map(self) -> SemanticBevMap:
        return self.mapper.bev

    def reset_subtask(self, query_id: int):
        self.confirmation = ConfirmationState(query_id)
        self.current_goal = None
        self.target_xy = None
        self.steps_taken = 0
        self.searched = np.zeros(self.map.shape, dtype=bool)


@dataclass
class Sensors:
    intr: CameraIntrinsics
    ext: CameraExtrinsics
    min_depth: float = 0.5
    max_depth: float = 5.0


@dataclass
class RoundContext:
    """Per-subtask state shared by the team."""

    query: GoalQuery
    channel: int
    blacklist: np.ndarray
    fallbacks: int = 0


def perceive(agent: AgentState, obs, ctx: RoundContext, detector, sensors: Sensors, cfg: NavConfig) -> None:
    """Observe, update the map and value map, run confirmation."""
    bev = agent.map
    pc = depth_to_world(obs.depth, sensors.intr, sensors.ext, obs.pose, sensors.min_depth, sensors.max_depth)
    agent.mapper.integrate(pc.points)
    cone = build_cone_mask(
        obs.depth, sensors.intr, sensors.ext, obs.pose, bev.shape, bev.origin, bev.cell_size,
        sensors.min_depth, sensors.max_depth,
    )
    seen = cone.m > 0
    agent.mapper.carve(seen)
    if agent.searched is not None:
        agent.searched |= seen
        ix, iy = bev.world_to_cell(pc.points[:, 0], pc.points[:, 1])
        inb = bev.in_bounds(ix, iy)
        agent.searched[ix[inb], iy[inb]] = True
    agent.last_rgb = obs.rgb
    dets = safe_detect(detector, obs, ctx.query)
    c = dets[0].confidence if dets else 0.0
    if cfg.use_value_map:
        agent.value_map = bayes_update(agent.value_map, c, cone)
    agent.confirmation, confirmed = confirm(agent.confirmation, dets, cfg.tau_det, cfg.n_confirm)
    if not confirmed:
        return
    best = agent.confirmation.last_confirmed_detection
    try:
        goal = project_goal_mask(
            best.mask, obs.depth, sensors.intr, sensors.ext, obs.pose, bev,
            channel=ctx.channel, confidence=best.confidence,
            min_depth=sensors.min_depth, max_depth=sensors.max_depth,
        )
    except NoValidDepthError:
        return
    keep = ~ctx.blacklist[goal.support_cells[:, 0], goal.support_cells[:, 1]]
    if keep.any():
        cells = goal.support_cells[keep]
        agent.current_goal = BevGoal(tuple(cells.mean(axis=0)), cells, "detector", goal.confidence)


def sync_round(agents: Sequence[AgentState]) -> SemanticBevMap:
    return fuse_maps([a.map for a in agents])


def _adopt_shared_goal(agent: AgentState, shared: SemanticBevMap, ctx: RoundContext) -> None:
    sem = (shared.semantic[:, :, ctx.channel] > 0) & ~ctx.blacklist
    if sem.any():
        cells = np.argwhere(sem)
        agent.current_goal = BevGoal(tuple(cells.mean(axis=0)), cells, "shared", float(shared.semantic[:, :, ctx.channel].max()))


def _nearest_cell_distance(cells: np.ndarray, cell, cell_size: float) -> float:
    d = cells - np.asarray(cell)
    return float(np.sqrt((d * d).sum(axis=1)).min()) * cell_size


def _cell_xy(bev: SemanticBevMap, cell) -> tuple[float, float]:
    x, y = bev.cell_to_world(cell[0], cell[1])
    return float(x), float(y)


def _plan_to(cells, trav: np.ndarray, agent_cell, bev: SemanticBevMap) -> tuple[int, int]:
    field = fmm_solve(trav, cells, bev.cell_size, stop_at_cell=agent_cell)
    return visible_stg(field, agent_cell, trav)


def _steer(pose: Pose, stg, agent_cell, bev: SemanticBevMap) -> Action:
    # standing on the target already: look around instead of chasing the cell center
    if tuple(stg) == tuple(agent_cell):
        return Action.TURN_LEFT
    return select_action(pose, _cell_xy(bev, stg))


def plan_goal(agent: AgentState, shared: SemanticBevMap, ctx: RoundContext, cfg: NavConfig) -> Action | None:
    """Approach the current goal. None means the goal was dropped."""
    goal = agent.current_goal
    cell = shared.pose_cell(agent.pose)
    dist = _nearest_cell_distance(goal.support_cells, cell, shared.cell_size)
    if dist <= cfg.stop_radius_m:
        return Action.STOP
    trav = traversable_grid(shared.obstacle, shared.explored, cfg.goal_unknown_traversable, cell)
    try:
        targets = resolve_goal_cells(goal.support_cells, trav, shared.cell_size)
    except GoalUnreachable:
        log.info("agent %d: goal has no traversable cell nearby, blacklisting it", agent.id)
        ctx.blacklist[goal.support_cells[:, 0], goal.support_cells[:, 1]] = True
        agent.current_goal = None
        agent.confirmation = ConfirmationState(ctx.query.query_id)
        return None
    try:
        stg = _plan_to(targets, trav, cell, shared)
    except ReplanRequired:
        agent.current_goal = None
        agent.confirmation = ConfirmationState(ctx.query.query_id)
        return None
    return _steer(agent.pose, stg, cell, shared)


def frontier_utilities(agent: AgentState, frontiers: list[Frontier], shared: SemanticBevMap, reach: np.ndarray,
                       ctx: RoundContext, scorer, cfg: NavConfig, value_map: ValueMap | None, round_idx: int) -> np.ndarray:
    reachable = np.array([bool(reach[f.cells[:, 0], f.cells[:, 1]].any()) for f in frontiers])
    U = np.full(len(frontiers), -np.inf)
    if not reachable.any():
        return U
    idx = np.flatnonzero(reachable)
    fr = [frontiers[i] for i in idx]
    req = ScoreRequest(
        ctx.query,
        [_cell_xy(shared, f.centroid) for f in fr],
        [f.anchor for f in fr],
        (agent.pose.x, agent.pose.y, agent.pose.theta),
        agent.last_rgb if cfg.send_image else None,
        {"round": round_idx, "explored_cells": int(shared.explored.sum()), "agent": agent.id},
    )
    scores = safe_score(scorer, req)
    if scores.fallback:
        ctx.fallbacks += 1
    if cfg.use_value_map and cfg.w > 0 and value_map is not None:
        ucb = [ucb_score(value_map, f.centroid, beta=cfg.beta, cell_size=shared.cell_size) for f in fr]
        v = normalize_values(ucb)
        w = cfg.w
    else:
        v, w = [0.0] * len(fr), 0.0
    U[idx] = blend_utility(scores, v, w)
    return U


def _explore_unknown(agent: AgentState, shared: SemanticBevMap, trav: np.ndarray, reach: np.ndarray, cell) -> Action:
    """Head for the nearest reachable unknown cell; spin when there is none."""
    cand = np.argwhere(reach & shared.unknown & ~shared.obstacle)
    if len(cand) == 0:
        return Action.TURN_LEFT
    d = ((cand - np.asarray(cell)) ** 2).sum(axis=1)
    target = cand[int(np.argmin(d))]
    try:
        stg = _plan_to(target[None, :], trav, cell, shared)
    except ReplanRequired:
        return Action.TURN_LEFT
    return _steer(agent.pose, stg, cell, shared)


@dataclass
class Team:
    """N agents sharing a world, stepped in lockstep rounds."""

    world: object
    agents: list[AgentState]
    detector: object
    scorer: object
    sensors: Sensors
    cfg: NavConfig = field(default_factory=NavConfig)
    on_round: Callable | None = None
    trajectories: list[list[tuple[float, float]]] = field(default_factory=list)

    @classmethod
    def create(cls, world, spawns: Sequence[Pose], detector, scorer, sensors: Sensors, cfg: NavConfig | None = None,
               channels: int = 1, on_round=None) -> "Team":
        shape = world.shape
        agents = []
        for i, p in enumerate(spawns):
            mapper = Mapper.create(shape, channels, world.cell_size, (0.0, 0.0), sensors.ext.sensor_height_m)
            agents.append(AgentState(i, p, mapper, ValueMap.fresh(shape)))
        return cls(world, agents, detector, scorer, sensors, cfg or NavConfig(), on_round,
                   [[(p.x, p.y)] for p in spawns])

    def shared_value_map(self) -> ValueMap:
        return fuse_value_maps([a.value_map for a in self.agents])

    def run_subtask(self, label: str, query_id: int, channel: int, scenario: str = "") -> SubtaskRecord:
        world, cfg = self.world, self.cfg
        query = GoalQuery(label, query_id)
        ctx = RoundContext(query, channel, np.zeros(world.shape, dtype=bool))
        for a in self.agents:
            a.reset_subtask(query_id)
        d_geo = min(world.geodesic_to(a.pose, label) for a in self.agents)
        d_geo = max(d_geo, world.cell_size)
        disp: list[list[float]] = [[] for _ in self.agents]
        stop_called = False
        collisions = 0
        rounds = 0
        while rounds < cfg.budget:
            rounds += 1
            for a in self.agents:
                obs = world.render(a.pose, self.sensors.intr, self.sensors.ext, self.sensors.min_depth, self.sensors.max_depth)
                perceive(a, obs, ctx, self.detector, self.sensors, cfg)
            shared = sync_round(self.agents)
            actions = self._decide(shared, ctx, rounds)
            for a, act in zip(self.agents, actions):
                a.steps_taken += 1
                new, hit, moved = world.step(a.pose, act)
                if hit:
                    collisions += 1
                    fx, fy = new.forward
                    a.mapper.add_bump(new.x + 0.15 * fx, new.y + 0.15 * fy)
                a.pose = new
                disp[a.id].append(moved)
                self.trajectories[a.id].append((new.x, new.y))
            if self.on_round is not None:
                self.on_round(self, shared, rounds)
            if any(act == Action.STOP for act in actions):
                stop_called = True
                break
        objs = world.objects_with_label(label)
        boxes = [(o.aabb[0], o.aabb[1], o.aabb[3], o.aabb[4]) for o in objs]
        final = dtg([(a.pose.x, a.pose.y) for a in self.agents], boxes)
        return SubtaskRecord(
            success=stop_called and final <= cfg.success_m,
            d_geo=d_geo,
            d_agent=accumulate_multiagent_path(disp),
            dtg_final=final,
            steps=rounds,
            stop_called=stop_called,
            scenario=scenario,
            subtask=query_id,
            label=label,
            n_agents=len(self.agents),
            collisions=collisions,
            fallbacks=ctx.fallbacks,
        )

    def _decide(self, shared: SemanticBevMap, ctx: RoundContext, round_idx: int) -> list[Action]:
        cfg = self.cfg
        actions: dict[int, Action] = {}
        explorers = []
        for a in self.agents:
            if a.current_goal is None:
                _adopt_shared_goal(a, shared, ctx)
            if a.current_goal is not None:
                act = plan_goal(a, shared, ctx, cfg)
                if act is not None:
                    actions[a.id] = act
                    a.target_xy = None
                    continue
            explorers.append(a)
        if not explorers:
            return [actions[a.id] for a in self.agents]

        views = {}
        for a in explorers:
            cell = shared.pose_cell(a.pose)
            trav = traversable_grid(shared.obstacle, shared.explored, True, cell)
            lab, _ = ndimage.label(trav, structure=_FOUR)
            views[a.id] = (cell, trav, lab == lab[cell])
        view = shared
        frontiers, U = self._score_frontiers(explorers, view, views, ctx, round_idx)
        if not np.isfinite(U).any():
            # the persistent map is exhausted but the goal is still missing:
            # search again everything not looked at during this subtask
            searched = np.logical_or.reduce([a.searched for a in self.agents])
            view = SemanticBevMap(shared.obstacle, searched & shared.explored, shared.semantic, shared.origin, shared.cell_size)
            frontiers, U = self._score_frontiers(explorers, view, views, ctx, round_idx)

        prev_idx = {}
        for a in explorers:
            if a.target_xy is not None and frontiers:
                d = [math.dist(a.target_xy, _cell_xy(shared, f.centroid)) for f in frontiers]
                k = int(np.argmin(d))
                if d[k] <= cfg.sticky_match_m:
                    prev_idx[a.id] = k
        alloc = allocate_frontiers(U, [a.id for a in explorers], prev_idx, cfg.stickiness)
        for a in explorers:
            cell, trav, reach = views[a.id]
            k = alloc.assignment.get(a.id)
            if k is None:
                a.target_xy = None
                actions[a.id] = _explore_unknown(a, view, trav, reach, cell)
                continue
            f = frontiers[k]
            a.target_xy = _cell_xy(shared, f.centroid)
            cells = f.cells[reach[f.cells[:, 0], f.cells[:, 1]]]
            try:
                stg = _plan_to(cells, trav, cell, shared)
                actions[a.id] = _steer(a.pose, stg, cell, shared)
            except ReplanRequired:
                actions[a.id] = _explore_unknown(a, view, trav, reach, cell)
        for a in explorers:
            # a coarse turn would swing an unconfirmed detection out of view
            if a.confirmation.consecutive_hits > 0:
                actions[a.id] = _FINE.get(actions[a.id], actions[a.id])
        return [actions[a.id] for a in self.agents]

    def _score_frontiers(self, explorers, view: SemanticBevMap, views: dict, ctx: RoundContext, round_idx: int):
        cfg = self.cfg
        frontiers = extract_frontiers(view, cfg.min_frontier_cells, cfg.max_frontiers)
        U = np.full((len(explorers), len(frontiers)), -np.inf)
        if not frontiers:
            return frontiers, U
        shared_vm = self.shared_value_map() if cfg.share_value_maps else None
        for k, a in enumerate(explorers):
            vm = shared_vm if shared_vm is not None else a.value_map
            U[k] = frontier_utilities(a, frontiers, view, views[a.id][2], ctx, self.scorer, cfg, vm, round_idx)
        return frontiers, U


def run_episode(world, detector, scorer, sensors: Sensors, n_agents: int = 2, cfg: NavConfig | None = None,
                scenario: str = "", on_round=None) -> tuple[list[SubtaskRecord], Team]:
    """Run the scenario's subtask chain. Maps persist across subtasks."""
    labels = list(dict.fromkeys(world.subtasks))
    team = Team.create(world, world.spawns[:n_agents], detector, scorer, sensors, cfg, channels=len(labels), on_round=on_round)
    records = []
    for k, label in enumerate(world.subtasks):
        records.append(team.run_subtask(label, k, labels.index(label), scenario or world.name))
    return records, team
