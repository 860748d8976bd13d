"""Batch runner: scenario sets in, record logs, summaries and images out."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coordination import NavConfig, Sensors, Team, run_episode
from .geometry import CameraExtrinsics, default_intrinsics
from .mapping import export_snapshot
from .metrics import EpisodeResult, SubtaskRecord, format_summary, summarize
from .perception import (
    AdversarialScorer,
    ExternalDetector,
    ExternalScorer,
    OracleDetector,
    OracleScorer,
    UniformScorer,
)
from .sim.scenario import generate_valid, load, validate
from .sim.world import ScenarioError, World

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EMPTY = 3

SCORERS = ("oracle", "uniform", "adversarial", "external")
DETECTORS = ("oracle", "external")


@dataclass
class BatchConfig:
    scenario_dir: str | None = None  # None: generate a procedural set from ``seed``
    n_scenarios: int = 20
    agents: int = 2
    budget: int = 500
    scorer: str = "oracle"
    detector: str = "oracle"
    w: float = NavConfig.w
    beta: float = NavConfig.beta
    tau_det: float = NavConfig.tau_det
    n_confirm: int = NavConfig.n_confirm
    seed: int = 0
    out_dir: str | None = None
    dump_maps: bool = False
    value_map: bool = True
    vlm_reasoning: bool = True
    workers: int = 1
    scorer_addr: str | None = None

    def __post_init__(self):
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.detector not in DETECTORS:
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.agents < 1:
            raise ValueError("need at least one agent")
        if self.budget < 1:
            raise ValueError("budget must be positive")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")
        if self.n_confirm < 1:
            raise ValueError("n_confirm must be at least 1")

    def nav_config(self) -> NavConfig:
        return NavConfig(w=self.w, beta=self.beta, tau_det=self.tau_det, n_confirm=self.n_confirm,
                         budget=self.budget, use_value_map=self.value_map)

    @property
    def scorer_kind(self) -> str:
        # with frontier reasoning switched off every frontier scores the same
        return self.scorer if self.vlm_reasoning else "uniform"


@dataclass
class EpisodeOutcome:
    scenario: str
    records: list[SubtaskRecord] = field(default_factory=list)
    skipped: str | None = None
    seconds: float = 0.0


@dataclass
class BatchResult:
    exit_code: int
    outcomes: list[EpisodeOutcome]
    summary: dict

    @property
    def records(self) -> list[SubtaskRecord]:
        return [r for o in self.outcomes for r in o.records]


def scenario_sources(cfg: BatchConfig) -> list[tuple[str, dict | Path]]:
    """(name, source) pairs in a fixed order; sources are dicts or JSON paths."""
    if cfg.scenario_dir is None:
        return [(f"procgen-{cfg.seed + k:04d}", ("procgen", cfg.seed + k)) for k in range(cfg.n_scenarios)]
    d = Path(cfg.scenario_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"scenario directory {d} does not exist")
    return [(p.stem, p) for p in sorted(d.glob("*.json"))]


def _materialize(src) -> dict:
    if isinstance(src, tuple) and src[0] == "procgen":
        return generate_valid(src[1])
    return load(src)


def make_perception(cfg: BatchConfig, world: World, sensors: Sensors):
    if cfg.detector == "oracle":
        detector = OracleDetector(world, sensors.intr, sensors.ext)
    else:
        detector = ExternalDetector(cfg.scorer_addr)
    kind = cfg.scorer_kind
    if kind == "oracle":
        scorer = OracleScorer(world)
    elif kind == "adversarial":
        scorer = AdversarialScorer(world)
    elif kind == "uniform":
        scorer = UniformScorer()
    else:
        scorer = ExternalScorer(cfg.scorer_addr)
    return detector, scorer


def _map_dumper(out: Path):
    def hook(team: Team, shared, round_idx: int):
        sub = team.agents[0].confirmation.query_id if team.agents else 0
        mu = team.shared_value_map().mu
        export_snapshot(shared, out, f"s{sub:02d}_r{round_idx:03d}", mu)
    return hook


def run_one(name: str, src, cfg: BatchConfig) -> EpisodeOutcome:
    t0 = time.perf_counter()
    try:
        world = validate(_materialize(src))
    except (ScenarioError, OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        log.warning("skipping %s: %s", name, exc)
        return EpisodeOutcome(name, skipped=str(exc))
    if len(world.spawns) < cfg.agents:
        reason = f"{len(world.spawns)} spawns for {cfg.agents} agents"
        log.warning("skipping %s: %s", name, reason)
        return EpisodeOutcome(name, skipped=reason)
    sensors = Sensors(default_intrinsics(), CameraExtrinsics())
    detector, scorer = make_perception(cfg, world, sensors)
    hook = None
    if cfg.dump_maps and cfg.out_dir:
        hook = _map_dumper(Path(cfg.out_dir) / "maps" / name)
    try:
        records, team = run_episode(world, detector, scorer, sensors, cfg.agents, cfg.nav_config(), name, hook)
    finally:
        for backend in (detector, scorer):
            close = getattr(backend, "close", None)
            if close is not None:
                close()
    if cfg.out_dir:
        traj = Path(cfg.out_dir) / "trajectories"
        traj.mkdir(parents=True, exist_ok=True)
        write_trajectory_ppm(traj / f"{name}.ppm", world, team.trajectories)
    return EpisodeOutcome(name, records, seconds=time.perf_counter() - t0)


def _run_star(args):
    return run_one(*args)


# agent colours for the overlay; cycles past four agents
_COLOURS = np.array([(230, 60, 40), (40, 110, 230), (40, 170, 60), (200, 60, 200)], dtype=np.uint8)


def trajectory_image(world: World, trajectories) -> np.ndarray:
    """RGB image (rows = +y at top) of the occupancy map with agent paths and goal objects."""
    img = np.full(world.shape + (3,), 255, dtype=np.uint8)
    img[world.blocked] = (60, 60, 60)
    for obj in world.objects:
        if obj.label in world.subtasks:
            img[obj.footprint[:, 0], obj.footprint[:, 1]] = (250, 190, 40)
    nx, ny = world.shape
    for k, path in enumerate(trajectories):
        colour = _COLOURS[k % len(_COLOURS)]
        pts = np.asarray(path, dtype=np.float64)
        if len(pts) == 0:
            continue
        # sample each segment densely enough to leave no gaps between cells
        seg = [pts[:1]]
        for a, b in zip(pts[:-1], pts[1:]):
            n = max(2, int(math.ceil(np.hypot(*(b - a)) / (0.5 * world.cell_size))) + 1)
            seg.append(a + np.linspace(0.0, 1.0, n)[:, None] * (b - a))
        xy = np.concatenate(seg)
        ix = np.clip(np.floor(xy[:, 0] / world.cell_size).astype(int), 0, nx - 1)
        iy = np.clip(np.floor(xy[:, 1] / world.cell_size).astype(int), 0, ny - 1)
        img[ix, iy] = colour
        sx, sy = ix[0], iy[0]
        img[max(sx - 1, 0):sx + 2, max(sy - 1, 0):sy + 2] = colour
    return np.flipud(np.transpose(img, (1, 0, 2)))


def write_trajectory_ppm(path, world: World, trajectories) -> None:
    img = np.ascontiguousarray(trajectory_image(world, trajectories))
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _write_outputs(cfg: BatchConfig, outcomes: list[EpisodeOutcome], summary: dict) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config_echo(cfg), indent=1, sort_keys=True) + "\n")
    with open(out / "records.jsonl", "w") as fh:
        for o in outcomes:
            for r in o.records:
                fh.write(r.to_json() + "\n")
    with open(out / "skipped.jsonl", "w") as fh:
        for o in outcomes:
            if o.skipped is not None:
                fh.write(json.dumps({"scenario": o.scenario, "reason": o.skipped}, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    (out / "summary.txt").write_text(format_summary(summary) + "\n")


def config_echo(cfg: BatchConfig) -> dict:
    d = asdict(cfg)
    d["effective_scorer"] = cfg.scorer_kind
    d["nav"] = asdict(cfg.nav_config())
    return d


def run_batch(cfg: BatchConfig) -> BatchResult:
    """Run every scenario's subtask chain. Output order follows the scenario order,
    whatever the worker count, so record logs are reproducible byte for byte."""
    sources = scenario_sources(cfg)
    log.info("config %s", json.dumps(config_echo(cfg), sort_keys=True))
    jobs = [(name, src, cfg) for name, src in sources]
    workers = max(1, min(cfg.workers, len(jobs))) if jobs else 1
    if workers == 1:
        outcomes = [_run_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_star, jobs))
    for o in outcomes:
        if o.skipped is None:
            log.info("%s: %d/%d subtasks in %.1fs", o.scenario, sum(r.success for r in o.records), len(o.records), o.seconds)
    results = [EpisodeResult(o.scenario, o.records) for o in outcomes if o.skipped is None]
    summary = summarize(results)
    summary["skipped"] = sum(o.skipped is not None for o in outcomes)
    if cfg.out_dir:
        _write_outputs(cfg, outcomes, summary)
    code = EXIT_EMPTY if summary.get("empty") else EXIT_OK
    return BatchResult(code, outcomes, summary)


def default_workers() -> int:
    return max(1, min(8, (os.cpu_count() or 1)))
