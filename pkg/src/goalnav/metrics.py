"""Subtask success, SPL, distance-to-goal and batch summaries."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from statistics import median
from typing import Iterable, Sequence

import numpy as np

SUCCESS_DISTANCE = 1.0
DTG_BANDS = ((0.0, 1.5, "<1.5"), (1.5, 3.0, "1.5-3.0"), (3.0, math.inf, ">3.0"))


class InvalidRecordError(ValueError):
    pass


@dataclass(frozen=True)
class SubtaskRecord:
    success: bool
    d_geo: float
    d_agent: float
    dtg_final: float
    steps: int
    stop_called: bool
    scenario: str = ""
    subtask: int = 0
    label: str = ""
    n_agents: int = 1
    collisions: int = 0
    fallbacks: int = 0

    def __post_init__(self):
        if self.d_agent < 0:
            raise InvalidRecordError("d_agent must be non-negative")
        if self.success and not (self.stop_called and self.dtg_final <= SUCCESS_DISTANCE):
            raise InvalidRecordError("success requires STOP within the success distance")

    def to_json(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float):
                d[k] = round(v, 6) if math.isfinite(v) else None
        d["spl"] = round(spl(self), 6) if self.d_geo > 0 else None
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


@dataclass
class EpisodeResult:
    scenario: str
    records: list[SubtaskRecord] = field(default_factory=list)

    @property
    def sr(self) -> float:
        return sum(r.success for r in self.records) / len(self.records) if self.records else 0.0

    @property
    def category(self) -> str:
        n = sum(r.success for r in self.records)
        if self.records and n == len(self.records):
            return "perfect"
        return "partial" if n > 0 else "complete-failure"


def spl(record: SubtaskRecord) -> float:
    if not record.d_geo > 0:
        raise InvalidRecordError(f"d_geo must be positive, got {record.d_geo}")
    if not record.success:
        return 0.0
    return record.d_geo / max(record.d_geo, record.d_agent)


def accumulate_multiagent_path(displacements: Sequence[Sequence[float]]) -> float:
    """Sum over rounds of the largest displacement any agent made in that round.

    ``displacements[i][t]`` is agent i's displacement in round t.
    """
    rows = [list(r) for r in displacements]
    if not rows:
        return 0.0
    n = len(rows[0])
    if any(len(r) != n for r in rows):
        raise ValueError("every agent needs one displacement per round")
    if n == 0:
        return 0.0
    return float(np.asarray(rows, dtype=np.float64).max(axis=0).sum())


def point_box_distance(x: float, y: float, box) -> float:
    x0, y0, x1, y1 = box
    dx = max(x0 - x, 0.0, x - x1)
    dy = max(y0 - y, 0.0, y - y1)
    return math.hypot(dx, dy)


def dtg(positions: Iterable[tuple[float, float]], footprints: Sequence[tuple[float, float, float, float]]) -> float:
    """Minimum over agents of the distance to the nearest goal footprint (xy boxes)."""
    best = math.inf
    for x, y in positions:
        for box in footprints:
            best = min(best, point_box_distance(x, y, box))
    return best


def _mean(xs):
    xs = list(xs)
    return sum(xs) / len(xs) if xs else None


def summarize(results: Sequence[EpisodeResult]) -> dict:
    records = [r for e in results for r in e.records]
    if not records:
        return {"empty": True, "n_episodes": len(results), "n_subtasks": 0}
    succ = [r for r in records if r.success]
    fail = [r for r in records if not r.success]
    cats = {"perfect": 0, "partial": 0, "complete-failure": 0}
    for e in results:
        if e.records:
            cats[e.category] += 1
    n_ep = sum(cats.values())
    buckets = {name: 0 for _, _, name in DTG_BANDS}
    for r in fail:
        for lo, hi, name in DTG_BANDS:
            if lo <= r.dtg_final < hi:
                buckets[name] += 1
                break
    per_label: dict[str, dict] = {}
    for r in records:
        d = per_label.setdefault(r.label, {"n": 0, "success": 0})
        d["n"] += 1
        d["success"] += int(r.success)
    for d in per_label.values():
        d["sr"] = d["success"] / d["n"]
    finite_dtg = [r.dtg_final for r in records if math.isfinite(r.dtg_final)]
    return {
        "empty": False,
        "n_episodes": n_ep,
        "n_subtasks": len(records),
        "sr": len(succ) / len(records),
        "spl": sum(spl(r) for r in records) / len(records),
        "dtg_mean": _mean(finite_dtg),
        "dtg_median": median(finite_dtg) if finite_dtg else None,
        "dtg_fail_mean": _mean(r.dtg_final for r in fail if math.isfinite(r.dtg_final)),
        "steps_success_mean": _mean(r.steps for r in succ),
        "categories": {k: v / n_ep for k, v in cats.items()} if n_ep else cats,
        "category_counts": cats,
        "fail_dtg_buckets": buckets,
        "per_label": dict(sorted(per_label.items())),
    }


def format_summary(report: dict) -> str:
    if report.get("empty"):
        return "no subtasks were run"

    def f(v, p=3):
        return "n/a" if v is None else f"{v:.{p}f}"

    lines = [
        f"episodes {report['n_episodes']}  subtasks {report['n_subtasks']}",
        f"SR {f(report['sr'])}  SPL {f(report['spl'])}",
        f"DTG mean {f(report['dtg_mean'], 2)}  median {f(report['dtg_median'], 2)}  on failures {f(report['dtg_fail_mean'], 2)}",
        f"steps to success (mean) {f(report['steps_success_mean'], 1)}",
        "episodes: " + "  ".join(f"{k} {100 * v:.1f}%" for k, v in report["categories"].items()),
        "failures by DTG: " + "  ".join(f"{k} {v}" for k, v in report["fail_dtg_buckets"].items()),
        "per label:",
    ]
    for label, d in report["per_label"].items():
        lines.append(f"  {label:<14} {d['success']:>3}/{d['n']:<3} SR {d['sr']:.2f}")
    return "\n".join(lines)
