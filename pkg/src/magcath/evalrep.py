"""Regulation and path-following benchmarks plus report/trace emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import THETA1_RANGE, THETA3_RANGE, clip_and_couple
from .env import CatheterEnv, equilibrium_angles_for

N_WAYPOINTS = 60
PATH_KINDS = ("line", "half_sinusoid")


def path_point(kind: str, t: float) -> tuple[float, float]:
    """Reference paths parameterized on t in [0, 1].

    line: (20, -10) mm to (30, -30) mm.
    half_sinusoid: same chord with an 8 mm sine bulge in X.
    """
    if kind == "line":
        return 20.0 + 10.0 * t, -10.0 - 20.0 * t
    if kind == "half_sinusoid":
        return 20.0 + 8.0 * math.sin(math.pi * t), -10.0 - 20.0 * t
    raise ValueError(f"unknown path kind {kind!r}")


@dataclass
class ReferencePath:
    kind: str
    waypoints: np.ndarray    # [N, 2] mm

    def __len__(self):
        return self.waypoints.shape[0]


def gen_reference_path(kind: str, n: int = N_WAYPOINTS) -> ReferencePath:
    ts = np.arange(n) / (n - 1)
    pts = np.array([path_point(kind, t) for t in ts])
    return ReferencePath(kind, pts)


def mean_path_error(achieved, reference) -> float:
    """Mean Euclidean distance between paired achieved/reference points."""
    achieved = np.asarray(achieved, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if achieved.shape != reference.shape:
        raise ValueError("achieved and reference lengths differ")
    return float(np.mean(np.hypot(achieved[:, 0] - reference[:, 0],
                                  achieved[:, 1] - reference[:, 1])))


def regulation_starts(n_starts: int, seed: int) -> list:
    """The seeded start set shared by every agent under comparison."""
    rng = np.random.default_rng(seed)
    starts = []
    for _ in range(n_starts):
        theta1 = rng.uniform(*THETA1_RANGE)
        theta3 = rng.uniform(*THETA3_RANGE)
        starts.append(clip_and_couple(theta1, theta3))
    return starts


@dataclass
class RegulationSummary:
    """Aggregate of a 100-start regulation benchmark at one threshold."""

    threshold: float
    n_starts: int
    success_rate: float
    avg_steps_to_success: float
    avg_final_abs_ex: float     # over successes, mm
    avg_final_abs_ey: float
    avg_final_error_norm: float
    episodes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "threshold_mm": self.threshold,
            "n_starts": self.n_starts,
            "success_rate": self.success_rate,
            "avg_steps_to_success": self.avg_steps_to_success,
            "avg_final_abs_ex_mm": self.avg_final_abs_ex,
            "avg_final_abs_ey_mm": self.avg_final_abs_ey,
            "avg_final_error_norm_mm": self.avg_final_error_norm,
        }


def eval_regulation(policy, env: CatheterEnv, n_starts=100, goal=(20.0, -10.0),
                    seed=0, starts=None) -> RegulationSummary:
    """Deterministic rollouts from a seeded start set to a fixed goal.

    The env must be evaluation-configured (no tip noise). Pass the same
    `seed` (or an explicit `starts` list) to score different agents on
    identical initial states.
    """
    if starts is None:
        starts = regulation_starts(n_starts, seed)
    episodes = []
    for start in starts:
        obs = env.reset(goal=goal, init_angles=start)
        done = False
        reason = "none"
        steps = 0
        tip = env.tip
        while not done:
            obs, reward, done, info = env.step(policy(obs))
            reason = info["reason"]
            steps = info["step"]
            tip = info["tip"]
        episodes.append({
            "start": [start.theta1, start.theta3],
            "reason": reason,
            "steps": steps,
            "final_ex": tip[0] - goal[0],
            "final_ey": tip[1] - goal[1],
        })
    succ = [e for e in episodes if e["reason"] == "goal"]
    if succ:
        avg_steps = float(np.mean([e["steps"] for e in succ]))
        avg_ex = float(np.mean([abs(e["final_ex"]) for e in succ]))
        avg_ey = float(np.mean([abs(e["final_ey"]) for e in succ]))
        avg_norm = float(np.mean([math.hypot(e["final_ex"], e["final_ey"])
                                  for e in succ]))
    else:
        avg_steps = avg_ex = avg_ey = avg_norm = float("nan")
    return RegulationSummary(
        threshold=env.config.epsilon,
        n_starts=len(starts),
        success_rate=len(succ) / len(starts),
        avg_steps_to_success=avg_steps,
        avg_final_abs_ex=avg_ex,
        avg_final_abs_ey=avg_ey,
        avg_final_error_norm=avg_norm,
        episodes=episodes,
    )


@dataclass
class PathResult:
    kind: str
    mean_error: float
    achieved: np.ndarray     # [N, 2] tip at each waypoint advance
    reference: np.ndarray    # [N, 2]
    trace: list              # per-tick rows for the trace CSV

    def to_dict(self) -> dict:
        return {"path": self.kind, "mean_error_mm": self.mean_error,
                "n_waypoints": int(self.reference.shape[0])}


def eval_path_following(policy, env: CatheterEnv, path: ReferencePath,
                        waypoint_tol=0.5, max_steps_per_waypoint=20,
                        approach_steps=150) -> PathResult:
    """Sequentially regulate the tip along the waypoints.

    The episode starts at the equilibrium pose of the first waypoint and gets
    an approach phase (not scored) to absorb transients from window padding.
    Each waypoint then allows `max_steps_per_waypoint` control ticks, advancing
    early once the tip is within `waypoint_tol`. The achieved position per
    waypoint is the tip at the moment of advance.
    """
    start_angles = equilibrium_angles_for(path.waypoints[0], env.params)
    wp0 = tuple(path.waypoints[0])
    obs = env.reset(goal=wp0, init_angles=start_angles)

    def dist_to(goal):
        return math.hypot(env.tip[0] - goal[0], env.tip[1] - goal[1])

    for _ in range(approach_steps):
        if dist_to(wp0) < waypoint_tol:
            break
        obs, _, _, _ = env.step(policy(obs))

    trace = []
    achieved = np.empty_like(path.waypoints)
    tick = 0
    for i, wp in enumerate(path.waypoints):
        goal = (float(wp[0]), float(wp[1]))
        env.set_goal(goal)
        obs = env.observation()
        for k in range(max_steps_per_waypoint):
            if dist_to(goal) < waypoint_tol:
                break
            action = policy(obs)
            obs, _, _, info = env.step(action)
            trace.append({
                "t": tick * 0.1, "waypoint": i,
                "x_ref": goal[0], "y_ref": goal[1],
                "x": env.tip[0], "y": env.tip[1],
                "e_x": env.tip[0] - goal[0], "e_y": env.tip[1] - goal[1],
                "dtheta1": action.dtheta1, "dtheta3": action.dtheta3,
            })
            tick += 1
        achieved[i] = env.tip
    return PathResult(
        kind=path.kind,
        mean_error=mean_path_error(achieved, path.waypoints),
        achieved=achieved,
        reference=path.waypoints.copy(),
        trace=trace,
    )


def emit_report(out_dir, name: str, payload: dict, traces: dict | None = None):
    """Write a JSON report (sorted keys for diffability) and trace CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / f"{name}.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for trace_name, rows in (traces or {}).items():
        if not rows:
            continue
        with open(out_dir / f"{name}_{trace_name}.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v
                                 for k, v in row.items()})


def waypoint_rows(result: PathResult) -> list[dict]:
    """Per-waypoint achieved-vs-reference rows for the summary CSV."""
    rows = []
    for i in range(len(result.reference)):
        rows.append({
            "waypoint": i,
            "x_ref": float(result.reference[i, 0]),
            "y_ref": float(result.reference[i, 1]),
            "x": float(result.achieved[i, 0]),
            "y": float(result.achieved[i, 1]),
            "error": float(np.hypot(*(result.achieved[i] - result.reference[i]))),
        })
    return rows
