"""Experiment harness: scenario grids, metric computation, and reports.

Scenario set 1 is a static-pad grid over start distance and bearing;
scenario set 2 moves the platform linearly or on a turntable. Each scenario
is evaluated with a fixed number of repeated greedy rollouts whose spawn
poses get a small seeded jitter, and one metrics record reports the means.

Metric definitions (all pure functions of the persisted trajectory):
  altitude_error    mean |estimated - true| altitude over the whole approach
  lateral displacement   horizontal miss at touchdown
  tracking_error    time-mean horizontal drone-to-pad distance from lock-on
                    (first time within 3 m) to touchdown, moving pads only
  time_to_stabilize first time the drone stays within 10 cm of the pad
                    center for 2 s straight, moving pads only
  success           touchdown with the landing flag, descent within limits,
                    and inside the pad radius, on every repeat
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .agent import (
    LandingEnv,
    PolicySnapshot,
    Trajectory,
    rollout,
)
from .config import SimConfig
from .perception import EstimatorModel, NoiseModel
from .world import (
    DroneState,
    LandmarkConfig,
    MotionKind,
    MotionPattern,
    PadConfig,
    WindState,
    landmark_pose,
)

TRACK_LOCK_DISTANCE = 3.0      # m; tracking window opens here
STABILIZE_RADIUS = 0.10        # m
STABILIZE_DWELL = 2.0          # s

_SPAWN_JITTER_DEPTH = 0.3      # m, per-repeat spawn variation
_SPAWN_JITTER_BEARING = 2.0    # deg
_SPAWN_JITTER_ALT = 0.15       # m


@dataclass(slots=True)
class ScenarioConfig:
    """One evaluation setup: spawn pose, platform motion, disturbances."""

    id: int
    kind: str                  # "static" | "dynamic"
    start_depth: float
    start_bearing_deg: float
    start_altitude: float
    motion: MotionPattern
    wind: WindState
    noise: NoiseModel
    seed: int
    motion_label: str = ""
    speed_label: str = ""

    def __post_init__(self) -> None:
        if self.start_depth <= 0.0:
            raise ValueError("start depth must be > 0")
        if not (-90.0 <= self.start_bearing_deg <= 90.0):
            raise ValueError("start bearing must lie in [-90, 90] degrees")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "start_depth": self.start_depth,
            "start_bearing_deg": self.start_bearing_deg,
            "start_altitude": self.start_altitude,
            "motion": {
                "kind": self.motion.kind.value,
                "speed": self.motion.speed,
                "heading": list(self.motion.heading),
                "center": list(self.motion.center),
            },
            "wind": list(self.wind.velocity),
            "seed": self.seed,
            "motion_label": self.motion_label,
            "speed_label": self.speed_label,
        }


_STATIC_CASES = [(5.0, 0.0), (10.0, 15.0), (15.0, 30.0), (5.0, 30.0), (10.0, 0.0)]


def scenario1_grid(cfg: SimConfig) -> list[ScenarioConfig]:
    """Static suite: the five named cases plus the full 3 x 3 grid."""
    out: list[ScenarioConfig] = []
    combos = list(_STATIC_CASES) + [
        (d, a) for d in (5.0, 10.0, 15.0) for a in (0.0, 15.0, 30.0)
    ]
    for i, (dist, ang) in enumerate(combos, start=1):
        out.append(
            ScenarioConfig(
                id=i,
                kind="static",
                start_depth=dist,
                start_bearing_deg=ang,
                start_altitude=cfg.suite.start_altitude,
                motion=MotionPattern(),
                wind=WindState(),
                noise=cfg.noise,
                seed=100 + i,
            )
        )
    return out


def scenario2_set(cfg: SimConfig) -> list[ScenarioConfig]:
    """Dynamic suite: linear 0.5/1.0/1.5 m/s and rotational 5/10 deg/s."""
    h = math.radians(cfg.suite.dynamic_linear_heading_deg)
    heading = (math.cos(h), math.sin(h))
    rows: list[tuple[str, str, MotionPattern]] = [
        ("Linear", "0.5 m/s", MotionPattern(MotionKind.LINEAR, 0.5, heading=heading)),
        ("Linear", "1.0 m/s", MotionPattern(MotionKind.LINEAR, 1.0, heading=heading)),
        ("Rotational", "5°/s", MotionPattern(MotionKind.ROTATIONAL, math.radians(5.0), center=(0.0, cfg.suite.rotation_radius))),
        ("Rotational", "10°/s", MotionPattern(MotionKind.ROTATIONAL, math.radians(10.0), center=(0.0, cfg.suite.rotation_radius))),
        ("Linear", "1.5 m/s", MotionPattern(MotionKind.LINEAR, 1.5, heading=heading)),
    ]
    out: list[ScenarioConfig] = []
    for i, (label, speed_label, motion) in enumerate(rows, start=1):
        out.append(
            ScenarioConfig(
                id=i,
                kind="dynamic",
                start_depth=cfg.suite.dynamic_start_depth,
                start_bearing_deg=0.0,
                start_altitude=cfg.suite.start_altitude,
                motion=motion,
                wind=WindState(),
                noise=cfg.noise,
                seed=200 + i,
                motion_label=label,
                speed_label=speed_label,
            )
        )
    return out


def scenario_pad(cfg: SimConfig, scenario: ScenarioConfig) -> PadConfig:
    return PadConfig(
        center=(0.0, 0.0, 0.0),
        radius=cfg.pad_radius,
        facing=0.0,
        motion=scenario.motion,
    )


def scenario_spawn(cfg: SimConfig, scenario: ScenarioConfig, jitter: bool = True):
    """Spawn closure: pose at the scenario's depth/bearing/altitude, camera
    aimed at the landmark, with a small per-repeat jitter from the rng."""
    lm = cfg.landmark

    def spawn(rng: np.random.Generator) -> tuple[DroneState, PadConfig]:
        pad = scenario_pad(cfg, scenario)
        d = scenario.start_depth
        b = math.radians(scenario.start_bearing_deg)
        alt = scenario.start_altitude
        if jitter:
            d = max(0.5, d + rng.uniform(-_SPAWN_JITTER_DEPTH, _SPAWN_JITTER_DEPTH))
            b += math.radians(rng.uniform(-_SPAWN_JITTER_BEARING, _SPAWN_JITTER_BEARING))
            alt = max(lm.height + 0.1, alt + rng.uniform(-_SPAWN_JITTER_ALT, _SPAWN_JITTER_ALT))
        x, y = d * math.cos(b), d * math.sin(b)
        (lmx, lmy, _), _ = landmark_pose(lm, pad, 0.0)
        yaw = math.atan2(lmy - y, lmx - x)
        return DroneState(position=(x, y, alt), yaw=yaw), pad

    return spawn


def build_env(
    cfg: SimConfig,
    scenario: ScenarioConfig,
    model: EstimatorModel,
    jitter: bool = True,
) -> LandingEnv:
    return LandingEnv(
        cam=cfg.camera,
        lm=cfg.landmark,
        wind=scenario.wind,
        noise=scenario.noise,
        model=model,
        spawn=scenario_spawn(cfg, scenario, jitter),
        action_spec=cfg.action_spec,
        reward_spec=cfg.rewards,
        bins=cfg.bins,
        dt=cfg.world.dt,
        v_max=cfg.world.v_max,
        v_land_max=cfg.world.v_land_max,
        max_steps=cfg.hyper.max_steps,
        oob_distance=cfg.suite.oob_distance,
        oob_altitude=cfg.suite.oob_altitude,
    )


def make_training_spawn(cfg: SimConfig):
    """Training spawn: poses over the static grid hull (with jitter), mixed
    with randomly moving platforms so one policy serves both suites."""
    ag = cfg.agent
    lm = cfg.landmark
    b_max = math.radians(ag.spawn_bearing_deg)

    def spawn(rng: np.random.Generator) -> tuple[DroneState, PadConfig]:
        motion = MotionPattern()
        if rng.random() < ag.train_motion_fraction:
            if rng.random() < 0.5:
                ang = rng.uniform(0.0, 2.0 * math.pi)
                motion = MotionPattern(
                    MotionKind.LINEAR,
                    rng.uniform(0.3, 1.6),
                    heading=(math.cos(ang), math.sin(ang)),
                )
            else:
                # orbit side varies through the center placement
                ang = rng.uniform(0.0, 2.0 * math.pi)
                r = cfg.suite.rotation_radius
                motion = MotionPattern(
                    MotionKind.ROTATIONAL,
                    math.radians(rng.uniform(4.0, 11.0)),
                    center=(r * math.cos(ang), r * math.sin(ang)),
                )
        pad = PadConfig(center=(0.0, 0.0, 0.0), radius=cfg.pad_radius, motion=motion)
        d = rng.uniform(*ag.spawn_depth)
        b = rng.uniform(-b_max, b_max)
        alt = rng.uniform(*ag.spawn_altitude)
        x, y = d * math.cos(b), d * math.sin(b)
        (lmx, lmy, _), _ = landmark_pose(lm, pad, 0.0)
        yaw = math.atan2(lmy - y, lmx - x)
        return DroneState(position=(x, y, alt), yaw=yaw), pad

    return spawn


def build_training_env(cfg: SimConfig, model: EstimatorModel) -> LandingEnv:
    return LandingEnv(
        cam=cfg.camera,
        lm=cfg.landmark,
        wind=WindState(),
        noise=cfg.noise,
        model=model,
        spawn=make_training_spawn(cfg),
        action_spec=cfg.action_spec,
        reward_spec=cfg.rewards,
        bins=cfg.bins,
        dt=cfg.world.dt,
        v_max=cfg.world.v_max,
        v_land_max=cfg.world.v_land_max,
        max_steps=cfg.hyper.max_steps,
        oob_distance=cfg.suite.oob_distance,
        oob_altitude=cfg.suite.oob_altitude,
    )


@dataclass
class MetricsRecord:
    """One report row, shaped after the result tables of the two suites."""

    test_case: int
    success: bool
    altitude_error_cm: float
    time_to_land_s: float
    lateral_displacement_cm: float | None = None
    distance_m: float | None = None       # static only
    angle_deg: float | None = None        # static only
    motion_type: str | None = None        # dynamic only
    speed: str | None = None              # dynamic only
    tracking_error_cm: float | None = None     # dynamic only
    time_to_stabilize_s: float | None = None   # dynamic only
    repeat_successes: list[bool] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def _altitude_error_m(traj: Trajectory) -> float:
    errs = [abs(s.est_altitude - s.position[2]) for s in traj.steps]
    return sum(errs) / len(errs) if errs else 0.0


def _tracking_error_m(traj: Trajectory) -> float:
    dists = [
        math.hypot(s.position[0] - s.pad_center[0], s.position[1] - s.pad_center[1])
        for s in traj.steps
    ]
    start = 0
    for i, d in enumerate(dists):
        if d < TRACK_LOCK_DISTANCE:
            start = i
            break
    window = dists[start:]
    return sum(window) / len(window) if window else 0.0


def _time_to_stabilize_s(traj: Trajectory, dt: float) -> float | None:
    need = max(1, int(round(STABILIZE_DWELL / dt)))
    run = 0
    for i, s in enumerate(traj.steps):
        d = math.hypot(s.position[0] - s.pad_center[0], s.position[1] - s.pad_center[1])
        if d < STABILIZE_RADIUS:
            run += 1
            if run >= need:
                return traj.steps[i].t
        else:
            run = 0
    return None


def metrics_from_trajectories(
    scenario: ScenarioConfig, trajectories: list[Trajectory], dt: float
) -> MetricsRecord:
    """Aggregate repeated rollouts of one scenario into a report row."""
    alt_err = float(np.mean([_altitude_error_m(t) for t in trajectories])) * 100.0
    times = float(np.mean([t.duration for t in trajectories]))
    landed = [t for t in trajectories if t.landed]
    lateral = (
        float(np.mean([t.touchdown_lateral for t in landed])) * 100.0 if landed else None
    )
    rec = MetricsRecord(
        test_case=scenario.id,
        success=all(t.success for t in trajectories),
        altitude_error_cm=alt_err,
        time_to_land_s=times,
        lateral_displacement_cm=lateral,
        repeat_successes=[t.success for t in trajectories],
    )
    if scenario.kind == "static":
        rec.distance_m = scenario.start_depth
        rec.angle_deg = scenario.start_bearing_deg
    else:
        rec.motion_type = scenario.motion_label
        rec.speed = scenario.speed_label
        rec.tracking_error_cm = float(np.mean([_tracking_error_m(t) for t in trajectories])) * 100.0
        stab = [_time_to_stabilize_s(t, dt) for t in trajectories]
        reached = [s for s in stab if s is not None]
        rec.time_to_stabilize_s = float(np.mean(reached)) if reached else None
    return rec


def evaluate_scenario(
    cfg: SimConfig,
    scenario: ScenarioConfig,
    policy: PolicySnapshot,
    model: EstimatorModel,
    repeats: int | None = None,
) -> tuple[MetricsRecord, list[Trajectory]]:
    """Run the repeats for one scenario and aggregate the record."""
    n = repeats if repeats is not None else cfg.suite.repeats
    env = build_env(cfg, scenario, model)
    trajectories = []
    for r in range(n):
        rng = np.random.default_rng([scenario.seed, r])
        trajectories.append(rollout(policy, env, rng))
    return metrics_from_trajectories(scenario, trajectories, cfg.world.dt), trajectories


def run_suite(
    cfg: SimConfig,
    scenarios: list[ScenarioConfig],
    policy: PolicySnapshot,
    model: EstimatorModel,
    repeats: int | None = None,
) -> tuple[list[MetricsRecord], dict[int, list[Trajectory]]]:
    """Evaluate every scenario; deterministic given the scenario seeds."""
    records: list[MetricsRecord] = []
    trajs: dict[int, list[Trajectory]] = {}
    for sc in scenarios:
        rec, t = evaluate_scenario(cfg, sc, policy, model, repeats)
        records.append(rec)
        trajs[sc.id] = t
    return records, trajs


STATIC_CSV_HEADER = "test_case,distance_m,angle_deg,altitude_error_cm,lateral_displacement_cm,time_to_land_s,success"
DYNAMIC_CSV_HEADER = "test_case,motion_type,speed,tracking_error_cm,landing_displacement_cm,time_to_stabilize_s,success"


def _fmt(x: float | None, digits: int = 1) -> str:
    if x is None:
        return ""
    return f"{x:.{digits}f}"


def _suite_kind(records: list[MetricsRecord]) -> str:
    kinds = {("static" if r.distance_m is not None else "dynamic") for r in records}
    if len(kinds) != 1:
        raise ValueError("cannot emit a mixed static/dynamic report")
    return kinds.pop()


def emit_report(records: list[MetricsRecord], fmt: str) -> str:
    """Render records as csv, json, or a result-table-shaped markdown doc."""
    if fmt == "json":
        payload = {"suite": _suite_kind(records), "records": [r.to_dict() for r in records]}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    kind = _suite_kind(records)
    if fmt == "csv":
        if kind == "static":
            lines = [STATIC_CSV_HEADER]
            for r in records:
                lines.append(
                    f"{r.test_case},{_fmt(r.distance_m)},{_fmt(r.angle_deg)},"
                    f"{_fmt(r.altitude_error_cm)},{_fmt(r.lateral_displacement_cm)},"
                    f"{_fmt(r.time_to_land_s)},{str(r.success).lower()}"
                )
        else:
            lines = [DYNAMIC_CSV_HEADER]
            for r in records:
                lines.append(
                    f"{r.test_case},{r.motion_type},{r.speed},"
                    f"{_fmt(r.tracking_error_cm)},{_fmt(r.lateral_displacement_cm)},"
                    f"{_fmt(r.time_to_stabilize_s)},{str(r.success).lower()}"
                )
        return "\n".join(lines) + "\n"
    if fmt == "md":
        if kind == "static":
            lines = [
                "| Test Case | Distance (m) | Angle (°) | Altitude Error (cm) | Lateral Displacement (cm) | Time to Land (s) | Success |",
                "|---|---|---|---|---|---|---|",
            ]
            for r in records:
                lines.append(
                    f"| {r.test_case} | {_fmt(r.distance_m)} | {_fmt(r.angle_deg)} | "
                    f"{_fmt(r.altitude_error_cm)} | {_fmt(r.lateral_displacement_cm)} | "
                    f"{_fmt(r.time_to_land_s)} | {'yes' if r.success else 'no'} |"
                )
        else:
            lines = [
                "| Test Case | Motion Type | Speed/Angular Velocity | Tracking Error (cm) | Landing Displacement (cm) | Time to Stabilize (s) | Success |",
                "|---|---|---|---|---|---|---|",
            ]
            for r in records:
                lines.append(
                    f"| {r.test_case} | {r.motion_type} | {r.speed} | "
                    f"{_fmt(r.tracking_error_cm)} | {_fmt(r.lateral_displacement_cm)} | "
                    f"{_fmt(r.time_to_stabilize_s)} | {'yes' if r.success else 'no'} |"
                )
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def records_from_json(text: str) -> list[MetricsRecord]:
    doc = json.loads(text)
    return [MetricsRecord(**r) for r in doc["records"]]


def trajectory_document(
    cfg: SimConfig, scenario: ScenarioConfig, repeat: int, traj: Trajectory
) -> str:
    """One episode as a canonical JSON document (config, seed, steps)."""
    doc = {
        "scenario": scenario.to_dict(),
        "repeat": repeat,
        "seed": [scenario.seed, repeat],
        "config": cfg.raw,
        "outcome": {
            "kind": traj.outcome_kind,
            "touchdown_lateral": traj.touchdown_lateral,
            "success": traj.success,
            "duration": traj.duration,
            "oob": traj.oob,
        },
        "steps": [s.to_dict() for s in traj.steps],
    }
    return json.dumps(doc, sort_keys=True)
