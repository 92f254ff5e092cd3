"""Episodic landing environment, tabular Q-learning, and greedy rollouts.

The agent never sees simulator ground truth: its state is a discretization
of the perception output (altitude, depth, lateral offset, confidence,
color band). Bin edges are nonuniform, packing resolution near the pad
where touchdown precision is decided; the coarse far bins only need to
steer the approach.

Actions are body-frame velocity steps on a {-1, 0, +1}^3 lattice plus a
LAND action that commits to a slow flagged descent while holding the last
commanded horizontal velocity (so a moving platform can still be tracked
through touchdown).
"""

from __future__ import annotations

import math
import random
import struct
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .optics import CameraIntrinsics, ColorBand, project_landmark
from .perception import (
    EstimatorModel,
    NoiseModel,
    PoseSamplingError,
    PositionEstimate,
    corrupt,
    estimate,
)
from .world import (
    ControlCommand,
    DroneState,
    LandmarkConfig,
    PadConfig,
    TouchdownKind,
    TouchdownOutcome,
    WindState,
    landmark_pose,
    step as world_step,
    touchdown_outcome,
)

POLICY_MAGIC = b"LLQP"
POLICY_VERSION = 1

N_ALT_BINS = 8
N_DEPTH_BINS = 10
N_LAT_BINS = 7
N_CONF_BINS = 2
N_COLOR = 3
N_STATES = N_ALT_BINS * N_DEPTH_BINS * N_LAT_BINS * N_CONF_BINS * N_COLOR + 1
TERMINAL_STATE = N_STATES - 1

LAND_ACTION = 27
N_ACTIONS = 28

_BAND_CODE = {ColorBand.A: 0, ColorBand.B: 1, ColorBand.C: 2}

# lexicographic (dx, dy, dz) over {-1, 0, +1}^3; index 27 is LAND
_ACTION_DIRS = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
]


@dataclass
class BinScheme:
    """Nonuniform discretization of the perceived state.

    Counts are fixed (8 x 10 x 7 x 2 x 3 + terminal = 3361 states); the
    edge positions are tunable.
    """

    altitude_edges: tuple[float, ...] = (0.12, 0.3, 0.6, 1.0, 1.6, 2.6, 4.5)
    depth_edges: tuple[float, ...] = (0.12, 0.3, 0.6, 1.2, 2.2, 3.5, 5.5, 9.0, 14.0)
    lateral_edges: tuple[float, ...] = (-1.6, -0.5, -0.1, 0.1, 0.5, 1.6)
    confidence_edge: float = 0.5

    def __post_init__(self) -> None:
        if len(self.altitude_edges) != N_ALT_BINS - 1:
            raise ValueError(f"altitude needs {N_ALT_BINS - 1} internal edges")
        if len(self.depth_edges) != N_DEPTH_BINS - 1:
            raise ValueError(f"depth needs {N_DEPTH_BINS - 1} internal edges")
        if len(self.lateral_edges) != N_LAT_BINS - 1:
            raise ValueError(f"lateral needs {N_LAT_BINS - 1} internal edges")
        for edges in (self.altitude_edges, self.depth_edges, self.lateral_edges):
            if list(edges) != sorted(edges):
                raise ValueError("bin edges must be sorted")


def encode(est: PositionEstimate, color: ColorBand, bins: BinScheme) -> int:
    """Deterministic state index; out-of-range values clamp to edge bins."""
    ai = bisect_right(bins.altitude_edges, est.altitude)
    di = bisect_right(bins.depth_edges, est.depth)
    li = bisect_right(bins.lateral_edges, est.lateral_offset)
    ci = 1 if est.confidence >= bins.confidence_edge else 0
    return (((ai * N_DEPTH_BINS + di) * N_LAT_BINS + li) * N_CONF_BINS + ci) * N_COLOR + _BAND_CODE[color]


@dataclass(slots=True)
class ActionSpec:
    """Discrete command set: velocity lattice plus a committed LAND."""

    speed_scale: float = 1.25   # m/s per lattice unit
    land_descent: float = 0.45  # m/s flagged descent, below the crash threshold

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    def command_for(self, action: int, held_xy: tuple[float, float]) -> ControlCommand:
        if action == LAND_ACTION:
            return ControlCommand(
                velocity=(held_xy[0], held_xy[1], -self.land_descent),
                land=True,
            )
        dx, dy, dz = _ACTION_DIRS[action]
        s = self.speed_scale
        return ControlCommand(velocity=(dx * s, dy * s, dz * s))


@dataclass(slots=True)
class RewardSpec:
    w_progress: float = 1.0
    w_time: float = -0.01
    r_land: float = 100.0
    landing_accuracy_scale: float = 0.1  # m; e-folding of the landing bonus
    r_crash: float = -100.0
    r_oob: float = -50.0

    def __post_init__(self) -> None:
        if not (self.r_crash < 0.0 < self.r_land):
            raise ValueError("require r_crash < 0 < r_land")


def reward(
    prev_est: PositionEstimate,
    new_est: PositionEstimate,
    action: int,
    outcome: TouchdownOutcome | None,
    spec: RewardSpec,
    oob: bool = False,
) -> float:
    """Shaped step reward: perceived progress toward the pad, a time
    penalty, and terminal terms."""
    r = spec.w_time + spec.w_progress * (
        (prev_est.depth + prev_est.altitude) - (new_est.depth + new_est.altitude)
    )
    if outcome is not None:
        if outcome.kind is TouchdownKind.LANDED:
            r += spec.r_land * math.exp(-outcome.lateral_displacement / spec.landing_accuracy_scale)
        elif outcome.kind is TouchdownKind.CRASHED:
            r += spec.r_crash
    if oob:
        r += spec.r_oob
    return r


SpawnFn = Callable[[np.random.Generator], tuple[DroneState, PadConfig]]


@dataclass(slots=True)
class TickResult:
    obs_visible: bool
    est: PositionEstimate
    encoded: int
    outcome: TouchdownOutcome | None
    oob: bool
    done: bool


class LandingEnv:
    """Deterministic landing episode over world + optics + perception."""

    def __init__(
        self,
        cam: CameraIntrinsics,
        lm: LandmarkConfig,
        wind: WindState,
        noise: NoiseModel,
        model: EstimatorModel,
        spawn: SpawnFn,
        action_spec: ActionSpec | None = None,
        reward_spec: RewardSpec | None = None,
        bins: BinScheme | None = None,
        dt: float = 0.05,
        v_max: float = 3.0,
        v_land_max: float = 0.5,
        max_steps: int = 600,
        oob_distance: float = 30.0,
        oob_altitude: float = 12.0,
    ):
        self.cam = cam
        self.lm = lm
        self.wind = wind
        self.noise = noise
        self.model = model
        self.spawn = spawn
        self.action_spec = action_spec or ActionSpec()
        self.reward_spec = reward_spec or RewardSpec()
        self.bins = bins or BinScheme()
        self.dt = dt
        self.v_max = v_max
        self.v_land_max = v_land_max
        self.max_steps = max_steps
        self.oob_distance = oob_distance
        self.oob_altitude = oob_altitude

        self.pad: PadConfig | None = None
        self.drone: DroneState | None = None
        self.est: PositionEstimate | None = None
        self.band: ColorBand = ColorBand.C
        self.held_xy: tuple[float, float] = (0.0, 0.0)
        self.steps = 0
        self.done = True
        self.outcome: TouchdownOutcome | None = None
        self.oob = False
        self.rng: np.random.Generator = np.random.default_rng(0)
        self.encoded = TERMINAL_STATE
        self.last_obs = None

    @property
    def n_states(self) -> int:
        return N_STATES

    @property
    def n_actions(self) -> int:
        return N_ACTIONS

    def reset(self, rng: np.random.Generator) -> int:
        """Start a fresh episode from a visible spawn pose."""
        self.rng = rng
        obs = None
        for _ in range(200):
            drone, pad = self.spawn(rng)
            candidate = project_landmark(drone, self.cam, self.lm, pad)
            if not self.noise.is_null:
                candidate = corrupt(candidate, self.noise, rng, self.lm)
            if candidate.visible:
                self.drone, self.pad = drone, pad
                obs = candidate
                break
        if obs is None:
            raise PoseSamplingError("no visible spawn pose found")
        self.last_obs = obs
        self.est = estimate(obs, self.model, None, self.dt, self.cam)
        self.band = obs.color_band
        self.held_xy = (0.0, 0.0)
        self.steps = 0
        self.done = False
        self.outcome = None
        self.oob = False
        self.encoded = encode(self.est, self.band, self.bins)
        return self.encoded

    def tick(self, cmd: ControlCommand) -> TickResult:
        """Advance one simulation tick under an arbitrary actuated command.

        This is the single stepping path shared by training, evaluation,
        blended shared-autonomy episodes, and live bridge sessions.
        """
        if self.done:
            raise RuntimeError("episode is over; call reset()")
        prev_est = self.est
        self.drone = world_step(self.drone, cmd, self.wind, self.dt, self.v_max)
        obs = project_landmark(self.drone, self.cam, self.lm, self.pad)
        if not self.noise.is_null:
            obs = corrupt(obs, self.noise, self.rng, self.lm)
        self.last_obs = obs
        if obs.visible:
            self.est = estimate(obs, self.model, prev_est, self.dt, self.cam)
            self.band = obs.color_band
        else:
            self.est = estimate(obs, self.model, prev_est, self.dt, self.cam, cmd)

        outcome: TouchdownOutcome | None = None
        if self.drone.position[2] <= 0.0:
            outcome = touchdown_outcome(self.drone, self.pad, cmd.land, self.v_land_max)
            self.done = True
        else:
            px, py, _ = self.pad.center_at(self.drone.time)
            horiz = math.hypot(self.drone.position[0] - px, self.drone.position[1] - py)
            if horiz > self.oob_distance or self.drone.position[2] > self.oob_altitude:
                self.oob = True
                self.done = True

        self.steps += 1
        if self.steps >= self.max_steps:
            self.done = True

        terminal_contact = outcome is not None and outcome.kind is not TouchdownKind.AIRBORNE
        self.encoded = TERMINAL_STATE if terminal_contact else encode(self.est, self.band, self.bins)
        self.outcome = outcome
        return TickResult(
            obs_visible=obs.visible,
            est=self.est,
            encoded=self.encoded,
            outcome=outcome,
            oob=self.oob,
            done=self.done,
        )

    def command_for(self, action: int) -> ControlCommand:
        """Map an action index to a command, updating the LAND velocity hold."""
        cmd = self.action_spec.command_for(action, self.held_xy)
        if action != LAND_ACTION:
            self.held_xy = (cmd.velocity[0], cmd.velocity[1])
        return cmd

    def ai_action(self, policy: "PolicySnapshot") -> tuple[int, ControlCommand]:
        """Greedy action and its command for the current encoded state."""
        a = int(np.argmax(policy.q[self.encoded]))
        return a, self.command_for(a)

    def step(self, action: int) -> tuple[int, float, bool]:
        """RL-facing step: action index in, (state, reward, done) out."""
        prev_est = self.est
        cmd = self.command_for(action)
        res = self.tick(cmd)
        r = reward(prev_est, res.est, action, res.outcome, self.reward_spec, res.oob)
        return res.encoded, r, res.done


class EpisodicEnv(Protocol):
    """Minimal env protocol `train` relies on (also satisfied by test MDPs)."""

    @property
    def n_states(self) -> int: ...

    @property
    def n_actions(self) -> int: ...

    def reset(self, rng: np.random.Generator) -> int: ...

    def step(self, action: int) -> tuple[int, float, bool]: ...


@dataclass(slots=True)
class Hyperparams:
    alpha: float = 0.1
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_fraction: float = 0.6  # share of episodes over which epsilon anneals
    max_steps: int = 600


@dataclass
class PolicySnapshot:
    """Trained action-value table plus everything needed to act with it."""

    q: np.ndarray
    hyper: Hyperparams
    episodes: int
    seed: int
    action_spec: ActionSpec | None = None
    bins: BinScheme | None = None


@dataclass(slots=True)
class CurvePoint:
    episode: int
    ret: float
    epsilon: float


def epsilon_at(hyper: Hyperparams, episode: int, episodes: int) -> float:
    span = max(1.0, hyper.epsilon_fraction * episodes)
    frac = min(1.0, episode / span)
    return hyper.epsilon_start + (hyper.epsilon_end - hyper.epsilon_start) * frac


def train(
    env: EpisodicEnv,
    hyper: Hyperparams,
    episodes: int,
    seed: int,
) -> tuple[PolicySnapshot, list[CurvePoint]]:
    """One-step Q-learning with annealed epsilon-greedy exploration.

    Strictly sequential and deterministic given the seed: exploration draws
    come from one `random.Random` stream and each episode gets its own
    numpy generator derived from (seed, episode index).
    """
    if episodes < 1:
        raise ValueError("need at least one episode")
    n_actions = env.n_actions
    q = [[0.0] * n_actions for _ in range(env.n_states)]
    explore = random.Random(seed)
    alpha, gamma = hyper.alpha, hyper.gamma
    curve: list[CurvePoint] = []

    for ep in range(episodes):
        eps = epsilon_at(hyper, ep, episodes)
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, ep])
        s = env.reset(rng)
        total = 0.0
        for _ in range(hyper.max_steps):
            row = q[s]
            if explore.random() < eps:
                a = explore.randrange(n_actions)
            else:
                m = max(row)
                a = row.index(m)
            s2, r, done = env.step(a)
            total += r
            if done:
                row[a] += alpha * (r - row[a])
            else:
                row[a] += alpha * (r + gamma * max(q[s2]) - row[a])
            s = s2
            if done:
                break
        curve.append(CurvePoint(ep, total, eps))

    snapshot = PolicySnapshot(
        q=np.array(q, dtype=np.float64),
        hyper=hyper,
        episodes=episodes,
        seed=seed,
        action_spec=getattr(env, "action_spec", None),
        bins=getattr(env, "bins", None),
    )
    return snapshot, curve


def act(
    policy: PolicySnapshot,
    state: int,
    greedy: bool = True,
    rng: random.Random | None = None,
    epsilon: float = 0.0,
) -> int:
    """Pick an action; greedy ties break toward the lowest index."""
    if not greedy:
        if rng is None:
            raise ValueError("epsilon-greedy action selection needs an rng")
        if rng.random() < epsilon:
            return rng.randrange(policy.q.shape[1])
    return int(np.argmax(policy.q[state]))


@dataclass(slots=True)
class StepRecord:
    """One tick of a persisted trajectory."""

    t: float
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    yaw: float
    pad_center: tuple[float, float, float]
    visible: bool
    est_altitude: float
    est_depth: float
    est_lateral: float
    confidence: float
    stale_for: float
    action: int | None
    reward: float | None
    cmd: tuple[float, float, float, float, bool]
    alpha: float | None = None
    conflict: float | None = None

    def to_dict(self) -> dict:
        d = {
            "t": self.t,
            "position": list(self.position),
            "velocity": list(self.velocity),
            "yaw": self.yaw,
            "pad_center": list(self.pad_center),
            "visible": self.visible,
            "est_altitude": self.est_altitude,
            "est_depth": self.est_depth,
            "est_lateral": self.est_lateral,
            "confidence": self.confidence,
            "stale_for": self.stale_for,
            "action": self.action,
            "reward": self.reward,
            "cmd": list(self.cmd),
        }
        if self.alpha is not None:
            d["alpha"] = self.alpha
            d["conflict"] = self.conflict
        return d


@dataclass
class Trajectory:
    """Full per-step log of one episode plus its terminal outcome."""

    steps: list[StepRecord]
    outcome_kind: str
    touchdown_lateral: float | None
    success: bool
    duration: float
    start_altitude: float
    oob: bool = False

    @property
    def landed(self) -> bool:
        return self.outcome_kind == TouchdownKind.LANDED.value


def _record_step(env: LandingEnv, res: TickResult, action: int | None,
                 r: float | None, cmd: ControlCommand,
                 alpha: float | None = None, conflict: float | None = None) -> StepRecord:
    return StepRecord(
        t=env.drone.time,
        position=env.drone.position,
        velocity=env.drone.velocity,
        yaw=env.drone.yaw,
        pad_center=env.pad.center_at(env.drone.time),
        visible=res.obs_visible,
        est_altitude=res.est.altitude,
        est_depth=res.est.depth,
        est_lateral=res.est.lateral_offset,
        confidence=res.est.confidence,
        stale_for=res.est.stale_for,
        action=action,
        reward=r,
        cmd=(cmd.velocity[0], cmd.velocity[1], cmd.velocity[2], cmd.yaw_rate, cmd.land),
        alpha=alpha,
        conflict=conflict,
    )


def finish_trajectory(env: LandingEnv, steps: list[StepRecord], start_altitude: float) -> Trajectory:
    outcome = env.outcome
    kind = outcome.kind.value if outcome is not None else TouchdownKind.AIRBORNE.value
    lateral = outcome.lateral_displacement if outcome is not None else None
    success = (
        outcome is not None
        and outcome.kind is TouchdownKind.LANDED
        and outcome.lateral_displacement <= env.pad.radius
    )
    return Trajectory(
        steps=steps,
        outcome_kind=kind,
        touchdown_lateral=lateral,
        success=success,
        duration=env.drone.time,
        start_altitude=start_altitude,
        oob=env.oob,
    )


def rollout(policy: PolicySnapshot, env: LandingEnv, rng: np.random.Generator) -> Trajectory:
    """Greedy episode; deterministic given (policy, env config, rng seed)."""
    env.reset(rng)
    start_alt = env.drone.position[2]
    steps: list[StepRecord] = []
    while not env.done:
        prev_est = env.est
        a, cmd = env.ai_action(policy)
        res = env.tick(cmd)
        r = reward(prev_est, res.est, a, res.outcome, env.reward_spec, res.oob)
        steps.append(_record_step(env, res, a, r, cmd))
    return finish_trajectory(env, steps, start_alt)


def save_policy(policy: PolicySnapshot, path: str) -> None:
    """Write the snapshot as a little-endian flat file (magic LLQP)."""
    if policy.action_spec is None or policy.bins is None:
        raise ValueError("only landing policies (with bins and action spec) persist")
    h = policy.hyper
    b = policy.bins
    with open(path, "wb") as f:
        f.write(POLICY_MAGIC)
        f.write(struct.pack("<H", POLICY_VERSION))
        f.write(struct.pack("<II", policy.q.shape[0], policy.q.shape[1]))
        f.write(struct.pack("<5d", h.alpha, h.gamma, h.epsilon_start, h.epsilon_end, h.epsilon_fraction))
        f.write(struct.pack("<I", h.max_steps))
        f.write(struct.pack("<Qq", policy.episodes, policy.seed))
        f.write(struct.pack("<dd", policy.action_spec.speed_scale, policy.action_spec.land_descent))
        for edges in (b.altitude_edges, b.depth_edges, b.lateral_edges):
            f.write(struct.pack("<I", len(edges)))
            f.write(struct.pack(f"<{len(edges)}d", *edges))
        f.write(struct.pack("<d", b.confidence_edge))
        f.write(policy.q.astype("<f8").tobytes())


def load_policy(path: str) -> PolicySnapshot:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != POLICY_MAGIC:
        raise ValueError("not a policy file (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != POLICY_VERSION:
        raise ValueError(f"unsupported policy file version {version}")
    n_states, n_actions = struct.unpack_from("<II", data, 6)
    off = 14
    alpha, gamma, e0, e1, efrac = struct.unpack_from("<5d", data, off)
    off += 40
    (max_steps,) = struct.unpack_from("<I", data, off)
    off += 4
    episodes, seed = struct.unpack_from("<Qq", data, off)
    off += 16
    speed_scale, land_descent = struct.unpack_from("<dd", data, off)
    off += 16
    edge_groups = []
    for _ in range(3):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        edge_groups.append(struct.unpack_from(f"<{n}d", data, off))
        off += 8 * n
    (conf_edge,) = struct.unpack_from("<d", data, off)
    off += 8
    q = np.frombuffer(data, dtype="<f8", count=n_states * n_actions, offset=off)
    return PolicySnapshot(
        q=q.reshape(n_states, n_actions).copy(),
        hyper=Hyperparams(alpha, gamma, e0, e1, efrac, max_steps),
        episodes=episodes,
        seed=seed,
        action_spec=ActionSpec(speed_scale, land_descent),
        bins=BinScheme(edge_groups[0], edge_groups[1], edge_groups[2], conf_edge),
    )


def save_learning_curve(curve: list[CurvePoint], path: str) -> None:
    with open(path, "w", newline="") as f:
        f.write("episode,return,epsilon\n")
        for p in curve:
            f.write(f"{p.episode},{p.ret!r},{p.epsilon!r}\n")
