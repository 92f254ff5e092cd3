"""Shared-autonomy arbitration between a human pilot and the AI co-pilot.

Scripted pilot models stand in for a human at the sticks; an autoregressive
intent predictor is fit on the pilot's own command history (the label is
simply the next command in the log); and a convex blending rule merges the
two command streams without ever taking authority away from an active
pilot.

Arbitration sees commands only. A pilot command of exactly zero means the
pilot is not flying, and the AI command passes through untouched; an active
pilot is blended with weight alpha = alpha_max * (1 - conflict), so at full
conflict the pilot's command is actuated unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .agent import LandingEnv, PolicySnapshot, StepRecord, Trajectory, _record_step, finish_trajectory
from .world import ControlCommand, DroneState, PadConfig, WindState, rotate_z

ALPHA_MAX_DEFAULT = 0.6
LAND_CONFLICT_GATE = 0.2
INTENT_WINDOW = 10

# proportional-guidance gains for the scripted pilots
_KP_XY = 0.8
_KP_Z = 0.9
_PILOT_LAND_RADIUS = 0.3
_PILOT_LAND_ALT = 0.5
_PILOT_DESCENT = 0.4


class PilotKind(Enum):
    IDEAL = "ideal"
    NOISY = "noisy"
    WIND_COMPENSATING = "wind_compensating"
    ADVERSARIAL_DRIFT = "adversarial_drift"
    IDLE = "idle"


@dataclass(slots=True)
class PilotModel:
    """Scripted stand-in for a human pilot.

    `noise_scale` is the per-axis command noise (noisy) or the lateral bias
    magnitude (adversarial drift); `drift_bearing` orients the bias in the
    body frame (default: pilot keeps pulling left).
    """

    kind: PilotKind = PilotKind.IDEAL
    noise_scale: float = 0.0
    drift_bearing: float = math.pi / 2

    def __post_init__(self) -> None:
        if self.noise_scale < 0.0:
            raise ValueError("noise scale must be >= 0")


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def pilot_command(
    model: PilotModel,
    true_state: DroneState,
    pad: PadConfig,
    wind: WindState,
    t: float,
    rng: np.random.Generator | None = None,
    v_max: float = 3.0,
) -> ControlCommand:
    """Command the scripted pilot issues given full knowledge of the world.

    Unlike the AI co-pilot, the pilot sees the true state and the wind.
    The ideal pilot flies proportional guidance toward a descent corridor
    over the pad and flags the landing once centered and low.
    """
    if model.kind is PilotKind.IDLE:
        return ControlCommand()

    px, py, _ = pad.center_at(t)
    dx = px - true_state.position[0]
    dy = py - true_state.position[1]
    bx, by, _ = rotate_z((dx, dy, 0.0), -true_state.yaw)
    horiz = math.hypot(bx, by)
    alt = true_state.position[2]

    vx = _clamp(_KP_XY * bx, -v_max, v_max)
    vy = _clamp(_KP_XY * by, -v_max, v_max)
    target_alt = _clamp(0.45 * horiz, 0.35, 2.5)
    vz = _clamp(_KP_Z * (target_alt - alt), -_PILOT_DESCENT, 1.0)
    land = False
    if horiz < _PILOT_LAND_RADIUS and alt < _PILOT_LAND_ALT:
        vz = -_PILOT_DESCENT
        land = True

    if model.kind is PilotKind.WIND_COMPENSATING:
        wx, wy = wind.drift_at(t)
        fx, fy, _ = rotate_z((-wx, -wy, 0.0), -true_state.yaw)
        vx = _clamp(vx + fx, -v_max, v_max)
        vy = _clamp(vy + fy, -v_max, v_max)
    elif model.kind is PilotKind.NOISY and model.noise_scale > 0.0:
        if rng is None:
            raise ValueError("noisy pilot needs an rng")
        vx = _clamp(vx + rng.normal(0.0, model.noise_scale), -v_max, v_max)
        vy = _clamp(vy + rng.normal(0.0, model.noise_scale), -v_max, v_max)
        vz = _clamp(vz + rng.normal(0.0, model.noise_scale), -v_max, v_max)
    elif model.kind is PilotKind.ADVERSARIAL_DRIFT:
        vx = _clamp(vx + model.noise_scale * math.cos(model.drift_bearing), -v_max, v_max)
        vy = _clamp(vy + model.noise_scale * math.sin(model.drift_bearing), -v_max, v_max)

    return ControlCommand(velocity=(vx, vy, vz), land=land)


class InsufficientData(ValueError):
    """Raised when the intent fit has too little command history."""


_AXES = 4  # vx, vy, vz, yaw_rate


@dataclass
class IntentModel:
    """Per-axis linear autoregressive predictor of the pilot's next command."""

    coef: np.ndarray          # (_AXES, window)
    bias: np.ndarray          # (_AXES,)
    window: int = INTENT_WINDOW
    trained: bool = True
    error_ema: float = 0.0    # one-step prediction error on a held-out tail

    def predict(self, recent: Sequence[ControlCommand], v_max: float = 3.0) -> ControlCommand:
        """Next-command prediction from up to `window` most recent commands
        (zero-padded on the old side), clamped to valid command bounds."""
        hist = np.zeros((self.window, _AXES))
        tail = list(recent)[-self.window:]
        for i, cmd in enumerate(tail):
            row = self.window - len(tail) + i
            hist[row, 0:3] = cmd.velocity
            hist[row, 3] = cmd.yaw_rate
        pred = self.bias + np.sum(self.coef * hist.T, axis=1)
        v = tuple(float(_clamp(x, -v_max, v_max)) for x in pred[:3])
        return ControlCommand(velocity=v, yaw_rate=float(_clamp(pred[3], -1.0, 1.0)))


def _command_matrix(seq: Sequence[ControlCommand]) -> np.ndarray:
    m = np.empty((len(seq), _AXES))
    for i, c in enumerate(seq):
        m[i, 0:3] = c.velocity
        m[i, 3] = c.yaw_rate
    return m


def fit_intent(
    history: Sequence[Sequence[ControlCommand]],
    window: int = INTENT_WINDOW,
    holdout_fraction: float = 0.2,
) -> IntentModel:
    """Least-squares autoregressive fit on logged command sequences.

    Self-supervised: every window of `window` consecutive commands predicts
    the command that followed it in the same log. The reported error is an
    exponential moving average of one-step errors on the held-out tail of
    each sequence.
    """
    total = sum(len(seq) for seq in history)
    if total < 200:
        raise InsufficientData(f"need at least 200 command steps, got {total}")

    fit_windows: list[np.ndarray] = []   # (window, _AXES) per sample
    fit_targets: list[np.ndarray] = []
    hold_windows: list[np.ndarray] = []
    hold_targets: list[np.ndarray] = []
    for seq in history:
        m = _command_matrix(seq)
        if len(m) <= window:
            continue
        cut = max(window + 1, int(len(m) * (1.0 - holdout_fraction)))
        for i in range(window, len(m)):
            if i < cut:
                fit_windows.append(m[i - window:i])
                fit_targets.append(m[i])
            else:
                hold_windows.append(m[i - window:i])
                hold_targets.append(m[i])
    if not fit_windows:
        raise InsufficientData("no sequence long enough for the fit window")

    wins = np.array(fit_windows)     # (n, window, _AXES)
    targs = np.array(fit_targets)    # (n, _AXES)
    coef = np.empty((_AXES, window))
    bias = np.empty(_AXES)
    for a in range(_AXES):
        design = np.column_stack([wins[:, :, a], np.ones(len(wins))])
        sol, *_ = np.linalg.lstsq(design, targs[:, a], rcond=None)
        coef[a] = sol[:-1]
        bias[a] = sol[-1]

    ema = 0.0
    if hold_windows:
        hw = np.array(hold_windows)
        ht = np.array(hold_targets)
        pred = np.stack(
            [hw[:, :, a] @ coef[a] + bias[a] for a in range(_AXES)], axis=1
        )
        for e in np.linalg.norm(pred - ht, axis=1):
            ema = 0.9 * ema + 0.1 * float(e)

    return IntentModel(coef=coef, bias=bias, window=window, trained=True, error_ema=ema)


def conflict(
    human: ControlCommand,
    ai: ControlCommand,
    intent: IntentModel | None = None,
    recent: Sequence[ControlCommand] = (),
) -> float:
    """Degree of disagreement between pilot and co-pilot, in [0, 1].

    Zero for a silent pilot; otherwise half of (1 - cosine similarity)
    between the two velocity vectors, amplified to full conflict when the
    AI command also opposes the intent-predicted next pilot command.
    """
    hx, hy, hz = human.velocity
    hn = math.sqrt(hx * hx + hy * hy + hz * hz)
    if hn == 0.0:
        return 0.0
    ax, ay, az = ai.velocity
    an = math.sqrt(ax * ax + ay * ay + az * az)
    if an == 0.0:
        return 0.0
    cos_sim = (hx * ax + hy * ay + hz * az) / (hn * an)
    c = (1.0 - cos_sim) / 2.0
    if intent is not None and intent.trained and recent:
        p = intent.predict(recent)
        px, py, pz = p.velocity
        if px * ax + py * ay + pz * az < 0.0:
            c = 1.0
    return min(max(c, 0.0), 1.0)


@dataclass(slots=True)
class BlendedCommand:
    command: ControlCommand
    alpha: float     # AI weight actually applied
    conflict: float


def blend(
    human: ControlCommand,
    ai: ControlCommand,
    conflict_value: float,
    alpha_max: float = ALPHA_MAX_DEFAULT,
    v_max: float = 3.0,
) -> BlendedCommand:
    """Convex per-axis mix of the two commands.

    alpha = alpha_max * (1 - conflict), so conflict 1 hands the pilot the
    actuator verbatim. The landing flag follows the pilot, or the AI when
    conflict is low.
    """
    if not (0.0 <= alpha_max <= 1.0):
        raise ValueError("alpha_max must be in [0, 1]")
    a = alpha_max * (1.0 - conflict_value)
    hv, av = human.velocity, ai.velocity
    v = tuple(
        _clamp(a * av[i] + (1.0 - a) * hv[i], -v_max, v_max) for i in range(3)
    )
    yaw_rate = _clamp(a * ai.yaw_rate + (1.0 - a) * human.yaw_rate, -1.0, 1.0)
    land = human.land or (ai.land and conflict_value < LAND_CONFLICT_GATE)
    return BlendedCommand(
        command=ControlCommand(velocity=v, yaw_rate=yaw_rate, land=land),
        alpha=a,
        conflict=conflict_value,
    )


def arbitrate(
    human: ControlCommand,
    ai: ControlCommand,
    intent: IntentModel | None = None,
    recent: Sequence[ControlCommand] = (),
    alpha_max: float = ALPHA_MAX_DEFAULT,
    v_max: float = 3.0,
) -> BlendedCommand:
    """Session-level arbitration: an idle pilot hands the AI full authority;
    an active pilot is blended by conflict."""
    if human.is_zero():
        return BlendedCommand(command=ai, alpha=1.0, conflict=0.0)
    c = conflict(human, ai, intent, recent)
    return blend(human, ai, c, alpha_max, v_max)


def run_blended_episode(
    env: LandingEnv,
    policy: PolicySnapshot,
    pilot: PilotModel,
    rng: np.random.Generator,
    intent: IntentModel | None = None,
    alpha_max: float = ALPHA_MAX_DEFAULT,
    pilot_rng: np.random.Generator | None = None,
) -> Trajectory:
    """One episode with the pilot and the AI co-pilot on the same actuator.

    The AI half of every tick is computed exactly as in a headless greedy
    rollout, so an idle pilot reproduces that trajectory step for step.
    """
    env.reset(rng)
    start_alt = env.drone.position[2]
    steps: list[StepRecord] = []
    recent: list[ControlCommand] = []
    while not env.done:
        prev_est = env.est
        a, ai_cmd = env.ai_action(policy)
        human = pilot_command(
            pilot, env.drone, env.pad, env.wind, env.drone.time, pilot_rng, env.v_max
        )
        blended = arbitrate(human, ai_cmd, intent, recent, alpha_max, env.v_max)
        recent.append(human)
        if len(recent) > INTENT_WINDOW:
            recent.pop(0)
        res = env.tick(blended.command)
        steps.append(
            _record_step(env, res, a, None, blended.command,
                         alpha=blended.alpha, conflict=blended.conflict)
        )
    return finish_trajectory(env, steps, start_alt)


def write_command_log(path: str, entries: Sequence[tuple[float, ControlCommand]]) -> None:
    """Persist a command history as CSV: t, vx, vy, vz, yaw_rate, land."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "vx", "vy", "vz", "yaw_rate", "land"])
        for t, cmd in entries:
            vx, vy, vz = cmd.velocity
            w.writerow([repr(t), repr(vx), repr(vy), repr(vz), repr(cmd.yaw_rate), int(cmd.land)])


def read_command_log(path: str) -> list[tuple[float, ControlCommand]]:
    out: list[tuple[float, ControlCommand]] = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            cmd = ControlCommand(
                velocity=(float(row["vx"]), float(row["vy"]), float(row["vz"])),
                yaw_rate=float(row["yaw_rate"]),
                land=bool(int(row["land"])),
            )
            out.append((float(row["t"]), cmd))
    return out
