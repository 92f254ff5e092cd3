"""Kinematic world model: drone, landing pad, landmark rig, wind, platform motion.

Conventions used throughout the package: the world frame is right-handed with
z up and the ground plane at z = 0. The body frame has x forward (along yaw)
and y left. Units are SI, angles are radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

Vec3 = tuple[float, float, float]

V_MAX_DEFAULT = 3.0       # m/s ceiling on commanded speed
WIND_MAX_DEFAULT = 2.0    # m/s ceiling on horizontal wind
V_LAND_MAX_DEFAULT = 0.5  # m/s max descent speed for a survivable touchdown
DT_DEFAULT = 0.05         # s, simulation tick (20 Hz)

YAW_RATE_MAX = 1.0        # rad/s


class MotionKind(Enum):
    STATIC = "static"
    LINEAR = "linear"
    ROTATIONAL = "rotational"


def normalize_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def rotate_z(v: Vec3, angle: float) -> Vec3:
    """Rotate a vector about the world z axis."""
    c, s = math.cos(angle), math.sin(angle)
    return (c * v[0] - s * v[1], s * v[0] + c * v[1], v[2])


def _require_finite(name: str, *values: float) -> None:
    for x in values:
        if not math.isfinite(x):
            raise ValueError(f"non-finite value in {name}: {x!r}")


@dataclass(slots=True)
class DroneState:
    """Kinematic state of the vehicle in the world frame."""

    position: Vec3
    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw: float = 0.0
    time: float = 0.0

    def validate(self) -> None:
        _require_finite("DroneState", *self.position, *self.velocity, self.yaw, self.time)
        if self.position[2] < 0.0:
            raise ValueError("drone position below ground plane")


@dataclass(slots=True)
class ControlCommand:
    """Velocity command in the body frame plus yaw rate and landing intent."""

    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0
    land: bool = False

    def is_zero(self) -> bool:
        vx, vy, vz = self.velocity
        return vx == 0.0 and vy == 0.0 and vz == 0.0 and self.yaw_rate == 0.0 and not self.land

    def within_bounds(self, v_max: float = V_MAX_DEFAULT) -> bool:
        return (
            all(abs(c) <= v_max for c in self.velocity)
            and abs(self.yaw_rate) <= YAW_RATE_MAX
        )


@dataclass(slots=True)
class MotionPattern:
    """Predefined platform motion: fixed, constant-velocity, or turntable."""

    kind: MotionKind = MotionKind.STATIC
    speed: float = 0.0                       # m/s (linear) or rad/s (rotational)
    heading: tuple[float, float] = (1.0, 0.0)  # unit direction of linear travel
    center: tuple[float, float] = (0.0, 0.0)   # rotation center, world xy

    def __post_init__(self) -> None:
        if self.speed < 0.0:
            raise ValueError("motion speed must be >= 0")
        if self.kind is MotionKind.STATIC and self.speed != 0.0:
            raise ValueError("static motion requires zero speed")
        if self.kind is MotionKind.LINEAR:
            n = math.hypot(*self.heading)
            if n == 0.0:
                raise ValueError("linear motion requires a nonzero heading")
            self.heading = (self.heading[0] / n, self.heading[1] / n)


def platform_pose(pattern: MotionPattern, start: Vec3, t: float) -> Vec3:
    """Pad center at time t for a platform that starts at `start`."""
    if t < 0.0:
        raise ValueError("time must be >= 0")
    if pattern.kind is MotionKind.STATIC:
        return start
    if pattern.kind is MotionKind.LINEAR:
        hx, hy = pattern.heading
        d = pattern.speed * t
        return (start[0] + hx * d, start[1] + hy * d, start[2])
    # rotational: rigid rotation of the start point about a vertical axis
    cx, cy = pattern.center
    ang = pattern.speed * t
    c, s = math.cos(ang), math.sin(ang)
    rx, ry = start[0] - cx, start[1] - cy
    return (cx + c * rx - s * ry, cy + s * rx + c * ry, start[2])


def platform_heading_offset(pattern: MotionPattern, t: float) -> float:
    """Extra yaw the platform has accumulated at time t (turntables only)."""
    if pattern.kind is MotionKind.ROTATIONAL:
        return pattern.speed * t
    return 0.0


@dataclass(slots=True)
class PadConfig:
    """Landing pad: a level disc whose center may ride a moving platform."""

    center: Vec3 = (0.0, 0.0, 0.0)
    radius: float = 0.75
    facing: float = 0.0  # direction toward the approach corridor, radians
    motion: MotionPattern = field(default_factory=MotionPattern)

    def __post_init__(self) -> None:
        if self.radius <= 0.0:
            raise ValueError("pad radius must be > 0")

    def center_at(self, t: float) -> Vec3:
        return platform_pose(self.motion, self.center, t)

    def facing_at(self, t: float) -> float:
        return self.facing + platform_heading_offset(self.motion, t)


@dataclass(slots=True)
class LandmarkConfig:
    """Lenticular disc rig: a color-banded disc mounted near the pad.

    `inclination` is the tilt of the disc plane away from vertical, so pi/2
    lays the disc flat (normal straight up). The flat default makes the
    disc's viewing angle a pure elevation cue, which is what lets a single
    forward camera separate range (apparent diameter) from height (angle).
    """

    offset_from_pad: float = 0.15  # m behind the pad center, along the facing axis
    height: float = 0.5
    inclination: float = math.pi / 2
    diameter: float = 0.5
    band_edges: tuple[float, float] = (math.radians(75.0), math.radians(83.0))

    def __post_init__(self) -> None:
        if self.diameter <= 0.0:
            raise ValueError("landmark diameter must be > 0")
        if self.height <= 0.0:
            raise ValueError("landmark height must be > 0")
        e0, e1 = self.band_edges
        if not (0.0 < e0 < e1 < math.pi / 2):
            raise ValueError("band edges must satisfy 0 < e0 < e1 < pi/2")


def landmark_pose(lm: LandmarkConfig, pad: PadConfig, t: float) -> tuple[Vec3, Vec3]:
    """World-frame disc center and unit front normal at time t.

    The disc sits `offset_from_pad` behind the pad center (opposite the
    approach corridor) at `height`, and rides the platform rigidly. Its
    front normal points toward the corridor, raised above the horizon by
    `inclination`.
    """
    facing = pad.facing_at(t)
    fx, fy = math.cos(facing), math.sin(facing)
    cx, cy, cz = pad.center_at(t)
    center = (cx - lm.offset_from_pad * fx, cy - lm.offset_from_pad * fy, cz + lm.height)
    ci, si = math.cos(lm.inclination), math.sin(lm.inclination)
    normal = (ci * fx, ci * fy, si)
    return center, normal


@dataclass(slots=True)
class WindState:
    """Steady horizontal wind with an optional sinusoidal gust component."""

    velocity: tuple[float, float] = (0.0, 0.0)
    gust_amplitude: float = 0.0
    gust_period: float = 0.0

    def __post_init__(self) -> None:
        if math.hypot(*self.velocity) > WIND_MAX_DEFAULT + 1e-12:
            raise ValueError("wind speed exceeds the configured ceiling")
        if self.gust_amplitude < 0.0 or self.gust_period < 0.0:
            raise ValueError("gust parameters must be >= 0")

    def drift_at(self, t: float) -> tuple[float, float]:
        wx, wy = self.velocity
        if self.gust_amplitude == 0.0 or self.gust_period == 0.0:
            return wx, wy
        speed = math.hypot(wx, wy)
        if speed == 0.0:
            return 0.0, 0.0
        g = 1.0 + self.gust_amplitude * math.sin(2.0 * math.pi * t / self.gust_period) / speed
        return wx * g, wy * g


def step(
    state: DroneState,
    cmd: ControlCommand,
    wind: WindState,
    dt: float,
    v_max: float = V_MAX_DEFAULT,
) -> DroneState:
    """Advance the drone one tick under first-order velocity kinematics.

    The commanded body velocity (speed-clamped to v_max) is rotated into the
    world frame, wind drift is added, and the position integrates with
    explicit Euler. Altitude clamps at the ground plane. Fully deterministic.
    """
    if not (dt > 0.0) or not math.isfinite(dt):
        raise ValueError("dt must be a positive finite number")
    state.validate()
    _require_finite("ControlCommand", *cmd.velocity, cmd.yaw_rate)

    vx, vy, vz = cmd.velocity
    speed = math.sqrt(vx * vx + vy * vy + vz * vz)
    if speed > v_max:
        k = v_max / speed
        vx, vy, vz = vx * k, vy * k, vz * k

    c, s = math.cos(state.yaw), math.sin(state.yaw)
    wx, wy = wind.drift_at(state.time)
    wvx = c * vx - s * vy + wx
    wvy = s * vx + c * vy + wy

    px = state.position[0] + wvx * dt
    py = state.position[1] + wvy * dt
    pz = state.position[2] + vz * dt
    if pz < 0.0:
        pz = 0.0

    yaw_rate = max(-YAW_RATE_MAX, min(YAW_RATE_MAX, cmd.yaw_rate))
    return DroneState(
        position=(px, py, pz),
        velocity=(wvx, wvy, vz),
        yaw=normalize_angle(state.yaw + yaw_rate * dt),
        time=state.time + dt,
    )


class TouchdownKind(Enum):
    LANDED = "landed"
    CRASHED = "crashed"
    AIRBORNE = "airborne"


@dataclass(slots=True)
class TouchdownOutcome:
    kind: TouchdownKind
    lateral_displacement: float | None = None  # m from pad center, landed only

    @property
    def landed(self) -> bool:
        return self.kind is TouchdownKind.LANDED


def touchdown_outcome(
    state: DroneState,
    pad: PadConfig,
    land_commanded: bool,
    v_land_max: float = V_LAND_MAX_DEFAULT,
) -> TouchdownOutcome:
    """Classify ground contact: survivable intended landing vs crash.

    A touchdown counts as landed only when the landing flag was set and the
    descent speed stayed within v_land_max; any other ground contact is a
    crash. Lateral displacement is measured to the pad center at the moment
    of contact.
    """
    if state.position[2] > 0.0:
        return TouchdownOutcome(TouchdownKind.AIRBORNE)
    descent = -state.velocity[2]
    if land_commanded and descent <= v_land_max:
        px, py, _ = pad.center_at(state.time)
        disp = math.hypot(state.position[0] - px, state.position[1] - py)
        return TouchdownOutcome(TouchdownKind.LANDED, disp)
    return TouchdownOutcome(TouchdownKind.CRASHED)
