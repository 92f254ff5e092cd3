"""Pinhole front-camera model and exact projection of the landmark disc.

The camera is body-mounted looking forward; `mount_pitch` tilts the optical
axis down from the body x axis. Camera frame follows the usual computer
vision convention (x right, y down, z forward); pixel (0, 0) is the top-left
image corner.

Observations are synthesized from geometry rather than rendered and
re-detected: the apparent diameter is the projected ellipse major axis
(focal * diameter / range, invariant to disc tilt), the viewing angle is the
angle between the disc-to-camera ray and the disc front normal, and the
ellipse aspect ratio equals its cosine. Measurement noise is injected
downstream, in the perception layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .world import DroneState, LandmarkConfig, PadConfig, landmark_pose


@dataclass(slots=True)
class CameraIntrinsics:
    focal_px: float = 800.0
    image_width: int = 960
    image_height: int = 720
    mount_pitch: float = 0.0  # rad, positive tilts the optical axis down

    def __post_init__(self) -> None:
        if self.focal_px <= 0.0:
            raise ValueError("focal length must be > 0")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image dimensions must be > 0")
        # Derived FOVs of a pinhole are always in (0, pi); guard anyway so a
        # bad config fails here rather than deep inside a projection.
        for fov in (self.hfov, self.vfov):
            if not (0.0 < fov < math.pi):
                raise ValueError("derived field of view outside (0, pi)")

    @property
    def half_hfov(self) -> float:
        return math.atan2(self.image_width / 2.0, self.focal_px)

    @property
    def half_vfov(self) -> float:
        return math.atan2(self.image_height / 2.0, self.focal_px)

    @property
    def hfov(self) -> float:
        return 2.0 * self.half_hfov

    @property
    def vfov(self) -> float:
        return 2.0 * self.half_vfov


class ColorBand(Enum):
    A = "A"
    B = "B"
    C = "C"


@dataclass(slots=True)
class LandmarkObservation:
    """What the front camera perceives of the disc on one frame.

    When `visible` is false every other field is None: invisibility is a
    value, not an error.
    """

    visible: bool
    apparent_diameter_px: float | None = None
    viewing_angle: float | None = None
    color_band: ColorBand | None = None
    ellipse_ratio: float | None = None
    centroid_px: tuple[float, float] | None = None


INVISIBLE = LandmarkObservation(visible=False)


def color_band(viewing_angle: float, lm: LandmarkConfig) -> ColorBand:
    """Band shown by the lenticular print at a given viewing angle."""
    if not (0.0 <= viewing_angle <= math.pi / 2) or not math.isfinite(viewing_angle):
        raise ValueError(f"viewing angle outside [0, pi/2]: {viewing_angle!r}")
    e0, e1 = lm.band_edges
    if viewing_angle < e0:
        return ColorBand.A
    if viewing_angle < e1:
        return ColorBand.B
    return ColorBand.C


def _band_code(viewing_angle: float, e0: float, e1: float) -> int:
    if viewing_angle < e0:
        return 0
    if viewing_angle < e1:
        return 1
    return 2


def project_scalars(
    px: float, py: float, pz: float, yaw: float,
    cam: CameraIntrinsics,
    lmx: float, lmy: float, lmz: float,
    nx: float, ny: float, nz: float,
    diameter: float,
) -> tuple[float, float, float, float, float] | None:
    """Allocation-free projection core shared by the public API and the
    simulation hot loop.

    Returns (apparent_diameter_px, viewing_angle, u, v, range) for a visible
    landmark, or None. Visibility requires positive depth along the optical
    axis, the disc center inside the image bounds, and the disc front face
    toward the camera.
    """
    dx, dy, dz = lmx - px, lmy - py, lmz - pz
    rng = math.sqrt(dx * dx + dy * dy + dz * dz)
    if rng <= 1e-9:
        return None

    # world -> body (undo yaw), then body -> camera (x right, y down, z fwd)
    c, s = math.cos(yaw), math.sin(yaw)
    bx = c * dx + s * dy
    by = -s * dx + c * dy
    bz = dz
    mp_c, mp_s = math.cos(cam.mount_pitch), math.sin(cam.mount_pitch)
    xc = -by
    yc = -mp_s * bx - mp_c * bz
    zc = mp_c * bx - mp_s * bz
    if zc <= 0.0:
        return None

    u = cam.image_width / 2.0 + cam.focal_px * xc / zc
    v = cam.image_height / 2.0 + cam.focal_px * yc / zc
    if not (0.0 <= u < cam.image_width and 0.0 <= v < cam.image_height):
        return None

    # front side check: disc-to-camera ray against the front normal
    cos_t = (-dx * nx - dy * ny - dz * nz) / rng
    if cos_t <= 0.0:
        return None
    if cos_t > 1.0:
        cos_t = 1.0

    d1 = cam.focal_px * diameter / rng
    return d1, math.acos(cos_t), u, v, rng


def project_landmark(
    drone: DroneState,
    cam: CameraIntrinsics,
    lm: LandmarkConfig,
    pad: PadConfig,
) -> LandmarkObservation:
    """Exact geometric observation of the disc from the drone's camera."""
    drone.validate()
    (lmx, lmy, lmz), (nx, ny, nz) = landmark_pose(lm, pad, drone.time)
    out = project_scalars(
        drone.position[0], drone.position[1], drone.position[2], drone.yaw,
        cam, lmx, lmy, lmz, nx, ny, nz, lm.diameter,
    )
    if out is None:
        return INVISIBLE
    d1, theta, u, v, _ = out
    return LandmarkObservation(
        visible=True,
        apparent_diameter_px=d1,
        viewing_angle=theta,
        color_band=color_band(theta, lm),
        ellipse_ratio=math.cos(theta),
        centroid_px=(u, v),
    )


def blind_region_boundary(cam: CameraIntrinsics, lm: LandmarkConfig, altitude: float) -> float:
    """Horizontal radius around the landmark inside which it drops below the
    lower image edge for a camera at `altitude` looking level at it.

    Returns 0 when the camera sits at or below the landmark, or when the
    mount pitch plus half the vertical FOV reaches the vertical (no blind
    region at all).
    """
    if not math.isfinite(altitude):
        raise ValueError("altitude must be finite")
    drop = altitude - lm.height
    if drop <= 0.0:
        return 0.0
    edge = cam.mount_pitch + cam.half_vfov
    if edge >= math.pi / 2:
        return 0.0
    return drop / math.tan(edge)
