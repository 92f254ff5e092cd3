"""Measurement noise, learned range estimators, and position estimation.

The two estimator tables realize the landmark-to-state mapping the rest of
the system runs on: altitude and horizontal distance to the pad are each fit
as piecewise-bilinear functions of (viewing angle, apparent diameter) on a
fixed knot grid, trained on simulator ground truth (no human labels). The
diameter axis is gridded uniformly in 1/diameter, i.e. uniformly in range,
where the underlying geometry is close to linear.

While the landmark is out of view the last estimate is dead-reckoned with
the commanded velocity and its confidence decays linearly to zero over the
staleness horizon.
"""

from __future__ import annotations

import math
import struct
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .optics import (
    CameraIntrinsics,
    ColorBand,
    INVISIBLE,
    LandmarkObservation,
    color_band,
    project_scalars,
)
from .world import (
    ControlCommand,
    DroneState,
    LandmarkConfig,
    PadConfig,
    landmark_pose,
)

STALENESS_HORIZON = 1.0  # s of blindness before confidence reaches zero
EXTRAPOLATION_CONFIDENCE = 0.7

ESTIMATOR_MAGIC = b"LLEM"
ESTIMATOR_VERSION = 1


class InsufficientData(ValueError):
    """Raised when a fit is requested on too little or too degenerate data."""


class DegenerateFit(RuntimeError):
    """Raised when no knot cell of the grid receives any sample support."""


class NoPriorEstimate(RuntimeError):
    """Raised when the landmark is invisible and there is nothing to hold."""


class PoseSamplingError(RuntimeError):
    """Raised when the pose sampler cannot find a visible pose."""


@dataclass(slots=True)
class NoiseModel:
    """Gaussian perturbation of the observation channels plus dropout."""

    sigma_diameter_px: float = 0.0
    sigma_angle: float = 0.0
    sigma_centroid_px: float = 0.0
    dropout_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.sigma_diameter_px, self.sigma_angle, self.sigma_centroid_px) < 0.0:
            raise ValueError("noise sigmas must be >= 0")
        if not (0.0 <= self.dropout_prob <= 1.0):
            raise ValueError("dropout probability must be in [0, 1]")

    @property
    def is_null(self) -> bool:
        return (
            self.sigma_diameter_px == 0.0
            and self.sigma_angle == 0.0
            and self.sigma_centroid_px == 0.0
            and self.dropout_prob == 0.0
        )


def corrupt(
    obs: LandmarkObservation,
    nm: NoiseModel,
    rng: np.random.Generator,
    lm: LandmarkConfig,
) -> LandmarkObservation:
    """Apply the noise model to one observation.

    The color band and ellipse ratio are re-derived from the perturbed
    viewing angle so the corrupted observation stays self-consistent. A null
    noise model returns the input unchanged without consuming randomness.
    """
    if not obs.visible or nm.is_null:
        return obs
    if nm.dropout_prob > 0.0 and rng.random() < nm.dropout_prob:
        return INVISIBLE
    d1 = obs.apparent_diameter_px
    theta = obs.viewing_angle
    u, v = obs.centroid_px
    if nm.sigma_diameter_px > 0.0:
        d1 = max(1e-3, d1 + rng.normal(0.0, nm.sigma_diameter_px))
    if nm.sigma_angle > 0.0:
        theta = min(max(theta + rng.normal(0.0, nm.sigma_angle), 0.0), math.pi / 2 - 1e-9)
    if nm.sigma_centroid_px > 0.0:
        u += rng.normal(0.0, nm.sigma_centroid_px)
        v += rng.normal(0.0, nm.sigma_centroid_px)
    return LandmarkObservation(
        visible=True,
        apparent_diameter_px=d1,
        viewing_angle=theta,
        color_band=color_band(theta, lm),
        ellipse_ratio=math.cos(theta),
        centroid_px=(u, v),
    )


@dataclass(slots=True)
class PoseSampler:
    """Uniform pose sampler over the evaluation hull, camera aimed at the rig.

    Depth is the horizontal distance to the pad center, bearing the angle of
    the drone's position around the approach axis. The lower depth bound sits
    below the scenario grid so the fitted tables also cover the terminal
    approach phase.
    """

    depth_range: tuple[float, float] = (0.3, 20.0)
    altitude_range: tuple[float, float] = (0.5, 10.0)
    bearing_range: tuple[float, float] = (-math.radians(35.0), math.radians(35.0))

    def sample(self, rng: np.random.Generator, pad: PadConfig, lm: LandmarkConfig) -> DroneState:
        d = rng.uniform(*self.depth_range)
        alt = rng.uniform(*self.altitude_range)
        bearing = rng.uniform(*self.bearing_range)
        px0, py0, _ = pad.center_at(0.0)
        axis = pad.facing_at(0.0)
        x = px0 + d * math.cos(axis + bearing)
        y = py0 + d * math.sin(axis + bearing)
        (lmx, lmy, _), _ = landmark_pose(lm, pad, 0.0)
        yaw = math.atan2(lmy - y, lmx - x)
        return DroneState(position=(x, y, alt), yaw=yaw, time=0.0)


@dataclass(slots=True)
class TrainingSample:
    observation: LandmarkObservation
    altitude: float
    depth: float  # horizontal distance to pad center


def collect_training_set(
    cam: CameraIntrinsics,
    lm: LandmarkConfig,
    pad: PadConfig,
    sampler: PoseSampler,
    n: int,
    seed: int,
    noise: NoiseModel | None = None,
) -> list[TrainingSample]:
    """Draw n visible observations with simulator ground truth attached.

    Invisible poses (outside the field of view, behind the disc, or inside
    the near blind region) are resampled; the sampler gives up after a
    bounded number of attempts.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    rng = np.random.default_rng(seed)
    (lmx, lmy, lmz), (nx, ny, nz) = landmark_pose(lm, pad, 0.0)
    px0, py0, _ = pad.center_at(0.0)
    samples: list[TrainingSample] = []
    budget = 200 * n + 1000
    while len(samples) < n:
        if budget <= 0:
            raise PoseSamplingError(
                f"could not draw {n} visible poses; got {len(samples)}"
            )
        budget -= 1
        st = sampler.sample(rng, pad, lm)
        raw = project_scalars(
            st.position[0], st.position[1], st.position[2], st.yaw,
            cam, lmx, lmy, lmz, nx, ny, nz, lm.diameter,
        )
        if raw is None:
            continue
        d1, theta, u, v, _ = raw
        obs = LandmarkObservation(
            visible=True,
            apparent_diameter_px=d1,
            viewing_angle=theta,
            color_band=color_band(theta, lm),
            ellipse_ratio=math.cos(theta),
            centroid_px=(u, v),
        )
        if noise is not None and not noise.is_null:
            obs = corrupt(obs, noise, rng, lm)
            if not obs.visible:
                continue
        depth = math.hypot(st.position[0] - px0, st.position[1] - py0)
        samples.append(TrainingSample(obs, st.position[2], depth))
    return samples


class BilinearTable:
    """Piecewise-bilinear map on a (viewing angle, 1/diameter) knot grid.

    Lookups run inside the simulation tick, so the knots and coefficients
    are cached as plain lists and evaluated without numpy call overhead.
    """

    __slots__ = ("theta_knots", "s_knots", "coeff", "_tk", "_sk", "_rows")

    def __init__(self, theta_knots: np.ndarray, s_knots: np.ndarray, coeff: np.ndarray):
        self.theta_knots = theta_knots
        self.s_knots = s_knots  # s = 1 / apparent_diameter_px
        self.coeff = coeff      # shape (len(theta_knots), len(s_knots))
        self._tk = theta_knots.tolist()
        self._sk = s_knots.tolist()
        self._rows = coeff.tolist()

    def evaluate(self, theta: float, d1: float) -> tuple[float, bool]:
        """Table value at (theta, d1); flags queries outside the trained hull."""
        s = 1.0 / d1
        tk, sk = self._tk, self._sk
        extrapolated = not (tk[0] <= theta <= tk[-1] and sk[0] <= s <= sk[-1])
        t = min(max(theta, tk[0]), tk[-1])
        s = min(max(s, sk[0]), sk[-1])
        i = min(max(bisect_right(tk, t) - 1, 0), len(tk) - 2)
        j = min(max(bisect_right(sk, s) - 1, 0), len(sk) - 2)
        ft = (t - tk[i]) / (tk[i + 1] - tk[i])
        fs = (s - sk[j]) / (sk[j + 1] - sk[j])
        r0, r1 = self._rows[i], self._rows[i + 1]
        val = (
            r0[j] * (1 - ft) * (1 - fs)
            + r1[j] * ft * (1 - fs)
            + r0[j + 1] * (1 - ft) * fs
            + r1[j + 1] * ft * fs
        )
        return val, extrapolated


@dataclass
class EstimatorModel:
    """Fitted altitude and depth tables plus fit bookkeeping."""

    altitude_table: BilinearTable
    depth_table: BilinearTable
    training_sample_count: int
    fit_residual_rms: float        # altitude residual on the training set, m
    depth_residual_rms: float      # depth residual on the training set, m


def _design_rows(
    theta: np.ndarray, s: np.ndarray, tk: np.ndarray, sk: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse bilinear design: per-sample knot indices and weights (n, 4)."""
    nt, ns = len(tk), len(sk)
    i = np.clip(np.searchsorted(tk, theta, side="right") - 1, 0, nt - 2)
    j = np.clip(np.searchsorted(sk, s, side="right") - 1, 0, ns - 2)
    ft = (theta - tk[i]) / (tk[i + 1] - tk[i])
    fs = (s - sk[j]) / (sk[j + 1] - sk[j])
    idx = np.stack(
        [i * ns + j, (i + 1) * ns + j, i * ns + j + 1, (i + 1) * ns + j + 1], axis=1
    )
    w = np.stack(
        [(1 - ft) * (1 - fs), ft * (1 - fs), (1 - ft) * fs, ft * fs], axis=1
    )
    return idx, w


def _fit_table(
    theta: np.ndarray, s: np.ndarray, target: np.ndarray, knots: int
) -> tuple[BilinearTable, float]:
    tk = np.linspace(theta.min(), theta.max(), knots)
    sk = np.linspace(s.min(), s.max(), knots)
    if tk[0] == tk[-1] or sk[0] == sk[-1]:
        raise InsufficientData("samples are degenerate along one input axis")
    idx, w = _design_rows(theta, s, tk, sk)
    nk = knots * knots
    gram = np.zeros((nk, nk))
    rhs = np.zeros(nk)
    # accumulate normal equations; each sample touches a 4-knot stencil
    for col in range(4):
        np.add.at(rhs, idx[:, col], w[:, col] * target)
        for col2 in range(4):
            np.add.at(gram, (idx[:, col], idx[:, col2]), w[:, col] * w[:, col2])
    support = np.diag(gram) > 1e-12
    if not support.any():
        raise DegenerateFit("no knot received sample support")
    lam = 1e-9 * float(np.diag(gram).max())
    coeff = np.linalg.solve(gram + lam * np.eye(nk), rhs)
    coeff = coeff.reshape(knots, knots)

    # Knots with no data inherit their nearest supported neighbors so the
    # table stays defined over the whole grid hull.
    sup = support.reshape(knots, knots).copy()
    while not sup.all():
        filled = sup.copy()
        acc = np.zeros_like(coeff)
        cnt = np.zeros_like(coeff)
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            shifted = np.roll(sup, (di, dj), axis=(0, 1))
            vals = np.roll(coeff, (di, dj), axis=(0, 1))
            if di == 1:
                shifted[0, :] = False
            if di == -1:
                shifted[-1, :] = False
            if dj == 1:
                shifted[:, 0] = False
            if dj == -1:
                shifted[:, -1] = False
            take = shifted & ~sup
            acc[take] += vals[take]
            cnt[take] += 1.0
        newly = (cnt > 0) & ~sup
        coeff[newly] = acc[newly] / cnt[newly]
        filled |= newly
        if not newly.any():
            break
        sup = filled

    table = BilinearTable(tk, sk, coeff)
    fitted = np.sum(coeff.ravel()[idx] * w, axis=1)
    rms = float(np.sqrt(np.mean((fitted - target) ** 2)))
    return table, rms


def fit_estimators(samples: list[TrainingSample], knots: int = 32) -> EstimatorModel:
    """Least-squares fit of both tables on a fixed knot grid."""
    if len(samples) < 50:
        raise InsufficientData(f"need at least 50 samples, got {len(samples)}")
    theta = np.array([s.observation.viewing_angle for s in samples])
    d1 = np.array([s.observation.apparent_diameter_px for s in samples])
    alt = np.array([s.altitude for s in samples])
    dep = np.array([s.depth for s in samples])
    if len(np.unique(np.round(d1, 6))) < 5 or len(np.unique(np.round(theta, 9))) < 5:
        raise InsufficientData("samples must span at least 5 distinct diameters and angles")
    s = 1.0 / d1
    alt_table, alt_rms = _fit_table(theta, s, alt, knots)
    dep_table, dep_rms = _fit_table(theta, s, dep, knots)
    return EstimatorModel(
        altitude_table=alt_table,
        depth_table=dep_table,
        training_sample_count=len(samples),
        fit_residual_rms=alt_rms,
        depth_residual_rms=dep_rms,
    )


@dataclass(slots=True)
class PositionEstimate:
    """Pad-relative state as perceived through the landmark."""

    altitude: float
    depth: float           # horizontal distance to the pad center
    lateral_offset: float  # signed, positive when the rig sits to the right
    confidence: float
    stale_for: float = 0.0
    extrapolated: bool = False


def estimate(
    obs: LandmarkObservation,
    model: EstimatorModel,
    prev: PositionEstimate | None,
    dt: float,
    cam: CameraIntrinsics,
    last_cmd: ControlCommand | None = None,
) -> PositionEstimate:
    """Fuse one observation (or its absence) into a position estimate.

    Visible frames are pure table lookups plus the centroid bearing; blind
    frames dead-reckon the previous estimate with the last commanded
    velocity and decay confidence linearly to zero at the staleness horizon.
    """
    if obs.visible:
        alt, ex1 = model.altitude_table.evaluate(obs.viewing_angle, obs.apparent_diameter_px)
        dep, ex2 = model.depth_table.evaluate(obs.viewing_angle, obs.apparent_diameter_px)
        alt = max(alt, 0.0)
        dep = max(dep, 0.0)
        bearing = math.atan2(obs.centroid_px[0] - cam.image_width / 2.0, cam.focal_px)
        extrapolated = ex1 or ex2
        return PositionEstimate(
            altitude=alt,
            depth=dep,
            lateral_offset=dep * math.tan(bearing),
            confidence=EXTRAPOLATION_CONFIDENCE if extrapolated else 1.0,
            stale_for=0.0,
            extrapolated=extrapolated,
        )
    if prev is None:
        raise NoPriorEstimate("landmark invisible and no prior estimate to propagate")

    vx, vy, vz = (0.0, 0.0, 0.0)
    yaw_rate = 0.0
    if last_cmd is not None:
        vx, vy, vz = last_cmd.velocity
        yaw_rate = last_cmd.yaw_rate
    # body-frame pad position implied by (depth, lateral): x ahead, y left
    ahead = math.sqrt(max(prev.depth * prev.depth - prev.lateral_offset * prev.lateral_offset, 0.0))
    rel_x = ahead - vx * dt
    rel_y = -prev.lateral_offset - vy * dt
    if yaw_rate != 0.0:
        c, s = math.cos(-yaw_rate * dt), math.sin(-yaw_rate * dt)
        rel_x, rel_y = c * rel_x - s * rel_y, s * rel_x + c * rel_y
    stale = prev.stale_for + dt
    return PositionEstimate(
        altitude=prev.altitude + vz * dt,
        depth=math.hypot(rel_x, rel_y),
        lateral_offset=-rel_y,
        confidence=max(0.0, 1.0 - stale / STALENESS_HORIZON),
        stale_for=stale,
        extrapolated=prev.extrapolated,
    )


def save_estimator(model: EstimatorModel, path: str) -> None:
    """Write the model as a little-endian flat file (magic LLEM)."""
    at, dt_ = model.altitude_table, model.depth_table
    nt, ns = len(at.theta_knots), len(at.s_knots)
    with open(path, "wb") as f:
        f.write(ESTIMATOR_MAGIC)
        f.write(struct.pack("<H", ESTIMATOR_VERSION))
        f.write(struct.pack("<II", nt, ns))
        f.write(at.theta_knots.astype("<f8").tobytes())
        f.write(at.s_knots.astype("<f8").tobytes())
        f.write(at.coeff.astype("<f8").tobytes())
        f.write(dt_.coeff.astype("<f8").tobytes())
        f.write(struct.pack("<dd", model.fit_residual_rms, model.depth_residual_rms))
        f.write(struct.pack("<Q", model.training_sample_count))


def load_estimator(path: str) -> EstimatorModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ESTIMATOR_MAGIC:
        raise ValueError("not an estimator file (bad magic)")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != ESTIMATOR_VERSION:
        raise ValueError(f"unsupported estimator file version {version}")
    nt, ns = struct.unpack_from("<II", data, 6)
    off = 14
    def take(count: int) -> np.ndarray:
        nonlocal off
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        return arr
    tk = take(nt)
    sk = take(ns)
    alt_coeff = take(nt * ns).reshape(nt, ns)
    dep_coeff = take(nt * ns).reshape(nt, ns)
    alt_rms, dep_rms = struct.unpack_from("<dd", data, off)
    off += 16
    (count,) = struct.unpack_from("<Q", data, off)
    return EstimatorModel(
        altitude_table=BilinearTable(tk, sk, alt_coeff),
        depth_table=BilinearTable(tk.copy(), sk.copy(), dep_coeff),
        training_sample_count=count,
        fit_residual_rms=alt_rms,
        depth_residual_rms=dep_rms,
    )
