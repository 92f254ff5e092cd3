"""Configuration: package-wide defaults plus YAML override loading.

The config file is a single YAML document with one section per subsystem.
Angle-valued keys carry a `_deg` suffix in the file and are converted to
radians at this boundary; everything in-process is radians and SI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import yaml

from .agent import ActionSpec, BinScheme, Hyperparams, RewardSpec
from .optics import CameraIntrinsics
from .perception import NoiseModel, PoseSampler
from .world import LandmarkConfig


@dataclass(slots=True)
class WorldParams:
    v_max: float = 3.0
    wind_max: float = 2.0
    v_land_max: float = 0.5
    dt: float = 0.05


@dataclass(slots=True)
class EstimatorParams:
    knots: int = 32
    training_samples: int = 20000
    depth_range: tuple[float, float] = (0.3, 20.0)
    altitude_range: tuple[float, float] = (0.5, 10.0)
    bearing_deg: float = 35.0
    seed: int = 7

    def sampler(self) -> PoseSampler:
        b = math.radians(self.bearing_deg)
        return PoseSampler(
            depth_range=self.depth_range,
            altitude_range=self.altitude_range,
            bearing_range=(-b, b),
        )


@dataclass(slots=True)
class AgentParams:
    episodes: int = 16000
    train_motion_fraction: float = 0.35
    spawn_depth: tuple[float, float] = (4.0, 16.0)
    spawn_bearing_deg: float = 33.0
    spawn_altitude: tuple[float, float] = (1.5, 3.5)

    def hyper(self) -> Hyperparams:
        return Hyperparams()


@dataclass(slots=True)
class BlendParams:
    alpha_max: float = 0.6


@dataclass(slots=True)
class BridgeParams:
    tick_hz: float = 20.0
    pilot_staleness_s: float = 0.5


@dataclass(slots=True)
class SuiteParams:
    repeats: int = 5
    start_altitude: float = 2.5
    dynamic_start_depth: float = 4.0
    dynamic_linear_heading_deg: float = 135.0
    rotation_radius: float = 2.0
    oob_distance: float = 30.0
    oob_altitude: float = 12.0


@dataclass
class SimConfig:
    world: WorldParams = field(default_factory=WorldParams)
    pad_radius: float = 0.75
    landmark: LandmarkConfig = field(default_factory=LandmarkConfig)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    noise: NoiseModel = field(default_factory=NoiseModel)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    agent: AgentParams = field(default_factory=AgentParams)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    action_spec: ActionSpec = field(default_factory=ActionSpec)
    rewards: RewardSpec = field(default_factory=RewardSpec)
    bins: BinScheme = field(default_factory=BinScheme)
    blend: BlendParams = field(default_factory=BlendParams)
    bridge: BridgeParams = field(default_factory=BridgeParams)
    suite: SuiteParams = field(default_factory=SuiteParams)
    raw: dict = field(default_factory=dict)


def _pair(v: Any) -> tuple[float, float]:
    a, b = v
    return (float(a), float(b))


def config_from_dict(doc: dict) -> SimConfig:
    """Build a SimConfig from a (possibly partial) plain dict."""
    cfg = SimConfig(raw=doc)
    w = doc.get("world", {})
    cfg.world = WorldParams(
        v_max=float(w.get("v_max", 3.0)),
        wind_max=float(w.get("wind_max", 2.0)),
        v_land_max=float(w.get("v_land_max", 0.5)),
        dt=float(w.get("dt", 0.05)),
    )
    cfg.pad_radius = float(doc.get("pad", {}).get("radius", 0.75))

    lm = doc.get("landmark", {})
    default_lm = LandmarkConfig()
    edges = lm.get("band_edges_deg")
    cfg.landmark = LandmarkConfig(
        offset_from_pad=float(lm.get("offset_from_pad", default_lm.offset_from_pad)),
        height=float(lm.get("height", default_lm.height)),
        inclination=math.radians(float(lm["inclination_deg"])) if "inclination_deg" in lm else default_lm.inclination,
        diameter=float(lm.get("diameter", default_lm.diameter)),
        band_edges=(math.radians(float(edges[0])), math.radians(float(edges[1]))) if edges else default_lm.band_edges,
    )

    cam = doc.get("camera", {})
    cfg.camera = CameraIntrinsics(
        focal_px=float(cam.get("focal_px", 800.0)),
        image_width=int(cam.get("image_width", 960)),
        image_height=int(cam.get("image_height", 720)),
        mount_pitch=math.radians(float(cam.get("mount_pitch_deg", 0.0))),
    )

    nz = doc.get("noise", {})
    cfg.noise = NoiseModel(
        sigma_diameter_px=float(nz.get("sigma_diameter_px", 0.0)),
        sigma_angle=float(nz.get("sigma_angle", 0.0)),
        sigma_centroid_px=float(nz.get("sigma_centroid_px", 0.0)),
        dropout_prob=float(nz.get("dropout_prob", 0.0)),
        seed=int(nz.get("seed", 0)),
    )

    es = doc.get("estimator", {})
    d = EstimatorParams()
    cfg.estimator = EstimatorParams(
        knots=int(es.get("knots", d.knots)),
        training_samples=int(es.get("training_samples", d.training_samples)),
        depth_range=_pair(es.get("depth_range", d.depth_range)),
        altitude_range=_pair(es.get("altitude_range", d.altitude_range)),
        bearing_deg=float(es.get("bearing_deg", d.bearing_deg)),
        seed=int(es.get("seed", d.seed)),
    )

    ag = doc.get("agent", {})
    da = AgentParams()
    cfg.agent = AgentParams(
        episodes=int(ag.get("episodes", da.episodes)),
        train_motion_fraction=float(ag.get("train_motion_fraction", da.train_motion_fraction)),
        spawn_depth=_pair(ag.get("spawn_depth", da.spawn_depth)),
        spawn_bearing_deg=float(ag.get("spawn_bearing_deg", da.spawn_bearing_deg)),
        spawn_altitude=_pair(ag.get("spawn_altitude", da.spawn_altitude)),
    )
    dh = Hyperparams()
    cfg.hyper = Hyperparams(
        alpha=float(ag.get("alpha", dh.alpha)),
        gamma=float(ag.get("gamma", dh.gamma)),
        epsilon_start=float(ag.get("epsilon_start", dh.epsilon_start)),
        epsilon_end=float(ag.get("epsilon_end", dh.epsilon_end)),
        epsilon_fraction=float(ag.get("epsilon_fraction", dh.epsilon_fraction)),
        max_steps=int(ag.get("max_steps", dh.max_steps)),
    )
    das = ActionSpec()
    cfg.action_spec = ActionSpec(
        speed_scale=float(ag.get("speed_scale", das.speed_scale)),
        land_descent=float(ag.get("land_descent", das.land_descent)),
    )
    rw = ag.get("rewards", {})
    dr = RewardSpec()
    cfg.rewards = RewardSpec(
        w_progress=float(rw.get("w_progress", dr.w_progress)),
        w_time=float(rw.get("w_time", dr.w_time)),
        r_land=float(rw.get("r_land", dr.r_land)),
        landing_accuracy_scale=float(rw.get("landing_accuracy_scale", dr.landing_accuracy_scale)),
        r_crash=float(rw.get("r_crash", dr.r_crash)),
        r_oob=float(rw.get("r_oob", dr.r_oob)),
    )
    bn = ag.get("bins", {})
    db = BinScheme()
    cfg.bins = BinScheme(
        altitude_edges=tuple(bn.get("altitude_edges", db.altitude_edges)),
        depth_edges=tuple(bn.get("depth_edges", db.depth_edges)),
        lateral_edges=tuple(bn.get("lateral_edges", db.lateral_edges)),
        confidence_edge=float(bn.get("confidence_edge", db.confidence_edge)),
    )

    bl = doc.get("blend", {})
    cfg.blend = BlendParams(alpha_max=float(bl.get("alpha_max", 0.6)))

    br = doc.get("bridge", {})
    cfg.bridge = BridgeParams(
        tick_hz=float(br.get("tick_hz", 20.0)),
        pilot_staleness_s=float(br.get("pilot_staleness_s", 0.5)),
    )

    su = doc.get("suite", {})
    ds = SuiteParams()
    cfg.suite = SuiteParams(
        repeats=int(su.get("repeats", ds.repeats)),
        start_altitude=float(su.get("start_altitude", ds.start_altitude)),
        dynamic_start_depth=float(su.get("dynamic_start_depth", ds.dynamic_start_depth)),
        dynamic_linear_heading_deg=float(su.get("dynamic_linear_heading_deg", ds.dynamic_linear_heading_deg)),
        rotation_radius=float(su.get("rotation_radius", ds.rotation_radius)),
        oob_distance=float(su.get("oob_distance", ds.oob_distance)),
        oob_altitude=float(su.get("oob_altitude", ds.oob_altitude)),
    )
    return cfg


def load_config(path: str | None = None) -> SimConfig:
    """Defaults, with a YAML file merged on top when given."""
    if path is None:
        return config_from_dict({})
    with open(path) as f:
        doc = yaml.safe_load(f) or {}
    if not isinstance(doc, dict):
        raise ValueError("config file must contain a YAML mapping")
    return config_from_dict(doc)
