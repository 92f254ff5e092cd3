"""Monocular-vision UAV landing sandbox.

A landing pad carries a color-banded lenticular disc; a forward-looking
monocular camera reads the disc's apparent size, viewing angle, and band to
recover altitude and distance; a tabular reinforcement-learning agent flies
the approach on those estimates; and a shared-autonomy layer blends the
agent with a human pilot without taking authority away from either. A
session bridge exposes live episodes over TCP/WebSocket for cockpit
frontends.
"""

from .world import (
    ControlCommand,
    DroneState,
    LandmarkConfig,
    MotionKind,
    MotionPattern,
    PadConfig,
    TouchdownKind,
    TouchdownOutcome,
    WindState,
    landmark_pose,
    platform_pose,
    step,
    touchdown_outcome,
)
from .optics import (
    CameraIntrinsics,
    ColorBand,
    LandmarkObservation,
    blind_region_boundary,
    color_band,
    project_landmark,
)
from .perception import (
    EstimatorModel,
    NoiseModel,
    PoseSampler,
    PositionEstimate,
    collect_training_set,
    corrupt,
    estimate,
    fit_estimators,
    load_estimator,
    save_estimator,
)
from .agent import (
    ActionSpec,
    BinScheme,
    Hyperparams,
    LandingEnv,
    PolicySnapshot,
    RewardSpec,
    Trajectory,
    act,
    encode,
    load_policy,
    reward,
    rollout,
    save_policy,
    train,
)
from .shared import (
    BlendedCommand,
    IntentModel,
    PilotKind,
    PilotModel,
    arbitrate,
    blend,
    conflict,
    fit_intent,
    pilot_command,
    run_blended_episode,
)
from .config import SimConfig, load_config
from .harness import (
    MetricsRecord,
    ScenarioConfig,
    emit_report,
    run_suite,
    scenario1_grid,
    scenario2_set,
)
from .bridge import SessionEngine, replay_command_log, serve

__version__ = "0.1.0"
