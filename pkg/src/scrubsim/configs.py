"""Default arm geometry, instrument catalog, and scenario descriptors.

The arm is a 6-DOF anthropomorphic chain (yaw shoulder, three pitch
joints, wrist roll and pitch) with link lengths in the half-meter class;
geometry lives in config files so the kinematics code stays
geometry-agnostic. Scenarios describe instrument sets, placement regions,
hand pose bands, perturbations, tolerances, and the episode timeout.
"""

from dataclasses import dataclass, field

import numpy as np
import yaml

from . import transforms as tf
from .codec import ActionRanges
from .kinematics import ArmModel, Link, PDGains, Pose
from .world import InstrumentSpec

TABLE_X = (0.32, 0.58)
TABLE_Y = (-0.20, 0.20)
HAND_X = (0.36, 0.54)
HAND_Y = (-0.16, 0.16)
HAND_Z = (0.14, 0.22)
HAND_Z_BAND = (0.10, 0.28)     # height_change resampling band

CONTROL_RATE = 30              # Hz, action rate
EPISODE_TIMEOUT = 20.0         # seconds, default


def _link(axis, translation, lower, upper, quat=None):
    q = np.asarray(quat, dtype=float) if quat is not None else tf.quat_identity()
    return Link(np.asarray(axis, dtype=float),
                Pose(np.asarray(translation, dtype=float), q), lower, upper)


def default_arm():
    """6-DOF arm: base yaw, shoulder/elbow/wrist pitch, tool roll and pitch."""
    links = (
        _link([0, 0, 1], [0.0, 0.0, 0.10], -0.9, 0.9),
        _link([0, 1, 0], [0.0, 0.0, 0.08], -1.6, 0.2),
        _link([0, 1, 0], [0.40, 0.0, 0.0], 0.9, 2.5),
        _link([0, 1, 0], [0.35, 0.0, 0.0], 0.0, 1.6),
        _link([1, 0, 0], [0.07, 0.0, 0.0], -0.9, 0.9),
        _link([0, 1, 0], [0.05, 0.0, 0.0], -0.9, 0.9),
    )
    gripper = Pose(np.array([0.10, 0.0, 0.0]), tf.quat_identity())
    return ArmModel(links, gripper)


def default_gains(arm):
    return PDGains(np.full(arm.dof, 100.0), np.full(arm.dof, 20.0), 300, CONTROL_RATE)


HOME_Q = np.array([0.0, -1.2, 1.85, 0.92, 0.0, 0.0])


def action_ranges(arm):
    """Per-dimension bin support: joint limits plus a [0,1] gripper channel."""
    lo = np.append(arm.lower_limits, 0.0)
    hi = np.append(arm.upper_limits, 1.0)
    return ActionRanges(lo, hi)


def _stick_footprint(length, width, tip):
    """Elongated instrument body with a tapered jaw tip."""
    hl, hw = length / 2, width / 2
    return np.array([
        [-hl, -hw], [hl - tip, -hw], [hl, -0.3 * hw],
        [hl, 0.3 * hw], [hl - tip, hw], [-hl, hw],
    ])


def _ball_footprint(radius, sides=12):
    ang = np.linspace(0, 2 * np.pi, sides, endpoint=False)
    return np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)


def instrument_catalog():
    """Six visually similar instruments, one unseen analog, one fragile ball."""
    base = dict(height=0.015)
    specs = {}
    dims = [
        ("7mm clamp", 0.090, 0.016, 0.020, 1),
        ("5mm clamp", 0.084, 0.014, 0.018, 2),
        ("straight scissors", 0.096, 0.015, 0.026, 3),
        ("curved scissors", 0.092, 0.017, 0.024, 4),
        ("needle driver", 0.088, 0.015, 0.016, 5),
        ("forceps", 0.094, 0.013, 0.022, 6),
        ("10mm clamp", 0.098, 0.018, 0.021, 7),   # held out of datagen
    ]
    for label, length, width, tip, cls in dims:
        specs[label] = InstrumentSpec(
            label=label,
            footprint=_stick_footprint(length, width, tip),
            grasp_point=np.array([-0.2 * length, 0.0, base["height"]]),
            mass_center=np.array([0.0, 0.0, base["height"] / 2]),
            visual_class=cls,
            **base,
        )
    specs["ping-pong ball"] = InstrumentSpec(
        label="ping-pong ball",
        footprint=_ball_footprint(0.020),
        height=0.040,
        grasp_point=np.array([0.0, 0.0, 0.020]),
        mass_center=np.array([0.0, 0.0, 0.020]),
        visual_class=8,
        fragility_limit=4.0,
        requires_center_grasp=True,
    )
    return specs


SIX_INSTRUMENTS = ["7mm clamp", "5mm clamp", "straight scissors",
                   "curved scissors", "needle driver", "forceps"]


@dataclass
class CameraConfig:
    center: np.ndarray = field(default_factory=lambda: np.array([0.45, 0.0, 0.80]))
    focal_px: float = 330.0
    noise: float = 0.0     # sensor noise sigma in [0,1] units; off by default
    seed: int = 0


@dataclass
class ErrorModelConfig:
    detector_miss_rate: float = 0.0
    detector_false_rate: float = 0.0
    box_jitter_px: float = 0.0
    mask_boundary_noise_px: float = 0.0
    command_error_rate: float = 0.0
    seed: int = 0


@dataclass
class ScenarioConfig:
    name: str = "on_table"
    instrument_labels: list = field(default_factory=lambda: list(SIX_INSTRUMENTS))
    target_pool: list = field(default_factory=lambda: list(SIX_INSTRUMENTS))
    verb: str = "give"
    table_x: tuple = TABLE_X
    table_y: tuple = TABLE_Y
    hand_x: tuple = HAND_X
    hand_y: tuple = HAND_Y
    hand_z: tuple = HAND_Z
    hand_z_band: tuple = HAND_Z_BAND
    fixed_positions: dict = field(default_factory=dict)
    perturbation: str | None = None
    timeout: float = EPISODE_TIMEOUT
    clasp_dwell_steps: int = 8
    gripper_force: float = 2.0
    receive_tolerance: float = 0.05
    grasp_radius: float = 0.015
    center_tolerance: float = 0.005
    min_hold_force: float = 1.0
    camera: CameraConfig = field(default_factory=CameraConfig)
    errors: ErrorModelConfig = field(default_factory=ErrorModelConfig)
    # Per-episode camera center jitter, meters. Kept small relative to
    # grasp_radius: the table renders without texture, so a camera offset is
    # not recoverable from the image and translates directly into world-frame
    # aiming error for a vision-conditioned policy.
    camera_jitter: float = 0.003

    @property
    def instruments(self):
        catalog = instrument_catalog()
        return [catalog[label] for label in self.instrument_labels]


def scenario_for_task(name):
    """Scenario descriptors mirroring the evaluation task suite."""
    if name == "lift":
        return ScenarioConfig(name=name, verb="lift", timeout=12.0)
    if name == "handover_single":
        return ScenarioConfig(name=name,
                              instrument_labels=["7mm clamp"],
                              target_pool=["7mm clamp"], timeout=12.0)
    if name == "handover_multiple":
        return ScenarioConfig(name=name, timeout=12.0)
    if name == "on_table":
        return ScenarioConfig(name=name, timeout=12.0)
    if name == "height_change":
        return ScenarioConfig(name=name, perturbation="height_change", timeout=12.0)
    if name == "pose_change":
        return ScenarioConfig(name=name, perturbation="pose_change", timeout=16.0)
    if name == "unseen_tool":
        labels = SIX_INSTRUMENTS[:5] + ["10mm clamp"]
        return ScenarioConfig(name=name, instrument_labels=labels,
                              target_pool=["10mm clamp"], timeout=12.0)
    if name == "difficult_to_grasp":
        labels = SIX_INSTRUMENTS[:3] + ["ping-pong ball"]
        return ScenarioConfig(name=name, instrument_labels=labels,
                              target_pool=["ping-pong ball"],
                              gripper_force=4.0, timeout=12.0)
    raise ValueError(f"unknown task {name!r}")


TASK_NAMES = ["lift", "handover_single", "handover_multiple", "on_table",
              "height_change", "pose_change", "unseen_tool", "difficult_to_grasp"]


# ---------------------------------------------------------------------------
# config file I/O

def save_arm(arm, gains, path):
    doc = {
        "links": [
            {
                "axis": [float(v) for v in link.axis],
                "translation": [float(v) for v in link.transform.position],
                "orientation": [float(v) for v in link.transform.orientation],
                "lower": float(link.lower),
                "upper": float(link.upper),
            }
            for link in arm.links
        ],
        "gripper_offset": {
            "translation": [float(v) for v in arm.gripper_offset.position],
            "orientation": [float(v) for v in arm.gripper_offset.orientation],
        },
        "gains": {
            "kp": [float(v) for v in gains.kp],
            "kd": [float(v) for v in gains.kd],
            "inner_rate": int(gains.inner_rate),
            "outer_rate": int(gains.outer_rate),
        },
    }
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_arm(path):
    with open(path) as f:
        doc = yaml.safe_load(f)
    links = tuple(
        _link(l["axis"], l["translation"], l["lower"], l["upper"],
              quat=l.get("orientation"))
        for l in doc["links"]
    )
    go = doc.get("gripper_offset", {})
    gripper = Pose(np.asarray(go.get("translation", [0, 0, 0]), dtype=float),
                   np.asarray(go.get("orientation", [1, 0, 0, 0]), dtype=float))
    arm = ArmModel(links, gripper)
    g = doc["gains"]
    gains = PDGains(np.asarray(g["kp"], dtype=float), np.asarray(g["kd"], dtype=float),
                    int(g["inner_rate"]), int(g["outer_rate"]))
    return arm, gains


def save_scenario(config, path):
    doc = {k: v for k, v in vars(config).items() if k not in ("camera", "errors")}
    doc["table_x"] = list(config.table_x)
    doc["table_y"] = list(config.table_y)
    doc["hand_x"] = list(config.hand_x)
    doc["hand_y"] = list(config.hand_y)
    doc["hand_z"] = list(config.hand_z)
    doc["hand_z_band"] = list(config.hand_z_band)
    doc["camera"] = {"center": [float(v) for v in config.camera.center],
                     "focal_px": config.camera.focal_px,
                     "noise": config.camera.noise}
    doc["errors"] = dict(vars(config.errors))
    with open(path, "w") as f:
        yaml.safe_dump(doc, f, sort_keys=False)


def load_scenario(path):
    with open(path) as f:
        doc = yaml.safe_load(f)
    cam = doc.pop("camera", {})
    err = doc.pop("errors", {})
    cfg = ScenarioConfig(**{k: tuple(v) if k.startswith(("table_", "hand_")) else v
                            for k, v in doc.items()})
    cfg.camera = CameraConfig(center=np.asarray(cam.get("center", [0.45, 0, 0.8]), dtype=float),
                              focal_px=cam.get("focal_px", 330.0),
                              noise=cam.get("noise", 0.01))
    cfg.errors = ErrorModelConfig(**err)
    return cfg
