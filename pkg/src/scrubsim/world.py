"""Tabletop scene simulation.

Instruments live on a table as 2.5D footprints (polygon + height). The
scene tracks the gripper frame fed in from the arm, a receiving hand, a
grasp/fragility model, and the handover judge. All randomness is seeded;
identical (config, seed, action stream) reproduces identical traces.
"""

import copy
from dataclasses import dataclass, field, replace

import numpy as np
from shapely.geometry import Point, Polygon

from .kinematics import forward_kinematics
from .transforms import quat_rotate

# event kinds
GRASP_SUCCESS = "GraspSuccess"
GRASP_SLIP = "GraspSlip"
OBJECT_BROKEN = "ObjectBroken"
HANDOVER_SUCCESS = "HandoverSuccess"
HANDOVER_MISS = "HandoverMiss"
TIMEOUT = "Timeout"

# grasp outcomes
NO_TARGET = "NoTarget"


class WorldError(Exception):
    pass


class PlacementFailure(WorldError):
    """Rejection sampling could not place the instruments without overlap."""


@dataclass(frozen=True)
class InstrumentSpec:
    label: str
    footprint: np.ndarray          # Nx2 polygon in body frame, meters
    height: float
    grasp_point: np.ndarray        # body frame, 3-vector
    mass_center: np.ndarray        # body frame, 3-vector
    visual_class: int
    fragility_limit: float | None = None
    requires_center_grasp: bool = False

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float)
        gp = np.asarray(self.grasp_point, dtype=float)
        mc = np.asarray(self.mass_center, dtype=float)
        object.__setattr__(self, "footprint", fp)
        object.__setattr__(self, "grasp_point", gp)
        object.__setattr__(self, "mass_center", mc)
        poly = Polygon(fp)
        if not poly.is_valid or poly.area <= 0:
            raise ValueError(f"invalid footprint for {self.label}")
        if not poly.buffer(1e-9).contains(Point(gp[:2])):
            raise ValueError(f"grasp point outside footprint for {self.label}")
        if not poly.buffer(1e-9).contains(Point(mc[:2])):
            raise ValueError(f"mass center outside footprint for {self.label}")
        if self.fragility_limit is not None and self.fragility_limit <= 0:
            raise ValueError("fragility limit must be positive")


@dataclass
class InstrumentState:
    spec: InstrumentSpec
    position: np.ndarray           # world, 3-vector (footprint origin)
    yaw: float
    held_by: str | None = None     # None | "gripper" | "hand"

    def world_point(self, body_point):
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return self.position + R @ np.asarray(body_point, dtype=float)

    def world_footprint(self):
        c, s = np.cos(self.yaw), np.sin(self.yaw)
        R = np.array([[c, -s], [s, c]])
        return (R @ self.spec.footprint.T).T + self.position[:2]

    def grasp_point_world(self):
        return self.world_point(self.spec.grasp_point)

    def mass_center_world(self):
        return self.world_point(self.spec.mass_center)


@dataclass
class HandState:
    position: np.ndarray
    clasp: bool = False
    receive_tolerance: float = 0.05

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.receive_tolerance <= 0:
            raise ValueError("receive tolerance must be positive")


@dataclass(frozen=True)
class WorldEvent:
    kind: str
    subject: str | None
    time: float


@dataclass(frozen=True)
class GripperCommand:
    close: bool
    force: float = 2.0


@dataclass(frozen=True)
class GraspOutcome:
    kind: str                      # GraspSuccess | GraspSlip | ObjectBroken | NoTarget
    label: str | None = None


@dataclass
class SceneState:
    instruments: list
    hand: HandState
    gripper_position: np.ndarray
    gripper_closed: bool = False
    gripper_force: float = 0.0
    broken: set = field(default_factory=set)
    time: float = 0.0
    rng_seed: int = 0
    # scenario-driven hand behavior
    auto_clasp_dwell: int | None = None   # steps in tolerance before the hand clasps
    present_counter: int = 0
    hand_schedule: list = field(default_factory=list)  # (time, new_position)
    # tolerances
    grasp_radius: float = 0.015
    center_tolerance: float = 0.005
    min_hold_force: float = 1.0
    approach_radius: float = 0.05

    def copy(self):
        out = replace(self)
        out.instruments = [copy.copy(i) for i in self.instruments]
        out.hand = copy.copy(self.hand)
        out.hand.position = self.hand.position.copy()
        out.gripper_position = np.asarray(self.gripper_position, dtype=float).copy()
        out.broken = set(self.broken)
        out.hand_schedule = list(self.hand_schedule)
        return out

    def find(self, label):
        for inst in self.instruments:
            if inst.spec.label == label:
                return inst
        return None

    def held_instrument(self):
        for inst in self.instruments:
            if inst.held_by == "gripper":
                return inst
        return None


def _footprints_overlap(a, b):
    return Polygon(a.world_footprint()).buffer(0.005).intersects(Polygon(b.world_footprint()))


def spawn_scene(config, seed):
    """Seeded rejection-sampled placement of instruments plus the hand pose."""
    rng = np.random.default_rng(seed)
    placed = []
    for spec in config.instruments:
        if config.fixed_positions and spec.label in config.fixed_positions:
            x, y, yaw = config.fixed_positions[spec.label]
            placed.append(InstrumentState(spec, np.array([x, y, 0.0]), yaw))
            continue
        for attempt in range(1000):
            x = rng.uniform(*config.table_x)
            y = rng.uniform(*config.table_y)
            yaw = rng.uniform(-np.pi, np.pi)
            cand = InstrumentState(spec, np.array([x, y, 0.0]), yaw)
            if not any(_footprints_overlap(cand, p) for p in placed):
                placed.append(cand)
                break
        else:
            raise PlacementFailure(f"could not place {spec.label} after 1000 attempts")
    hx = rng.uniform(*config.hand_x)
    hy = rng.uniform(*config.hand_y)
    hz = rng.uniform(*config.hand_z)
    hand = HandState(np.array([hx, hy, hz]), receive_tolerance=config.receive_tolerance)
    scene = SceneState(
        instruments=placed,
        hand=hand,
        gripper_position=np.zeros(3),
        rng_seed=seed,
        auto_clasp_dwell=config.clasp_dwell_steps,
        grasp_radius=config.grasp_radius,
        center_tolerance=config.center_tolerance,
        min_hold_force=config.min_hold_force,
    )
    return scene


def perturb_hand(scene, mode, seed, z_band=None, episode_span=None, table=None):
    """Apply a hand perturbation: resample height now, or schedule one
    mid-episode relocation at a seeded time in the middle 60% of the episode."""
    rng = np.random.default_rng(seed)
    out = scene.copy()
    if mode == "height_change":
        lo, hi = z_band if z_band is not None else (0.10, 0.28)
        out.hand.position = out.hand.position.copy()
        out.hand.position[2] = rng.uniform(lo, hi)
    elif mode == "pose_change":
        span = episode_span if episode_span is not None else 20.0
        t = rng.uniform(0.2 * span, 0.8 * span)
        tx = table if table is not None else ((0.35, 0.62), (-0.22, 0.22))
        nx = rng.uniform(*tx[0])
        ny = rng.uniform(*tx[1])
        nz = rng.uniform(0.12, 0.26)
        out.hand_schedule = sorted(out.hand_schedule + [(t, np.array([nx, ny, nz]))])
    else:
        raise ValueError(f"unknown perturbation mode {mode!r}")
    return out


def attempt_grasp(scene, force):
    """Grasp judge at the moment the gripper closes.

    Success needs the gripper within grasp_radius of a grasp point, the
    mass-center tolerance for center-grasp items, force at or below the
    fragility limit, and force at or above the minimum hold force.
    """
    gp = scene.gripper_position
    best, best_d = None, np.inf
    for inst in scene.instruments:
        if inst.held_by is not None or inst.spec.label in scene.broken:
            continue
        d = float(np.linalg.norm(inst.grasp_point_world() - gp))
        if d < best_d:
            best, best_d = inst, d
    if best is None or best_d > scene.approach_radius:
        return GraspOutcome(NO_TARGET)
    spec = best.spec
    if spec.fragility_limit is not None and force > spec.fragility_limit:
        return GraspOutcome(OBJECT_BROKEN, spec.label)
    if best_d > scene.grasp_radius:
        return GraspOutcome(GRASP_SLIP, spec.label)
    if spec.requires_center_grasp:
        dc = float(np.linalg.norm(best.mass_center_world() - gp))
        if dc > scene.center_tolerance:
            return GraspOutcome(GRASP_SLIP, spec.label)
    if force < scene.min_hold_force:
        return GraspOutcome(GRASP_SLIP, spec.label)
    return GraspOutcome(GRASP_SUCCESS, spec.label)


def judge_handover(scene):
    """Handover judge, evaluated only at a clasp step.

    Success iff a gripper-held instrument's grasp point is within the
    hand's receive tolerance of the palm; the world then transfers the
    instrument to the hand (the gripper release happens in the same step).
    """
    if not scene.hand.clasp:
        return None
    held = scene.held_instrument()
    if held is None:
        return WorldEvent(HANDOVER_MISS, None, scene.time)
    d = float(np.linalg.norm(held.grasp_point_world() - scene.hand.position))
    if d <= scene.hand.receive_tolerance:
        return WorldEvent(HANDOVER_SUCCESS, held.spec.label, scene.time)
    return WorldEvent(HANDOVER_MISS, held.spec.label, scene.time)


def step_world(scene, arm_state, arm, gripper_cmd, dt):
    """Advance the scene by dt under the current arm state and gripper command."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = scene.copy()
    out.time = scene.time + dt
    events = []

    ee = forward_kinematics(arm_state.q, arm, check_limits=False)
    prev_gripper = scene.gripper_position
    out.gripper_position = ee.position.copy()

    # held instruments ride rigidly with the gripper
    held = out.held_instrument()
    if held is not None:
        held.position = held.position + (out.gripper_position - prev_gripper)

    # scheduled hand relocations
    while out.hand_schedule and out.hand_schedule[0][0] <= out.time:
        _, pos = out.hand_schedule.pop(0)
        out.hand.position = np.asarray(pos, dtype=float).copy()

    # gripper command edges
    if gripper_cmd.close and not scene.gripper_closed:
        outcome = attempt_grasp(out, gripper_cmd.force)
        if outcome.kind == GRASP_SUCCESS:
            inst = out.find(outcome.label)
            inst.held_by = "gripper"
            events.append(WorldEvent(GRASP_SUCCESS, outcome.label, out.time))
        elif outcome.kind == OBJECT_BROKEN:
            out.broken.add(outcome.label)
            events.append(WorldEvent(OBJECT_BROKEN, outcome.label, out.time))
        elif outcome.kind == GRASP_SLIP:
            events.append(WorldEvent(GRASP_SLIP, outcome.label, out.time))
    elif not gripper_cmd.close and scene.gripper_closed:
        held = out.held_instrument()
        if held is not None:
            held.held_by = None
            held.position = np.array([held.position[0], held.position[1], 0.0])
    out.gripper_closed = gripper_cmd.close
    out.gripper_force = gripper_cmd.force if gripper_cmd.close else 0.0

    # auto-clasp: the hand clasps once an instrument has been presented
    # in tolerance for the configured dwell
    if out.auto_clasp_dwell is not None and not out.hand.clasp:
        held = out.held_instrument()
        if held is not None:
            d = float(np.linalg.norm(held.grasp_point_world() - out.hand.position))
            if d <= out.hand.receive_tolerance:
                out.present_counter += 1
            else:
                out.present_counter = 0
            if out.present_counter >= out.auto_clasp_dwell:
                out.hand.clasp = True
        else:
            out.present_counter = 0

    # handover judge at the clasp instant; clasp flag is consumed
    if out.hand.clasp:
        verdict = judge_handover(out)
        if verdict is not None:
            events.append(verdict)
            if verdict.kind == HANDOVER_SUCCESS:
                inst = out.find(verdict.subject)
                inst.held_by = "hand"
                out.gripper_closed = False
                out.gripper_force = 0.0
        out.hand.clasp = False
        out.present_counter = 0

    return out, events
