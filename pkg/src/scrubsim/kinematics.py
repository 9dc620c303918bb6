"""Serial-arm kinematics and the two-rate joint control stack.

The arm is a chain of revolute joints. Each link carries a fixed rigid
transform followed by a rotation about the joint axis; the end-effector
frame is the chain product right-multiplied by the gripper offset.
Control runs at two rates: 30 Hz joint targets, with a higher-rate PD
inner loop integrating unit-inertia double-integrator joint dynamics.
"""

from dataclasses import dataclass, field

import numpy as np

from . import transforms as tf


class KinematicsError(Exception):
    pass


class DimensionMismatch(KinematicsError):
    pass


class JointLimitViolation(KinematicsError):
    pass


class NoConvergence(KinematicsError):
    """Inverse kinematics failed to reach the target within max_iter."""


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion, wxyz

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise DimensionMismatch("pose needs a 3-vector and a quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("orientation quaternion is not unit norm")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    def compose(self, other):
        return Pose(self.position + tf.quat_rotate(self.orientation, other.position),
                    tf.quat_normalize(tf.quat_multiply(self.orientation, other.orientation)))

    @staticmethod
    def identity():
        return Pose(np.zeros(3), tf.quat_identity())


@dataclass(frozen=True)
class Link:
    """Fixed transform to the joint origin, then rotation about `axis`."""
    axis: np.ndarray
    transform: Pose
    lower: float
    upper: float

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        n = np.linalg.norm(a)
        if n < 1e-12:
            raise ValueError("joint axis must be nonzero")
        object.__setattr__(self, "axis", a / n)
        if not self.lower < self.upper:
            raise ValueError("joint limits must satisfy lower < upper")
        R = tf.quat_to_matrix(self.transform.orientation)
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9:
            raise ValueError("link rotation is not orthonormal")


@dataclass(frozen=True)
class ArmModel:
    links: tuple
    gripper_offset: Pose = field(default_factory=Pose.identity)

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if self.dof < 2:
            raise ValueError("arm needs at least 2 joints")

    @property
    def dof(self):
        return len(self.links)

    @property
    def lower_limits(self):
        return np.array([l.lower for l in self.links])

    @property
    def upper_limits(self):
        return np.array([l.upper for l in self.links])

    def check_joints(self, q, enforce_limits=True):
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dof,):
            raise DimensionMismatch(f"expected {self.dof} joint angles, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("joint angles must be finite")
        if enforce_limits:
            lo, hi = self.lower_limits, self.upper_limits
            if np.any(q < lo - 1e-12) or np.any(q > hi + 1e-12):
                raise JointLimitViolation("joint angles outside limits")
        return q


@dataclass(frozen=True)
class JointVector:
    """Joint-angle target; optional gripper channel in [0,1] (0 open, 1 closed)."""
    q: np.ndarray
    gripper: float | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if not np.all(np.isfinite(q)):
            raise ValueError("joint target must be finite")
        object.__setattr__(self, "q", q)
        if self.gripper is not None and not (-1e-9 <= self.gripper <= 1 + 1e-9):
            raise ValueError("gripper channel must lie in [0,1]")


@dataclass(frozen=True)
class JointState:
    q: np.ndarray
    qdot: np.ndarray
    gripper_force: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qd = np.asarray(self.qdot, dtype=float)
        if q.shape != qd.shape:
            raise DimensionMismatch("q and qdot lengths differ")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
            raise KinematicsError("non-finite joint state")
        if self.gripper_force < 0:
            raise ValueError("gripper force must be >= 0")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qd)


@dataclass(frozen=True)
class PDGains:
    kp: np.ndarray
    kd: np.ndarray
    inner_rate: int = 300
    outer_rate: int = 30

    def __post_init__(self):
        kp = np.atleast_1d(np.asarray(self.kp, dtype=float))
        kd = np.atleast_1d(np.asarray(self.kd, dtype=float))
        if kp.shape != kd.shape:
            raise DimensionMismatch("kp and kd lengths differ")
        if np.any(kp <= 0) or np.any(kd < 0):
            raise ValueError("need kp > 0 and kd >= 0")
        if self.inner_rate % self.outer_rate != 0:
            raise ValueError("inner_rate must be an integer multiple of outer_rate")
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "kd", kd)

    @property
    def substeps(self):
        return self.inner_rate // self.outer_rate


def _chain_frames(q, arm):
    """World pose of every joint frame plus the end-effector frame."""
    frames = []
    pose = Pose.identity()
    for qi, link in zip(q, arm.links):
        pose = pose.compose(link.transform)
        frames.append(pose)
        pose = pose.compose(Pose(np.zeros(3), tf.quat_from_axis_angle(link.axis, qi)))
    return frames, pose.compose(arm.gripper_offset)


def forward_kinematics(q, arm, check_limits=True):
    if isinstance(q, JointVector):
        q = q.q
    q = arm.check_joints(q, enforce_limits=check_limits)
    _, ee = _chain_frames(q, arm)
    return ee


def jacobian(q, arm, check_limits=True):
    """Geometric Jacobian (6 x dof): rows are [v; omega] of the end effector."""
    if isinstance(q, JointVector):
        q = q.q
    q = arm.check_joints(q, enforce_limits=check_limits)
    frames, ee = _chain_frames(q, arm)
    J = np.zeros((6, arm.dof))
    for i, (frame, link) in enumerate(zip(frames, arm.links)):
        axis_w = tf.quat_rotate(frame.orientation, link.axis)
        J[:3, i] = np.cross(axis_w, ee.position - frame.position)
        J[3:, i] = axis_w
    return J


def solve_ik(target, seed, arm, pos_tol=1e-3, rot_tol=1e-2, max_iter=200, damping=0.05):
    """Damped-least-squares IK; every iterate is clamped to the joint limits.

    Raises NoConvergence when the pose error is still above tolerance after
    max_iter iterations (treat the target as unreachable).
    """
    if isinstance(seed, JointVector):
        seed = seed.q
    q = arm.check_joints(seed).copy()
    if pos_tol <= 0 or rot_tol <= 0:
        raise ValueError("tolerances must be positive")
    lo, hi = arm.lower_limits, arm.upper_limits
    lam2 = damping * damping
    for _ in range(max_iter):
        ee = forward_kinematics(q, arm)
        e_pos = target.position - ee.position
        e_rot = tf.rotation_error_vector(target.orientation, ee.orientation)
        if np.linalg.norm(e_pos) <= pos_tol and np.linalg.norm(e_rot) <= rot_tol:
            return JointVector(q)
        err = np.concatenate([e_pos, e_rot])
        J = jacobian(q, arm)
        dq = J.T @ np.linalg.solve(J @ J.T + lam2 * np.eye(6), err)
        step = np.linalg.norm(dq)
        if step > 0.5:
            dq *= 0.5 / step
        q = np.clip(q + dq, lo, hi)
    ee = forward_kinematics(q, arm)
    if (np.linalg.norm(target.position - ee.position) <= pos_tol
            and tf.rotation_error(target.orientation, ee.orientation) <= rot_tol):
        return JointVector(q)
    raise NoConvergence("IK did not reach the target pose")


def pd_step(state, target, gains, dt, arm=None):
    """One inner-loop substep: PD command on a unit-inertia double integrator.

    qdot' = qdot + (kp e - kd qdot) dt, q' = q + qdot' dt (semi-implicit
    Euler). When `arm` is given, q' is clamped to the limits and the
    velocity of any joint pinned at a stop is zeroed.
    """
    tq = target.q if isinstance(target, JointVector) else np.asarray(target, dtype=float)
    if tq.shape != state.q.shape:
        raise DimensionMismatch("target and state lengths differ")
    cmd = gains.kp * (tq - state.q) - gains.kd * state.qdot
    qdot = state.qdot + cmd * dt
    q = state.q + qdot * dt
    if arm is not None:
        lo, hi = arm.lower_limits, arm.upper_limits
        clipped = np.clip(q, lo, hi)
        qdot = np.where(clipped != q, 0.0, qdot)
        q = clipped
    return JointState(q, qdot, state.gripper_force)


def run_control_interval(state, target, gains, arm=None):
    """Advance one 30 Hz action interval: inner_rate/outer_rate PD substeps."""
    dt = 1.0 / gains.inner_rate
    for _ in range(gains.substeps):
        state = pd_step(state, target, gains, dt, arm=arm)
    return state


def default_gains(dof, kp=100.0, kd=20.0, inner_rate=300, outer_rate=30):
    return PDGains(np.full(dof, kp), np.full(dof, kd), inner_rate, outer_rate)
