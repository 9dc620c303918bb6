"""Episode runner and task-suite evaluator.

One episode: parse the command, perceive, encode, infer an action,
run one 30 Hz control interval, step the world; repeat until a terminal
event or the timeout. The evaluator runs seeded trials per task and
reports success rates with binomial confidence intervals.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import codec, configs, fusion, perception, policy as policy_mod, world
from .datagen import (Demonstration, StepRecord, compress_image)
from .kinematics import (JointState, JointVector, forward_kinematics,
                         run_control_interval)
from .perception import (DetectionMiss, Instruction, rle_encode)

OUTCOMES = ("success", "wrong_object", "bad_grasp", "handover_miss",
            "object_broken", "timeout", "perception_failure")

LIFT_SUCCESS_HEIGHT = 0.10
LIFT_HOLD_STEPS = 15
PERCEPTION_FAILURE_STEPS = 45


@dataclass(frozen=True)
class TaskSpec:
    name: str
    scenario: configs.ScenarioConfig
    trials: int = 20

    @staticmethod
    def for_name(name, trials=20):
        return TaskSpec(name, configs.scenario_for_task(name), trials)


@dataclass
class EpisodeResult:
    task: str
    seed: int
    outcome: str
    steps: int
    latencies: list = field(default_factory=list)
    events: list = field(default_factory=list)   # (step, kind, subject)

    @property
    def success(self):
        return self.outcome == "success"


@dataclass
class SuccessTable:
    rows: list   # (task, successes, trials, rate, ci_low, ci_high)

    def to_text(self):
        lines = [f"{'task':<20} {'success':>8} {'trials':>7} {'rate':>7}  95% CI"]
        for task, s, n, rate, lo, hi in self.rows:
            lines.append(f"{task:<20} {s:>8} {n:>7} {rate:>6.1%}  [{lo:.2f}, {hi:.2f}]")
        return "\n".join(lines)

    def to_dict(self):
        return {task: {"successes": s, "trials": n, "rate": rate,
                       "ci": [lo, hi]}
                for task, s, n, rate, lo, hi in self.rows}


def _wilson_ci(successes, trials, z=1.96):
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(center - half, 0.0), min(center + half, 1.0)


# ---------------------------------------------------------------------------
# policy handles

class ExpertHandle:
    """Wraps a privileged scripted expert as a policy handle."""
    needs_perception = False

    def __init__(self, make_expert):
        self._make = make_expert
        self._expert = None

    def reset(self, scenario, instruction, arm):
        self._expert = self._make(arm, scenario, instruction)

    def act(self, scene, arm_state, observation):
        return self._expert.act(scene, arm_state)


class ReplayHandle:
    """Replays a recorded action stream (optionally through a filter)."""
    needs_perception = False

    def __init__(self, actions, gripper, action_filter=None):
        self.actions = actions
        self.gripper = gripper
        self.filter = action_filter
        self.t = 0

    def reset(self, scenario, instruction, arm):
        self.t = 0

    def act(self, scene, arm_state, observation):
        i = min(self.t, len(self.actions) - 1)
        self.t += 1
        a = np.asarray(self.actions[i], dtype=float)
        if self.filter is not None:
            a = self.filter(a)
        closed, force = self.gripper[i]
        return (JointVector(a[:-1], gripper=float(a[-1])),
                world.GripperCommand(close=bool(closed), force=float(force)))


class ZeroActionHandle:
    """Holds the arm at home with the gripper open (degenerate baseline)."""
    needs_perception = False

    def __init__(self, home_q):
        self.home_q = np.asarray(home_q, dtype=float)

    def reset(self, scenario, instruction, arm):
        pass

    def act(self, scene, arm_state, observation):
        return (JointVector(self.home_q, gripper=0.0),
                world.GripperCommand(close=False, force=0.0))


class NeuralHandle:
    """Tokenized-action policy handle: perceive, encode, decode one block."""
    needs_perception = True

    def __init__(self, model, adapters, fusion_params, vocab, ranges,
                 history_blocks=4, gripper_force=2.0):
        self.model = model
        self.adapters = adapters
        self.fusion_params = fusion_params
        self.vocab = vocab
        self.ranges = ranges
        self.history_blocks = history_blocks
        self.gripper_force = gripper_force
        self.instruction_ids = None
        self.history = []
        self.last_obs = None
        self.latencies = []

    def reset(self, scenario, instruction, arm):
        self.instruction_ids = codec_instruction_ids(instruction.raw_text, self.vocab)
        self.history = []
        self.last_obs = None
        self.latencies = []
        self.gripper_force = scenario.gripper_force

    def act(self, scene, arm_state, observation):
        if observation is not None:
            self.last_obs = observation
        if self.last_obs is None:
            return (JointVector(arm_state.q.copy(), gripper=0.0),
                    world.GripperCommand(close=False, force=0.0))
        proprio = np.append(arm_state.q, 1.0 if scene.gripper_closed else 0.0)
        proprio_ids = codec.tokenize_action(
            codec.ContinuousAction(np.clip(proprio, self.ranges.lo, self.ranges.hi)),
            self.ranges, self.vocab).ids
        ctx = policy_mod.EpisodeContext(
            instruction_ids=self.instruction_ids,
            obs_embeddings=self.last_obs,
            proprio_ids=proprio_ids,
            history=list(self.history),
        )
        action, tokens, latency = policy_mod.infer_action(
            self.model, self.adapters, ctx, self.vocab, self.ranges)
        self.latencies.append(latency)
        self.history = (self.history + [tokens.ids])[-self.history_blocks:]
        vals = action.values
        grip = float(vals[-1])
        return (JointVector(vals[:-1], gripper=grip),
                world.GripperCommand(close=grip > 0.5, force=self.gripper_force))


def codec_instruction_ids(text, vocab):
    """Map instruction words to reserved lexeme ids (0 = unknown)."""
    ids = []
    for word in text.lower().split():
        ids.append(vocab.lexemes.get(word, 0))
    return np.asarray(ids, dtype=np.int64)


# ---------------------------------------------------------------------------
# episode loop

def sample_instruction(scenario, seed):
    rng = np.random.default_rng([seed, 7001])
    label = scenario.target_pool[rng.integers(len(scenario.target_pool))]
    text = f"give me {label}" if scenario.verb == "give" else f"lift {label}"
    return Instruction(scenario.verb, label, text)


def episode_camera(scenario, seed):
    rng = np.random.default_rng([seed, 7002])
    cam = configs.CameraConfig(
        center=scenario.camera.center + rng.uniform(-scenario.camera_jitter,
                                                    scenario.camera_jitter, 3),
        focal_px=scenario.camera.focal_px,
        noise=scenario.camera.noise,
        seed=scenario.camera.seed,
    )
    return cam


def run_episode(handle, task, seed, arm=None, gains=None, fusion_params=None,
                record=False, exec_noise=0.0):
    """Run one seeded episode; returns (EpisodeResult, Demonstration|None)."""
    scenario = task.scenario if isinstance(task, TaskSpec) else task
    task_name = task.name if isinstance(task, TaskSpec) else scenario.name
    arm = arm if arm is not None else configs.default_arm()
    gains = gains if gains is not None else configs.default_gains(arm)
    errors = perception.ErrorModel(**vars(scenario.errors))
    err_rng = np.random.default_rng([seed, 7003])
    noise_rng = np.random.default_rng([seed, 7004])

    instruction = sample_instruction(scenario, seed)
    try:
        instruction = perception.parse_command(
            instruction.raw_text,
            [s.label for s in scenario.instruments], errors, err_rng)
    except perception.PerceptionError:
        pass  # keep the sampled instruction; parser errors count downstream

    scene = world.spawn_scene(scenario, seed)
    if scenario.perturbation == "height_change":
        scene = world.perturb_hand(scene, "height_change", seed,
                                   z_band=scenario.hand_z_band)
    elif scenario.perturbation == "pose_change":
        scene = world.perturb_hand(scene, "pose_change", seed,
                                   episode_span=scenario.timeout,
                                   table=(scenario.hand_x, scenario.hand_y))
    camera = episode_camera(scenario, seed)

    state = JointState(configs.HOME_Q.copy(), np.zeros(arm.dof))
    scene.gripper_position = forward_kinematics(state.q, arm).position.copy()

    handle.reset(scenario, instruction, arm)
    need_obs = handle.needs_perception or record
    n_steps = int(round(scenario.timeout * configs.CONTROL_RATE))
    dt = 1.0 / configs.CONTROL_RATE

    demo = Demonstration(scenario.name, seed, instruction.raw_text,
                         instruction.verb, instruction.instrument_label) if record else None
    result = EpisodeResult(task_name, seed, "timeout", 0)
    miss_streak = 0
    slipped = False
    lift_counter = 0

    for step in range(n_steps):
        observation = None
        obs_record = None
        if need_obs:
            img = perception.render(scene, camera)
            try:
                boxes = perception.detect(scene, camera, instruction, errors, err_rng)
                masks = perception.segment(scene, camera, instruction, boxes,
                                           errors, err_rng)
                miss_streak = 0
                if handle.needs_perception:
                    emb = fusion.encode_observation(img, masks[0], masks[1],
                                                    fusion_params).tokens
                    observation = emb
                obs_record = (img, masks)
            except (DetectionMiss, perception.EmptyMask, perception.NoSuchTarget):
                miss_streak += 1
                if miss_streak >= PERCEPTION_FAILURE_STEPS:
                    result.outcome = "perception_failure"
                    result.steps = step
                    break

        try:
            target, grip_cmd = handle.act(scene, state, observation)
        except Exception:
            # a policy that cannot act any more simply runs out the clock
            result.outcome = "timeout"
            result.steps = step
            result.events.append((step, world.TIMEOUT, None))
            break
        exec_q = target.q
        if exec_noise > 0:
            exec_q = np.clip(exec_q + noise_rng.normal(0.0, exec_noise, arm.dof),
                             arm.lower_limits, arm.upper_limits)
        state = run_control_interval(state, JointVector(exec_q), gains, arm=arm)
        scene, events = world.step_world(scene, state, arm, grip_cmd, dt)

        if record:
            img, masks = obs_record if obs_record else (None, None)
            demo.steps.append(StepRecord(
                measured_q=state.q.astype(np.float32),
                action=np.append(target.q, target.gripper or 0.0).astype(np.float32),
                gripper_close=grip_cmd.close,
                gripper_force=grip_cmd.force,
                image_png=compress_image(img.pixels) if img else None,
                target_mask_rle=rle_encode(masks[0].bitmap) if masks else None,
                hand_mask_rle=rle_encode(masks[1].bitmap) if masks else None,
            ))
            for ev in events:
                demo.events.append((step, ev.kind, ev.subject))
        for ev in events:
            result.events.append((step, ev.kind, ev.subject))

        terminal = _classify(events, instruction)
        if terminal is None and instruction.verb == "lift":
            held = scene.held_instrument()
            if held is not None and held.grasp_point_world()[2] >= LIFT_SUCCESS_HEIGHT:
                lift_counter += 1
                if lift_counter >= LIFT_HOLD_STEPS:
                    terminal = ("success" if held.spec.label == instruction.instrument_label
                                else "wrong_object")
            else:
                lift_counter = 0
        if any(ev.kind == world.GRASP_SLIP for ev in events):
            slipped = True
        if terminal is not None:
            result.outcome = terminal
            result.steps = step + 1
            break
    else:
        result.steps = n_steps
        result.outcome = "bad_grasp" if slipped else "timeout"
        result.events.append((n_steps, world.TIMEOUT, None))

    if hasattr(handle, "latencies"):
        result.latencies = list(handle.latencies)
    if record:
        demo.success = result.outcome == "success"
    return result, demo


def _classify(events, instruction):
    for ev in events:
        if ev.kind == world.HANDOVER_SUCCESS:
            return "success" if ev.subject == instruction.instrument_label else "wrong_object"
        if ev.kind == world.HANDOVER_MISS:
            return "handover_miss"
        if ev.kind == world.OBJECT_BROKEN:
            return "object_broken"
        if ev.kind == world.GRASP_SUCCESS and ev.subject != instruction.instrument_label:
            return "wrong_object"
    return None


def evaluate(handle, suite, base_seed, arm=None, gains=None, fusion_params=None,
             progress=None):
    """Run every task in the suite; seeds are base_seed..base_seed+trials-1."""
    rows = []
    logs = []
    for task in suite:
        successes = 0
        for k in range(task.trials):
            res, _ = run_episode(handle, task, base_seed + k, arm=arm, gains=gains,
                                 fusion_params=fusion_params)
            logs.append(res)
            successes += int(res.success)
            if progress:
                progress(task.name, k, res)
        lo, hi = _wilson_ci(successes, task.trials)
        rows.append((task.name, successes, task.trials,
                     successes / task.trials, lo, hi))
    return SuccessTable(rows), logs


def latency_p95(results):
    lat = [l for r in results for l in r.latencies]
    return float(np.percentile(lat, 95)) if lat else 0.0
