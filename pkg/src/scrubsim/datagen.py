"""Scripted expert policies and the demonstration dataset.

The expert is a phase plan (approach, descend, grasp, lift, present,
release) executed through IK and joint-space interpolation at the action
rate; it is closed-loop on the scene, so a mid-episode hand relocation
replans the presentation target. Demonstrations record commanded joint
targets (the control interface the policy imitates) together with
observations rendered through the zero-error perception path.
"""

import hashlib
import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import transforms as tf
from .kinematics import JointVector, NoConvergence, Pose, forward_kinematics, solve_ik
from .world import GripperCommand

APPROACH_HEIGHT = 0.10
LIFT_HEIGHT = 0.15
PRESENT_OFFSET = 0.03      # grasp point presented this far above the palm
SETTLE_TOL = 0.015         # rad, inf-norm settle test
INTERP_STEPS = 1

FORMAT_VERSION = 1
EPISODE_MAGIC = b"SCRBEP01"


class DatagenError(Exception):
    pass


class ExpertFailure(DatagenError):
    """IK could not reach a phase target; the scene should be resampled."""


class VariationExhausted(DatagenError):
    """Expert success rate fell below 50%: tolerances are misconfigured."""


class IntegrityError(DatagenError):
    pass


def _down_orientation(position):
    yaw = np.arctan2(position[1], position[0])
    q = tf.quat_multiply(tf.quat_from_axis_angle([0, 0, 1], yaw),
                         tf.quat_from_axis_angle([0, 1, 0], np.pi / 2))
    return tf.quat_normalize(q)


def _reach(point, seed_q, arm):
    target = Pose(np.asarray(point, dtype=float), _down_orientation(point))
    try:
        return solve_ik(target, seed_q, arm).q
    except NoConvergence as e:
        raise ExpertFailure(str(e)) from e


class ScriptedExpert:
    """Closed-loop phase-plan policy over privileged scene state."""

    PHASES = ("approach", "descend", "grasp", "lift", "hold",
              "present", "wait", "done")

    def __init__(self, arm, scenario, instruction):
        self.arm = arm
        self.scenario = scenario
        self.instruction = instruction
        self.phase = "approach"
        self.target_q = None
        self.interp = []
        self.grip = 0.0
        self.grasp_steps = 0
        self.planned_palm = None
        self.force = scenario.gripper_force

    def _phase_point(self, scene, inst):
        gp = inst.grasp_point_world()
        if self.phase == "approach":
            return gp + [0, 0, APPROACH_HEIGHT]
        if self.phase in ("descend", "grasp"):
            return gp
        if self.phase in ("lift", "hold"):
            return np.array([gp[0], gp[1], LIFT_HEIGHT])
        if self.phase in ("present", "wait"):
            return scene.hand.position + [0, 0, PRESENT_OFFSET]
        return None

    def act(self, scene, arm_state):
        """Returns (JointVector target with gripper channel, GripperCommand)."""
        inst = scene.find(self.instruction.instrument_label)
        if inst is None or inst.spec.label in scene.broken:
            raise ExpertFailure("target instrument unavailable")
        if inst.held_by == "hand":
            self.phase = "done"

        limit = inst.spec.fragility_limit
        force = min(self.force, limit) if limit is not None else self.force
        if self.target_q is None:
            self._plan(scene, arm_state, inst)

        settled = np.max(np.abs(arm_state.q - self.target_q)) < SETTLE_TOL and not self.interp

        if self.phase == "approach" and settled:
            self.phase = "descend"
            self._plan(scene, arm_state, inst)
        elif self.phase == "descend" and settled:
            # center grasps have a 5 mm tolerance; wait for the Cartesian
            # error to shrink (and re-aim if parked off target) first
            gap = float(np.linalg.norm(scene.gripper_position
                                       - inst.grasp_point_world()))
            need = 0.003 if inst.spec.requires_center_grasp else 0.010
            if gap < need:
                self.phase = "grasp"
                self.grasp_steps = 0
            else:
                self.descend_wait = getattr(self, "descend_wait", 0) + 1
                if self.descend_wait > 10:
                    self.descend_wait = 0
                    self._plan(scene, arm_state, inst)
        elif self.phase == "grasp":
            self.grip = 1.0
            self.grasp_steps += 1
            if inst.held_by == "gripper":
                self.phase = "lift"
                self._plan(scene, arm_state, inst)
            elif self.grasp_steps > 6:
                # slip: reopen and retry from above
                self.grip = 0.0
                self.phase = "approach"
                self._plan(scene, arm_state, inst)
        elif self.phase == "lift" and settled:
            # a bare lift command ends holding the instrument aloft
            self.phase = "hold" if self.instruction.verb == "lift" else "present"
            if self.phase == "present":
                self._plan(scene, arm_state, inst)
        elif self.phase in ("present", "wait"):
            # replan when the hand has moved since the plan was made
            if (self.planned_palm is None
                    or np.linalg.norm(scene.hand.position - self.planned_palm) > 0.01):
                self._plan(scene, arm_state, inst)
            if self.phase == "present" and settled:
                self.phase = "wait"

        if self.phase == "done":
            self.grip = 0.0

        tq = self.target_q if not self.interp else self.interp.pop(0)
        closed = self.grip > 0.5
        return (JointVector(tq, gripper=self.grip),
                GripperCommand(close=closed, force=force))

    def _plan(self, scene, arm_state, inst):
        point = self._phase_point(scene, inst)
        if point is None:
            self.target_q = arm_state.q.copy()
            self.interp = []
            return
        if self.phase in ("present", "wait"):
            # the gripper carries the instrument with a small grasp offset;
            # aim the grasp point, not the gripper frame, at the palm
            offset = inst.grasp_point_world() - scene.gripper_position
            point = point - offset
            self.planned_palm = scene.hand.position.copy()
        new_q = _reach(point, arm_state.q, self.arm)
        start = self.target_q if self.target_q is not None else arm_state.q
        self.target_q = new_q
        # command the waypoint directly and let the PD loop shape the path;
        # per-step micro-interpolation would put consecutive actions within
        # one quantization bin of each other, which a tokenized policy
        # cannot distinguish from holding still
        alphas = np.linspace(1.0 / INTERP_STEPS, 1.0, INTERP_STEPS)[:-1]
        self.interp = [start + a * (new_q - start) for a in alphas]


# ---------------------------------------------------------------------------
# dataset containers and serialization

@dataclass
class StepRecord:
    measured_q: np.ndarray       # (dof,) float32
    action: np.ndarray           # (dof+1,) float32, joint targets + gripper
    gripper_close: bool
    gripper_force: float
    image_png: bytes | None      # zlib-compressed uint8 HxWx3, row-major
    target_mask_rle: list | None
    hand_mask_rle: list | None


@dataclass
class Demonstration:
    scenario_name: str
    seed: int
    instruction_text: str
    verb: str
    instrument_label: str
    steps: list = field(default_factory=list)   # StepRecord
    events: list = field(default_factory=list)  # (step, kind, subject)
    success: bool = False


@dataclass
class DatasetManifest:
    count: int
    action_lo: list
    action_hi: list
    vocabulary_file: str
    variation: dict
    format_version: int = FORMAT_VERSION
    episode_checksums: dict = field(default_factory=dict)


@dataclass
class Dataset:
    manifest: DatasetManifest
    demos: list


def compress_image(pixels):
    """uint8-quantized, zlib level 6 (fixed, for byte determinism)."""
    arr = np.clip(np.asarray(pixels) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    return zlib.compress(arr.tobytes(), 6)


def decompress_image(blob, shape=(224, 224, 3)):
    arr = np.frombuffer(zlib.decompress(blob), dtype=np.uint8).reshape(shape)
    return arr.astype(float) / 255.0


def _pack_episode(demo):
    header = {
        "scenario": demo.scenario_name,
        "seed": demo.seed,
        "instruction": demo.instruction_text,
        "verb": demo.verb,
        "label": demo.instrument_label,
        "steps": len(demo.steps),
        "events": [[s, k, sub] for s, k, sub in demo.events],
        "success": demo.success,
    }
    hdr = json.dumps(header, sort_keys=True).encode()
    out = [EPISODE_MAGIC, struct.pack("<I", len(hdr)), hdr]
    for st in demo.steps:
        q = np.asarray(st.measured_q, dtype="<f4").tobytes()
        a = np.asarray(st.action, dtype="<f4").tobytes()
        out.append(struct.pack("<BB", len(st.measured_q), len(st.action)))
        out += [q, a]
        out.append(struct.pack("<Bf", int(st.gripper_close), st.gripper_force))
        img = st.image_png or b""
        out.append(struct.pack("<I", len(img)))
        out.append(img)
        for rle in (st.target_mask_rle, st.hand_mask_rle):
            runs = rle or []
            out.append(struct.pack("<I", len(runs)))
            out.append(np.asarray(runs, dtype="<u4").tobytes())
    return b"".join(out)


def _unpack_episode(blob):
    if blob[:8] != EPISODE_MAGIC:
        raise IntegrityError("bad episode magic")
    (hlen,) = struct.unpack_from("<I", blob, 8)
    header = json.loads(blob[12:12 + hlen].decode())
    off = 12 + hlen
    demo = Demonstration(header["scenario"], header["seed"], header["instruction"],
                         header["verb"], header["label"],
                         events=[tuple(e) for e in header["events"]],
                         success=header["success"])
    try:
        for _ in range(header["steps"]):
            nq, na = struct.unpack_from("<BB", blob, off)
            off += 2
            q = np.frombuffer(blob, dtype="<f4", count=nq, offset=off).copy()
            off += 4 * nq
            a = np.frombuffer(blob, dtype="<f4", count=na, offset=off).copy()
            off += 4 * na
            closed, force = struct.unpack_from("<Bf", blob, off)
            off += 5
            (ilen,) = struct.unpack_from("<I", blob, off)
            off += 4
            img = blob[off:off + ilen] or None
            if ilen and len(img) < ilen:
                raise IntegrityError("truncated image record")
            off += ilen
            rles = []
            for _ in range(2):
                (rlen,) = struct.unpack_from("<I", blob, off)
                off += 4
                runs = np.frombuffer(blob, dtype="<u4", count=rlen, offset=off).tolist()
                off += 4 * rlen
                rles.append(runs or None)
            demo.steps.append(StepRecord(q, a, bool(closed), force, img, rles[0], rles[1]))
    except struct.error as e:
        raise IntegrityError(f"truncated episode file: {e}") from e
    return demo


def write_dataset(dataset, path):
    """Directory of per-episode binaries plus a human-readable manifest.

    Episode writes are atomic (temp file + rename); the manifest carries a
    sha256 per episode so truncation is detected on read."""
    os.makedirs(path, exist_ok=True)
    manifest = dataset.manifest
    lo = np.asarray(manifest.action_lo)
    hi = np.asarray(manifest.action_hi)
    for demo in dataset.demos:
        for step in demo.steps:
            if np.any(step.action < lo - 1e-6) or np.any(step.action > hi + 1e-6):
                raise IntegrityError("recorded action outside manifest ranges")
    manifest.episode_checksums = {}
    for i, demo in enumerate(dataset.demos):
        name = f"episode_{i:05d}.bin"
        blob = _pack_episode(demo)
        manifest.episode_checksums[name] = hashlib.sha256(blob).hexdigest()
        tmp = os.path.join(path, name + ".tmp")
        with open(tmp, "wb") as f:
            f.write(blob)
        os.replace(tmp, os.path.join(path, name))
    manifest.count = len(dataset.demos)
    doc = {
        "format_version": manifest.format_version,
        "count": manifest.count,
        "action_lo": [float(v) for v in manifest.action_lo],
        "action_hi": [float(v) for v in manifest.action_hi],
        "vocabulary_file": manifest.vocabulary_file,
        "variation": manifest.variation,
        "episode_checksums": manifest.episode_checksums,
    }
    import yaml
    with open(os.path.join(path, "manifest.yaml"), "w") as f:
        yaml.safe_dump(doc, f, sort_keys=True)


def read_dataset(path, verify=True):
    import yaml
    with open(os.path.join(path, "manifest.yaml")) as f:
        doc = yaml.safe_load(f)
    if doc["format_version"] != FORMAT_VERSION:
        raise IntegrityError(f"unsupported format version {doc['format_version']}")
    manifest = DatasetManifest(doc["count"], doc["action_lo"], doc["action_hi"],
                               doc["vocabulary_file"], doc.get("variation", {}),
                               doc["format_version"], doc["episode_checksums"])
    names = sorted(manifest.episode_checksums)
    present = sorted(n for n in os.listdir(path) if n.endswith(".bin"))
    if names != present or len(names) != manifest.count:
        raise IntegrityError("manifest count does not match episode files present")
    demos = []
    for name in names:
        with open(os.path.join(path, name), "rb") as f:
            blob = f.read()
        if verify and hashlib.sha256(blob).hexdigest() != manifest.episode_checksums[name]:
            raise IntegrityError(f"checksum failure for {name}")
        demos.append(_unpack_episode(blob))
    return Dataset(manifest, demos)


# ---------------------------------------------------------------------------
# vocabulary and demonstration collection

INSTRUCTION_WORDS = (
    "give", "me", "lift", "the",
    "7mm", "5mm", "10mm", "clamp", "straight", "curved", "scissors",
    "needle", "driver", "forceps", "ping-pong", "ball",
)


def default_lexicon():
    """Reserved instruction-word ids; id 0 stays the unknown-word slot."""
    return {word: i + 1 for i, word in enumerate(INSTRUCTION_WORDS)}


def default_vocabulary():
    """1024-id table whose 256 least-used ids carry the action bins.

    With a flat frequency table the tie-break selects the top ids, so
    action tokens are 768..1023 and the low ids stay free for words.
    """
    from . import codec
    return codec.build_vocab(1024, np.zeros(1024, dtype=np.int64),
                             lexemes=default_lexicon())


def instruction_token_ids(text, vocab):
    return np.asarray([vocab.lexemes.get(w, 0) for w in text.lower().split()],
                      dtype=np.int64)


def collect_task_demos(count, task, base_seed, exec_noise=0.0, arm=None,
                       gains=None, progress=None):
    """Run the scripted expert over seeded episodes until `count` successes.

    Failed episodes are dropped. If fewer than half of the attempts
    succeed the scenario is considered unreachable for this expert and
    VariationExhausted is raised rather than silently under-filling.
    """
    from . import harness
    handle = harness.ExpertHandle(
        lambda a, scenario, instr: ScriptedExpert(a, scenario, instr))
    demos = []
    attempts = 0
    seed = base_seed
    while len(demos) < count:
        result, demo = harness.run_episode(handle, task, seed, arm=arm,
                                           gains=gains, record=True,
                                           exec_noise=exec_noise)
        attempts += 1
        seed += 1
        if result.success:
            demos.append(demo)
        if progress:
            progress(attempts, len(demos), result)
        if attempts >= 2 * count and len(demos) < attempts // 2:
            raise VariationExhausted(
                f"only {len(demos)}/{attempts} expert episodes succeeded")
    return demos


@dataclass
class VariationConfig:
    """Which scenario families the demonstrations draw from, and how.

    Placement, camera center, and hand pose vary per episode through the
    seed; exec_noise perturbs the commanded joint targets so recorded
    trajectories include small corrections.
    """
    tasks: tuple = ("on_table", "lift", "height_change", "handover_single")
    exec_noise: float = 0.0
    seed_stride: int = 100000

    def to_dict(self):
        return {"tasks": list(self.tasks), "exec_noise": self.exec_noise,
                "seed_stride": self.seed_stride}

    @staticmethod
    def from_dict(doc):
        return VariationConfig(tuple(doc["tasks"]), doc["exec_noise"],
                               doc["seed_stride"])


def collect_demos(n, variation=None, seed=0, arm=None, gains=None,
                  progress=None):
    """Build the demonstration dataset: `n` successful expert episodes
    spread round-robin over the variation's scenario families."""
    from . import configs, harness
    if n < 1:
        raise ValueError("need at least one demonstration")
    variation = variation if variation is not None else VariationConfig()
    arm = arm if arm is not None else configs.default_arm()
    gains = gains if gains is not None else configs.default_gains(arm)
    shares = [n // len(variation.tasks)] * len(variation.tasks)
    for i in range(n - sum(shares)):
        shares[i] += 1
    demos = []
    for i, name in enumerate(variation.tasks):
        if shares[i] == 0:
            continue
        task = harness.TaskSpec.for_name(name)
        demos.extend(collect_task_demos(
            shares[i], task, seed + (i + 1) * variation.seed_stride,
            exec_noise=variation.exec_noise, arm=arm, gains=gains,
            progress=progress))
    ranges = configs.action_ranges(arm)
    manifest = DatasetManifest(len(demos), [float(v) for v in ranges.lo],
                               [float(v) for v in ranges.hi],
                               "vocabulary.txt", variation.to_dict(),
                               FORMAT_VERSION, {})
    return Dataset(manifest, demos)


# ---------------------------------------------------------------------------
# training samples (lazy: images decode and encode per access)

def build_samples(dataset, vocab, ranges, fusion_params, history_blocks=4,
                  stride=1):
    """Per-step imitation samples from stored demonstrations.

    Each sample is a zero-argument callable producing an EpisodeContext
    with target_ids set; observations are decompressed and encoded on
    demand so the pool never holds dense embeddings for every step.
    """
    from . import codec, fusion, perception, policy
    from .configs import HOME_Q

    lo, hi = np.asarray(ranges.lo), np.asarray(ranges.hi)

    def tok(vec):
        return codec.tokenize_action(
            codec.ContinuousAction(np.clip(vec, lo, hi)), ranges, vocab).ids

    def make(demo, t):
        def build():
            step = demo.steps[t]
            instr_ids = instruction_token_ids(demo.instruction_text, vocab)
            img = perception.Image(decompress_image(step.image_png))
            tmask = perception.Mask(perception.rle_decode(step.target_mask_rle),
                                    "target_instrument")
            hmask = perception.Mask(perception.rle_decode(step.hand_mask_rle),
                                    "hand")
            obs = fusion.encode_observation(img, tmask, hmask, fusion_params).tokens
            if t == 0:
                proprio = np.append(HOME_Q, 0.0)
            else:
                prev = demo.steps[t - 1]
                proprio = np.append(prev.measured_q,
                                    1.0 if prev.gripper_close else 0.0)
            history = [tok(demo.steps[k].action)
                       for k in range(max(0, t - history_blocks), t)]
            return policy.EpisodeContext(
                instruction_ids=instr_ids,
                obs_embeddings=obs,
                proprio_ids=tok(proprio),
                history=history,
                target_ids=tok(demo.steps[t].action),
            )
        return build

    samples = []
    for demo in dataset.demos:
        for t in range(0, len(demo.steps), stride):
            if demo.steps[t].image_png is None:
                continue
            samples.append(make(demo, t))
    return samples
