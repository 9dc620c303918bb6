"""Single-session interactive service for the operator console.

Wire format: every message is one text frame "<decimal length>:<payload>"
where the payload is a JSON object and the length counts the payload's
UTF-8 bytes. The carrier is a WebSocket (one frame per message).

Handshake: on connect the server sends {"type": "hello", "version": 1};
the client must answer with the same type/version before anything else.

Client -> server (all carry a client-chosen integer "seq"):
    {"type": "instruction", "text": str, "seq": int}
    {"type": "move_hand", "pose": {"x", "y", "z"}, "seq": int}
    {"type": "clasp", "seq": int}
    {"type": "reset", "seed": int?, "seq": int}
    {"type": "pause", "seq": int}           # toggles

Server -> client:
    {"type": "ack", "seq": int}
    {"type": "error", "reason": str, "seq": int?}
    {"type": "state", "time", "running", "paused", "joints", "links",
     "gripper":
     {"position", "closed"}, "hand": {"position", "clasp"}, "instruments":
     [{"label", "position", "yaw", "held_by", "broken"}], "masks":
     {"target": rle, "hand": rle}?, "events": [{"kind", "subject"}],
     "outcome": str?}
"""

import asyncio
import json

import numpy as np

from . import configs, perception, world
from .kinematics import JointState, forward_kinematics, run_control_interval

PROTOCOL_VERSION = 1
SNAPSHOT_HZ = 30.0


class ProtocolError(Exception):
    pass


def encode_frame(obj):
    payload = json.dumps(obj, separators=(",", ":"), sort_keys=True)
    return f"{len(payload.encode('utf-8'))}:{payload}"


def decode_frame(frame):
    head, sep, payload = frame.partition(":")
    if not sep or not head.isdigit():
        raise ProtocolError("frame is not length-prefixed")
    if int(head) != len(payload.encode("utf-8")):
        raise ProtocolError("frame length mismatch")
    try:
        obj = json.loads(payload)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"payload is not valid JSON: {e}") from e
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("payload must be an object with a 'type'")
    return obj


class Session:
    """One interactive episode loop, transport-agnostic.

    `handle_message` consumes a decoded client message and returns reply
    frames; `tick` advances simulated time one control step and returns a
    state frame. A policy handle factory supplies the arm controller once
    an instruction arrives.
    """

    def __init__(self, scenario, handle_factory, seed=0, arm=None, gains=None):
        self.scenario = scenario
        self.handle_factory = handle_factory
        self.arm = arm if arm is not None else configs.default_arm()
        self.gains = gains if gains is not None else configs.default_gains(self.arm)
        self.include_masks = True
        self._spawn(seed)

    def _spawn(self, seed):
        self.seed = seed
        self.scene = world.spawn_scene(self.scenario, seed)
        self.state = JointState(configs.HOME_Q.copy(), np.zeros(self.arm.dof))
        self.scene.gripper_position = forward_kinematics(
            self.state.q, self.arm).position.copy()
        self.camera = configs.CameraConfig(
            center=self.scenario.camera.center,
            focal_px=self.scenario.camera.focal_px,
            noise=self.scenario.camera.noise,
            seed=self.scenario.camera.seed)
        self.instruction = None
        self.handle = None
        self.paused = False
        self.outcome = None
        self.pending_events = []

    # -- message handling ---------------------------------------------------

    def handle_message(self, msg):
        seq = msg.get("seq")
        if not isinstance(seq, int):
            return [{"type": "error", "reason": "missing integer seq"}]
        kind = msg["type"]
        try:
            if kind == "instruction":
                self._on_instruction(str(msg.get("text", "")))
            elif kind == "move_hand":
                pose = msg.get("pose") or {}
                p = np.array([float(pose["x"]), float(pose["y"]),
                              float(pose["z"])])
                self.scene.hand.position = p
            elif kind == "clasp":
                self.scene.hand.clasp = True
            elif kind == "reset":
                self._spawn(int(msg.get("seed", self.seed)))
            elif kind == "pause":
                self.paused = not self.paused
            else:
                return [{"type": "error", "reason": f"unknown type {kind!r}",
                         "seq": seq}]
        except (KeyError, TypeError, ValueError) as e:
            return [{"type": "error", "reason": f"malformed {kind}: {e}",
                     "seq": seq}]
        except perception.PerceptionError as e:
            return [{"type": "error",
                     "reason": f"{type(e).__name__}: {e}", "seq": seq}]
        return [{"type": "ack", "seq": seq}]

    def _on_instruction(self, text):
        labels = [s.label for s in self.scenario.instruments]
        instruction = perception.parse_command(text, labels)
        handle = self.handle_factory(self.arm, self.scenario, instruction)
        self.instruction = instruction
        self.handle = handle
        self.outcome = None

    # -- simulation ---------------------------------------------------------

    def tick(self):
        from .datagen import ExpertFailure
        events = []
        if self.handle is not None and not self.paused and self.outcome is None:
            try:
                target, grip = self.handle.act(self.scene, self.state)
            except ExpertFailure:
                self.outcome = "policy_error"
                return self.snapshot(events)
            self.state = run_control_interval(self.state, target, self.gains,
                                              arm=self.arm)
            self.scene, events = world.step_world(
                self.scene, self.state, self.arm, grip,
                1.0 / configs.CONTROL_RATE)
            for ev in events:
                if ev.kind in (world.HANDOVER_SUCCESS, world.HANDOVER_MISS,
                               world.OBJECT_BROKEN):
                    self.outcome = ev.kind
        return self.snapshot(events)

    def _link_points(self):
        # joint-frame origins plus the gripper point, so the console can
        # draw the linkage without doing kinematics of its own
        from .kinematics import _chain_frames
        frames, ee = _chain_frames(self.state.q, self.arm)
        return [f.position for f in frames] + [ee.position]

    def snapshot(self, events=()):
        masks = None
        if self.include_masks and self.instruction is not None:
            try:
                gt_t, gt_h = perception.ground_truth_masks(
                    self.scene, self.camera, self.instruction)
                masks = {"target": perception.rle_encode(gt_t.bitmap),
                         "hand": perception.rle_encode(gt_h.bitmap)}
            except perception.PerceptionError:
                masks = None
        return {
            "type": "state",
            "time": self.scene.time,
            "running": self.handle is not None and self.outcome is None,
            "paused": self.paused,
            "joints": [float(v) for v in self.state.q],
            "links": [[float(a) for a in p] for p in self._link_points()],
            "gripper": {"position": [float(v) for v in self.scene.gripper_position],
                        "closed": bool(self.scene.gripper_closed)},
            "hand": {"position": [float(v) for v in self.scene.hand.position],
                     "clasp": bool(self.scene.hand.clasp)},
            "instruments": [
                {"label": inst.spec.label,
                 "position": [float(v) for v in inst.position],
                 "yaw": float(inst.yaw),
                 "held_by": inst.held_by,
                 "broken": inst.spec.label in self.scene.broken,
                 "footprint": [[float(a) for a in p]
                               for p in inst.spec.footprint]}
                for inst in self.scene.instruments],
            "masks": masks,
            "events": [{"kind": ev.kind, "subject": ev.subject}
                       for ev in events],
            "outcome": self.outcome,
        }


async def _client_loop(ws, session):
    await ws.send(encode_frame({"type": "hello",
                                "version": PROTOCOL_VERSION}))
    raw = await ws.recv()
    hello = decode_frame(raw)
    if hello.get("type") != "hello" or hello.get("version") != PROTOCOL_VERSION:
        await ws.send(encode_frame(
            {"type": "error",
             "reason": f"protocol version mismatch: want {PROTOCOL_VERSION}"}))
        return
    interval = 1.0 / SNAPSHOT_HZ
    while True:
        try:
            raw = await asyncio.wait_for(ws.recv(), timeout=interval)
        except asyncio.TimeoutError:
            raw = None
        if raw is not None:
            try:
                msg = decode_frame(raw)
                replies = session.handle_message(msg)
            except ProtocolError as e:
                replies = [{"type": "error", "reason": str(e)}]
            for reply in replies:
                await ws.send(encode_frame(reply))
        await ws.send(encode_frame(session.tick()))


def serve(port, scenario=None, handle_factory=None, host="127.0.0.1",
          seed=0, ready=None):
    """Serve one interactive session (new connections get fresh episodes)."""
    import websockets

    from .datagen import ScriptedExpert
    scenario = scenario if scenario is not None else configs.scenario_for_task("on_table")
    factory = handle_factory or (lambda arm, sc, instr: ScriptedExpert(arm, sc, instr))

    async def handler(ws):
        session = Session(scenario, factory, seed=seed)
        try:
            await _client_loop(ws, session)
        except websockets.ConnectionClosed:
            pass

    async def main():
        async with websockets.serve(handler, host, port):
            if ready is not None:
                ready.set()
            await asyncio.Future()

    asyncio.run(main())
