import asyncio
import threading

import numpy as np
import pytest

from scrubsim import configs, datagen, server
from scrubsim.server import (
    PROTOCOL_VERSION, ProtocolError, Session, decode_frame, encode_frame)


def make_session(seed=0, task="on_table"):
    sc = configs.scenario_for_task(task)
    return Session(sc, lambda a, s, i: datagen.ScriptedExpert(a, s, i),
                   seed=seed)


def test_frame_round_trip():
    msg = {"type": "clasp", "seq": 3}
    frame = encode_frame(msg)
    head, _, payload = frame.partition(":")
    assert int(head) == len(payload.encode("utf-8"))
    assert decode_frame(frame) == msg


def test_frame_length_is_utf8_bytes():
    msg = {"type": "instruction", "text": "ünïcode", "seq": 1}
    assert decode_frame(encode_frame(msg)) == msg


def test_malformed_frames_rejected():
    for frame in ("no-prefix", "5:abc", "3:[1]", '20:{"missing":"type"}'):
        with pytest.raises(ProtocolError):
            decode_frame(frame)


def test_instruction_ack_and_unknown_label():
    sess = make_session()
    label = sess.scene.instruments[0].spec.label
    ok = sess.handle_message({"type": "instruction",
                              "text": f"give me {label}", "seq": 1})
    assert ok == [{"type": "ack", "seq": 1}]
    bad = sess.handle_message({"type": "instruction",
                               "text": "give me the scalpel", "seq": 2})
    assert bad[0]["type"] == "error" and "scalpel" in bad[0]["reason"]


def test_missing_seq_is_error():
    sess = make_session()
    out = sess.handle_message({"type": "clasp"})
    assert out[0]["type"] == "error"


def test_state_snapshot_shape():
    sess = make_session()
    snap = sess.tick()
    assert snap["type"] == "state"
    assert len(snap["joints"]) == sess.arm.dof
    assert len(snap["instruments"]) == len(sess.scene.instruments)
    assert snap["outcome"] is None and snap["running"] is False


def test_full_session_reaches_handover():
    sess = make_session(seed=3)
    label = sess.scene.instruments[0].spec.label
    sess.handle_message({"type": "instruction", "text": f"give me {label}",
                         "seq": 1})
    outcome = None
    for t in range(500):
        snap = sess.tick()
        if snap["outcome"]:
            outcome = snap["outcome"]
            break
        if snap["running"] and any(i["held_by"] == "gripper"
                                   for i in snap["instruments"]):
            gp = np.array(snap["gripper"]["position"])
            hp = np.array(snap["hand"]["position"])
            if np.linalg.norm(gp - hp) < 0.06:
                sess.handle_message({"type": "clasp", "seq": 100 + t})
    assert outcome == "HandoverSuccess"


def test_move_hand_and_reset():
    sess = make_session()
    sess.handle_message({"type": "move_hand",
                         "pose": {"x": 0.4, "y": 0.1, "z": 0.2}, "seq": 1})
    np.testing.assert_allclose(sess.scene.hand.position, [0.4, 0.1, 0.2])
    out = sess.handle_message({"type": "move_hand", "pose": {"x": 0.4},
                               "seq": 2})
    assert out[0]["type"] == "error"
    sess.handle_message({"type": "reset", "seed": 9, "seq": 3})
    assert sess.seed == 9 and sess.instruction is None


def test_pause_toggles_and_freezes_time():
    sess = make_session()
    label = sess.scene.instruments[0].spec.label
    sess.handle_message({"type": "instruction", "text": f"give me {label}",
                         "seq": 1})
    sess.handle_message({"type": "pause", "seq": 2})
    t0 = sess.scene.time
    snap = sess.tick()
    assert snap["paused"] is True and sess.scene.time == t0
    sess.handle_message({"type": "pause", "seq": 3})
    sess.tick()
    assert sess.scene.time > t0


def test_websocket_round_trip():
    """End-to-end over a real socket: handshake, instruction, acks, motion."""
    websockets = pytest.importorskip("websockets")
    port = 8931
    ready = threading.Event()
    thread = threading.Thread(
        target=server.serve, args=(port,), kwargs={"ready": ready, "seed": 3},
        daemon=True)
    thread.start()
    assert ready.wait(10)

    async def client():
        async with websockets.connect(f"ws://127.0.0.1:{port}") as ws:
            hello = decode_frame(await ws.recv())
            assert hello == {"type": "hello", "version": PROTOCOL_VERSION}
            await ws.send(encode_frame({"type": "hello",
                                        "version": PROTOCOL_VERSION}))
            await ws.send(encode_frame({"type": "instruction",
                                        "text": "give me the 7mm clamp",
                                        "seq": 1}))
            acks, states = [], []
            for _ in range(120):
                msg = decode_frame(await ws.recv())
                if msg["type"] == "ack":
                    acks.append(msg["seq"])
                elif msg["type"] == "state":
                    states.append(msg)
                if len(states) >= 60:
                    break
            assert acks == [1]
            joints = np.array([s["joints"] for s in states])
            assert np.max(np.abs(np.diff(joints, axis=0))) > 1e-4
    asyncio.run(asyncio.wait_for(client(), timeout=30))
