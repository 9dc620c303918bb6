"""Drive the interactive session service programmatically: the same wire
protocol the browser console speaks, exercised from Python. Starts the
service in-process, asks for an instrument, waits for the presentation,
and triggers the clasp.

    python3 demos/04_operator_console.py

For the human version: `python3 -m scrubsim.cli serve` in one terminal,
`npm run serve` inside frontend/ in another, then open
http://127.0.0.1:8080/.
"""
import json
import math

from scrubsim import configs, datagen, server


def main():
    sess = server.Session(
        configs.scenario_for_task("on_table"),
        lambda arm, sc, instr: datagen.ScriptedExpert(arm, sc, instr),
        seed=3)
    print("scene:", ", ".join(i.spec.label for i in sess.scene.instruments))

    reply = sess.handle_message(
        {"type": "instruction", "text": "give me the 7mm clamp", "seq": 1})
    print("->", json.dumps(reply))

    clasped = False
    for step in range(360):
        sess.tick()
        snap = sess.snapshot()
        gap = math.dist(snap["gripper"]["position"], snap["hand"]["position"])
        held = any(i["held_by"] == "gripper" for i in snap["instruments"])
        if held and gap < 0.06 and not clasped:
            print(f"t={snap['time']:.2f}s instrument presented "
                  f"(gap {gap * 100:.1f} cm), clasping")
            print("->", json.dumps(sess.handle_message({"type": "clasp",
                                                        "seq": 2})))
            clasped = True
        for ev in snap["events"]:
            print(f"t={snap['time']:.2f}s event: {ev['kind']}"
                  + (f" ({ev['subject']})" if ev["subject"] else ""))
        if snap["outcome"]:
            print(f"outcome: {snap['outcome']}")
            break


if __name__ == "__main__":
    main()
