"""Watch the scripted expert work: run a handful of seeded handover
episodes, print the event stream of one of them, and summarize success
across the task families.

    python3 demos/01_scripted_expert.py
"""
import numpy as np

from scrubsim import configs, datagen, harness


def expert_handle():
    return harness.ExpertHandle(
        lambda arm, sc, instr: datagen.ScriptedExpert(arm, sc, instr))


def main():
    arm = configs.default_arm()
    gains = configs.default_gains(arm)

    task = harness.TaskSpec.for_name("handover_single")
    result, _ = harness.run_episode(expert_handle(), task, seed=0,
                                    arm=arm, gains=gains)
    print(f"episode seed=0 on {task.name}: {result.outcome} "
          f"after {result.steps} steps ({result.steps / 30:.1f}s simulated)")
    for step, kind, subject in result.events:
        print(f"  t={step / 30:5.2f}s  {kind}" + (f" ({subject})" if subject else ""))

    suite = [harness.TaskSpec.for_name(name, trials=10)
             for name in ("on_table", "lift", "height_change",
                          "pose_change", "difficult_to_grasp")]
    table, _ = harness.evaluate(expert_handle(), suite, base_seed=100,
                                arm=arm, gains=gains)
    print()
    print(table.to_text())


if __name__ == "__main__":
    main()
