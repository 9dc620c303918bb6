"""Train a small policy head-to-tail on a handful of demonstrations and
roll it out. This is a scaled-down version of the default recipe (see
demos/train_default_policy.py for the one that produces artifacts/);
expect a few minutes of numpy-only training.

    python3 demos/03_small_policy_training.py
"""
import numpy as np

from scrubsim import configs, datagen, fusion, harness, policy


def main():
    arm = configs.default_arm()
    gains = configs.default_gains(arm)
    ranges = configs.action_ranges(arm)
    vocab = datagen.default_vocabulary()
    fusion_params = fusion.init_fusion_params(0)

    variation = datagen.VariationConfig(tasks=("on_table",))
    dataset = datagen.collect_demos(12, variation, seed=0, arm=arm, gains=gains)
    samples = datagen.build_samples(dataset, vocab, ranges, fusion_params,
                                    history_blocks=0)
    print(f"{len(dataset.demos)} demos -> {len(samples)} per-step samples")

    model = policy.PolicyModel.create(policy.PolicyConfig(), vocab, seed=0)
    adapters = policy.LoraAdapter.create(model, rank=64, alpha=128.0,
                                         rank_overrides={"head": 128}, seed=1)
    cfg = policy.TrainingConfig(learning_rate=1e-3, batch_size=8,
                                steps=400, warmup=50, seed=2)
    curve = policy.train(model, adapters, samples, cfg,
                         log=lambda s, l, t: print(f"  step {s:4d} "
                                                   f"loss {l:.3f} ({t:.0f}s)")
                         if s % 100 == 0 else None)
    print(f"loss {curve[0]:.2f} -> {np.mean(curve[-20:]):.2f} "
          f"(uniform would be {np.log(1024):.2f})")

    handle = harness.NeuralHandle(model, adapters, fusion_params, vocab, ranges,
                                  history_blocks=0)
    res, _ = harness.run_episode(handle, harness.TaskSpec.for_name("on_table"),
                                 seed=10000, arm=arm, gains=gains,
                                 fusion_params=fusion_params)
    print(f"held-out rollout: {res.outcome} after {res.steps} steps "
          f"(400 steps of training is a teaser, not the full recipe)")


if __name__ == "__main__":
    main()
