"""Produce the committed policy artifacts: generate the default 648-demo
dataset, train full-width adapters on it, and write the checkpoint plus
training metadata under artifacts/. The acceptance suite evaluates these
artifacts on held-out seeds rather than retraining on every run.

    python3 demos/train_default_policy.py [--steps N]

Expect roughly 1.5-2 hours on one desktop core; the wall-clock time is
recorded in artifacts/policy.json and is itself asserted (<= 4 h) by the
test suite.
"""
import argparse
import json
import pathlib
import time

import numpy as np

from scrubsim import checkpoint, configs, datagen, fusion, policy

ARTIFACTS = pathlib.Path(__file__).resolve().parent.parent / "artifacts"

RECIPE = {
    "demos": 648,
    "dataset_seed": 0,
    "fusion_seed": 0,
    "model_seed": 0,
    "adapter_seed": 1,
    "rank": 64,
    "alpha": 128.0,
    "rank_overrides": {"head": 128},
    "learning_rate": 1e-3,
    "batch_size": 8,
    "warmup": 100,
    "train_seed": 2,
    # Zero history blocks: with past actions in the context a policy can fit
    # "repeat the previous waypoint" on almost every step and never learn to
    # aim from the observation, which locks closed-loop rollouts onto the
    # first (possibly wrong) waypoint.  History-free samples make every step
    # supervise the observation-to-waypoint mapping instead.
    "history_blocks": 0,
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=6000)
    args = ap.parse_args()

    arm = configs.default_arm()
    gains = configs.default_gains(arm)
    ranges = configs.action_ranges(arm)
    vocab = datagen.default_vocabulary()
    fusion_params = fusion.init_fusion_params(RECIPE["fusion_seed"])
    ARTIFACTS.mkdir(exist_ok=True)

    dataset_dir = ARTIFACTS / "dataset"
    t0 = time.time()
    if (dataset_dir / "manifest.yaml").exists():
        dataset = datagen.read_dataset(dataset_dir)
        print(f"reusing dataset at {dataset_dir} ({dataset.manifest.count} demos)")
    else:
        dataset = datagen.collect_demos(
            RECIPE["demos"], datagen.VariationConfig(),
            seed=RECIPE["dataset_seed"], arm=arm, gains=gains,
            progress=lambda a, d, r: print(f"  demos {d}/{RECIPE['demos']}",
                                           flush=True) if d % 50 == 0 else None)
        datagen.write_dataset(dataset, dataset_dir)
        print(f"dataset written to {dataset_dir} ({time.time() - t0:.0f}s)")

    samples = datagen.build_samples(dataset, vocab, ranges, fusion_params,
                                    history_blocks=RECIPE["history_blocks"])
    print(f"{len(samples)} per-step samples")

    model = policy.PolicyModel.create(policy.PolicyConfig(), vocab,
                                      seed=RECIPE["model_seed"])
    adapters = policy.LoraAdapter.create(
        model, rank=RECIPE["rank"], alpha=RECIPE["alpha"],
        rank_overrides=RECIPE["rank_overrides"], seed=RECIPE["adapter_seed"])
    cfg = policy.TrainingConfig(
        learning_rate=RECIPE["learning_rate"], batch_size=RECIPE["batch_size"],
        steps=args.steps, warmup=RECIPE["warmup"], seed=RECIPE["train_seed"])

    log_path = ARTIFACTS / "train_log.jsonl"
    t1 = time.time()
    with open(log_path, "w") as log_file:
        def log(step, loss, seconds):
            log_file.write(json.dumps({"step": step, "loss": loss,
                                       "seconds": seconds}) + "\n")
            if step % 200 == 0:
                log_file.flush()
                print(f"  step {step:5d} loss {loss:.3f} {seconds:.0f}s",
                      flush=True)
        curve = policy.train(model, adapters, samples, cfg, log=log)
    train_seconds = time.time() - t1

    checkpoint.save(
        checkpoint.pack_bundle(model, adapters, fusion_params),
        ARTIFACTS / "policy.ckpt")
    meta = dict(RECIPE)
    meta.update(steps=args.steps, train_seconds=train_seconds,
                final_loss=float(np.mean(curve[-50:])))
    (ARTIFACTS / "policy.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"trained {args.steps} steps in {train_seconds / 60:.1f} min, "
          f"final loss {meta['final_loss']:.3f}")
    print(f"checkpoint at {ARTIFACTS / 'policy.ckpt'}")


if __name__ == "__main__":
    main()
