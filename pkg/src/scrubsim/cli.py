"""Command-line entry points.

Subcommands: gen-data, train, eval, serve, replay. Every command is
deterministic given its seed arguments; exit status is 0 only when the
requested work completed fully.
"""

import argparse
import json
import os
import sys

import numpy as np


def _add_gen_data(sub):
    p = sub.add_parser("gen-data", help="collect expert demonstrations")
    p.add_argument("--n", type=int, default=648,
                   help="number of successful demonstrations to record")
    p.add_argument("--variation", type=str, default=None,
                   help="path to a YAML variation config (tasks, exec_noise)")
    p.add_argument("--seed", type=int, default=0, help="base RNG seed")
    p.add_argument("--out", type=str, required=True, help="output directory")


def _add_train(sub):
    p = sub.add_parser("train", help="fit policy adapters on a dataset")
    p.add_argument("--dataset", type=str, required=True, help="dataset directory")
    p.add_argument("--steps", type=int, default=3000, help="optimizer steps")
    p.add_argument("--lr", type=float, default=3e-3, help="peak learning rate")
    p.add_argument("--batch", type=int, default=8, help="mini-batch size")
    p.add_argument("--rank", type=int, default=16, help="adapter rank")
    p.add_argument("--head-rank", type=int, default=64,
                   help="adapter rank override for the output head")
    p.add_argument("--seed", type=int, default=0, help="init/training seed")
    p.add_argument("--checkpoint", type=str, required=True,
                   help="output checkpoint path")
    p.add_argument("--log", type=str, default=None,
                   help="line-delimited training log (step, loss, seconds)")


def _add_eval(sub):
    p = sub.add_parser("eval", help="run the task suite and report rates")
    p.add_argument("--checkpoint", type=str, default=None,
                   help="policy checkpoint; omit for the scripted expert")
    p.add_argument("--untrained", action="store_true",
                   help="evaluate fresh (identity) adapters as a baseline")
    p.add_argument("--suite", type=str, default="on_table",
                   help="comma-separated task names")
    p.add_argument("--trials", type=int, default=20, help="episodes per task")
    p.add_argument("--seeds", type=int, default=10000, help="base episode seed")
    p.add_argument("--report", type=str, default=None,
                   help="write the table as JSON here as well")


def _add_serve(sub):
    p = sub.add_parser("serve", help="interactive session for the console")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--host", type=str, default="127.0.0.1")
    p.add_argument("--scenario", type=str, default="on_table",
                   help="task name defining the served scenario")
    p.add_argument("--seed", type=int, default=0)


def _add_replay(sub):
    p = sub.add_parser("replay", help="re-execute a recorded episode")
    p.add_argument("--dataset", type=str, required=True, help="dataset directory")
    p.add_argument("--episode", type=int, default=0, help="episode index")
    p.add_argument("--quantize", action="store_true",
                   help="pass actions through tokenize/detokenize first")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scrubsim",
        description="synthetic instrument-handover pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_gen_data(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_serve(sub)
    _add_replay(sub)
    return parser


def cmd_gen_data(args):
    from . import codec, datagen
    variation = None
    if args.variation:
        import yaml
        with open(args.variation) as f:
            variation = datagen.VariationConfig.from_dict(yaml.safe_load(f))
    dataset = datagen.collect_demos(args.n, variation, seed=args.seed)
    datagen.write_dataset(dataset, args.out)
    vocab = datagen.default_vocabulary()
    codec.write_vocab(vocab, os.path.join(args.out, "vocabulary.txt"))
    print(f"wrote {dataset.manifest.count} demonstrations to {args.out}")
    return 0


def cmd_train(args):
    from . import checkpoint, configs, datagen, fusion, policy
    dataset = datagen.read_dataset(args.dataset)
    vocab_path = os.path.join(args.dataset, dataset.manifest.vocabulary_file)
    from . import codec
    vocab = (codec.read_vocab(vocab_path) if os.path.exists(vocab_path)
             else datagen.default_vocabulary())
    arm = configs.default_arm()
    ranges = configs.action_ranges(arm)
    fusion_params = fusion.init_fusion_params(args.seed)
    samples = datagen.build_samples(dataset, vocab, ranges, fusion_params)

    model = policy.PolicyModel.create(policy.PolicyConfig(), vocab,
                                      seed=args.seed)
    adapters = policy.LoraAdapter.create(model, rank=args.rank,
                                         rank_overrides={"head": args.head_rank},
                                         alpha=2.0 * args.rank,
                                         seed=args.seed + 1)
    cfg = policy.TrainingConfig(learning_rate=args.lr, batch_size=args.batch,
                                steps=args.steps, seed=args.seed + 2)
    log_f = open(args.log, "w") if args.log else None
    try:
        def log(step, loss, seconds):
            line = json.dumps({"step": step, "loss": loss,
                               "seconds": round(seconds, 3)})
            if log_f:
                log_f.write(line + "\n")
            if step % 100 == 0:
                print(line, flush=True)
        policy.train(model, adapters, samples, cfg, log=log)
    finally:
        if log_f:
            log_f.close()
    checkpoint.save(checkpoint.pack_bundle(model, adapters, fusion_params),
                    args.checkpoint)
    print(f"wrote checkpoint {args.checkpoint}")
    return 0


def _load_policy_handle(path, untrained, seed=0):
    from . import checkpoint, configs, datagen, fusion, harness, policy
    arm = configs.default_arm()
    ranges = configs.action_ranges(arm)
    vocab = datagen.default_vocabulary()
    model = policy.PolicyModel.create(policy.PolicyConfig(), vocab, seed=seed)
    adapters = policy.LoraAdapter.create(model, rank=16,
                                         rank_overrides={"head": 64},
                                         alpha=32.0, seed=seed + 1)
    fusion_params = fusion.init_fusion_params(seed)
    if path is not None:
        tensors = checkpoint.load(path)
        checkpoint.unpack_bundle(tensors, model, adapters, fusion_params)
    elif not untrained:
        return harness.ExpertHandle(
            lambda a, s, i: datagen.ScriptedExpert(a, s, i)), None
    handle = harness.NeuralHandle(model, adapters, fusion_params, vocab, ranges)
    return handle, fusion_params


def cmd_eval(args):
    from . import configs, harness
    names = [n.strip() for n in args.suite.split(",") if n.strip()]
    for name in names:
        if name not in configs.TASK_NAMES:
            print(f"unknown task {name!r}", file=sys.stderr)
            return 2
    suite = [harness.TaskSpec.for_name(n, trials=args.trials) for n in names]
    handle, fusion_params = _load_policy_handle(args.checkpoint, args.untrained)
    table, logs = harness.evaluate(handle, suite, args.seeds,
                                   fusion_params=fusion_params)
    print(table.to_text())
    p95 = harness.latency_p95(logs)
    if p95:
        print(f"inference latency p95: {p95 * 1000:.0f} ms")
    if args.report:
        doc = {"base_seed": args.seeds, "tasks": table.to_dict(),
               "latency_p95_s": p95}
        with open(args.report, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def cmd_serve(args):
    from . import configs, server
    scenario = configs.scenario_for_task(args.scenario)
    print(f"serving {args.scenario} on ws://{args.host}:{args.port}", flush=True)
    server.serve(args.port, scenario=scenario, host=args.host, seed=args.seed)
    return 0


def cmd_replay(args):
    from . import codec, configs, datagen, harness
    dataset = datagen.read_dataset(args.dataset)
    if not 0 <= args.episode < len(dataset.demos):
        print(f"episode index out of range", file=sys.stderr)
        return 2
    demo = dataset.demos[args.episode]
    arm = configs.default_arm()
    ranges = configs.action_ranges(arm)
    vocab = datagen.default_vocabulary()

    action_filter = None
    if args.quantize:
        def action_filter(a):
            toks = codec.tokenize_action(
                codec.ContinuousAction(np.clip(a, ranges.lo, ranges.hi)),
                ranges, vocab)
            return codec.detokenize(toks, ranges, vocab).values
    actions = [s.action for s in demo.steps]
    gripper = [(s.gripper_close, s.gripper_force) for s in demo.steps]
    handle = harness.ReplayHandle(actions, gripper, action_filter)
    task = harness.TaskSpec.for_name(demo.scenario_name)
    result, _ = harness.run_episode(handle, task, demo.seed, arm=arm)
    print(f"episode {args.episode} seed {demo.seed}: recorded "
          f"{'success' if demo.success else 'failure'}, replay {result.outcome} "
          f"in {result.steps} steps")
    return 0 if result.success == demo.success else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"gen-data": cmd_gen_data, "train": cmd_train,
                "eval": cmd_eval, "serve": cmd_serve, "replay": cmd_replay}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
