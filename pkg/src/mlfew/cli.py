"""Command-line entry points: train, eval, synth, selftest.

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .autodiff import AutodiffError
from .config import ConfigError, build_config
from .datasets import DataError, generate, write_jsonl
from .episodes import EpisodeError
from .metrics import csv_report
from .selftest import run_selftest
from .training import evaluate, load_checkpoint, save_checkpoint, synth_config, train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _add_common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="key=value config file; flags override it")
    parser.add_argument("--data", help="JSONL dataset path (default: synthetic)")
    parser.add_argument("--head", choices=("proto", "relation", "lpn"))
    parser.add_argument("--way", type=int)
    parser.add_argument("--shot", type=int)
    parser.add_argument("--query", type=int, dest="query_count")
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--nlc", action="store_const", const=True,
                        help="train/evaluate the auxiliary label counter")
    parser.add_argument("--lambda", type=float, dest="count_weight",
                        help="weight of the count loss in the joint objective")
    parser.add_argument("--alpha", type=float)
    parser.add_argument("--sigma", type=float, dest="sigma_rbf")
    parser.add_argument("--knn", type=int, dest="k_nn")
    parser.add_argument("--out", help="output path (losses CSV / metrics JSON / dataset)")
    parser.add_argument("--checkpoint", help="model checkpoint path")


def _add_synth_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--classes", type=int, dest="synth_classes")
    parser.add_argument("--dim", type=int, dest="synth_dim")
    parser.add_argument("--samples-per-class", type=int, dest="synth_samples_per_class")
    parser.add_argument("--max-labels", type=int, dest="synth_max_labels")
    parser.add_argument("--separation", type=float, dest="synth_separation")
    parser.add_argument("--noise", type=float, dest="synth_noise")
    parser.add_argument("--cooccurrence", type=float, dest="synth_cooccurrence")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlfew",
                                     description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("train", "train a head episodically and write a checkpoint"),
                      ("eval", "evaluate a checkpoint on held-out classes"),
                      ("synth", "generate a synthetic JSONL dataset"),
                      ("selftest", "run the built-in correctness checks")):
        sub = commands.add_parser(name, help=doc)
        if name != "selftest":
            _add_common_flags(sub)
            _add_synth_flags(sub)
    return parser


def _config_from_args(args) -> dict:
    skip = {"command", "config"}
    return {k: v for k, v in vars(args).items() if k not in skip and v is not None}


def _run_train(args) -> int:
    config = build_config(args.config, command="train", **_config_from_args(args))
    model, meta, losses = train(config)
    if config.checkpoint:
        save_checkpoint(model, meta, config.checkpoint)
    if config.out:
        with open(config.out, "w") as fh:
            fh.write("episode,loss\n")
            for i, value in enumerate(losses):
                fh.write(f"{i},{value!r}\n")
    mean_tail = sum(losses[-100:]) / len(losses[-100:]) if losses else float("nan")
    print(json.dumps({"episodes": len(losses), "final_loss_mean": mean_tail},
                     sort_keys=True))
    return EXIT_OK


def _run_eval(args) -> int:
    config = build_config(args.config, command="eval", **_config_from_args(args))
    if not config.checkpoint:
        raise ConfigError("eval needs --checkpoint")
    model, meta = load_checkpoint(config.checkpoint)
    if meta["head"] != config.head and "head" in _config_from_args(args):
        raise ConfigError(f"checkpoint holds a {meta['head']!r} head, "
                          f"config asks for {config.head!r}")
    config.head = meta["head"]
    config.way = meta["way"]
    config.nlc = config.nlc or meta["nlc"]
    report, _ = evaluate(model, meta, config)
    text = json.dumps(report, sort_keys=True)
    if config.out:
        with open(config.out, "w") as fh:
            fh.write(text + "\n")
        with open(config.out + ".csv", "w") as fh:
            fh.write(csv_report(report, {
                "head": config.head, "way": config.way, "shot": config.shot,
                "episodes": config.eval_episodes, "seed": config.seed,
                "nlc": report["nlc"]}))
    print(text)
    return EXIT_OK


def _run_synth(args) -> int:
    config = build_config(args.config, command="synth", **_config_from_args(args))
    if not config.out:
        raise ConfigError("synth needs --out")
    write_jsonl(generate(synth_config(config)), config.out)
    print(json.dumps({"written": config.out}, sort_keys=True))
    return EXIT_OK


def _run_selftest() -> int:
    checks = run_selftest()
    failed = 0
    for name, ok, detail in checks:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += 0 if ok else 1
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return _run_train(args)
        if args.command == "eval":
            return _run_eval(args)
        if args.command == "synth":
            return _run_synth(args)
        return _run_selftest()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EpisodeError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AutodiffError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
