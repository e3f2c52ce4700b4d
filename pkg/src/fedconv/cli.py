"""Command-line runner binding config files to experiments.

Subcommands: train, central, partition, flops, sweep, eval. Every error path
prints a single machine-parseable line prefixed `error:` and exits nonzero.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import NumericsError
from .config import ConfigValidationError, load_config, parse_experiment
from .data import DataError, label_histograms, mean_pairwise_ks
from .federated import _build_partition, _load_data, central_train, run_federated
from .models import ConfigError, Network, calibrate_depths, count_flops, count_params
from .reporting import (CheckpointError, evaluate, load_checkpoint,
                        save_checkpoint, write_report)

_USAGE_ERRORS = (ConfigValidationError, ConfigError, DataError, CheckpointError)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _out_dir(exp, args) -> Path:
    out = args.out or exp.output_dir
    if out is None:
        raise ConfigValidationError(
            ["output_dir: required (set it in the config or pass --out)"])
    return Path(out)


def _load(args):
    exp = load_config(args.config)
    if args.seed is not None:
        exp.seed = args.seed
        exp.raw["seed"] = args.seed
    return exp


def _final_checkpoint(out_dir: Path, capture: dict) -> None:
    entries = {f"model.{n}": v for n, v in capture["state"].items()}
    if "clients" in capture:
        for client in capture["clients"]:
            for k, v in client.optimizer.state_dict().items():
                entries[f"opt.client{client.id}.{k}"] = v
    elif "optimizer" in capture:
        for k, v in capture["optimizer"].state_dict().items():
            entries[f"opt.{k}"] = v
    save_checkpoint(entries, out_dir / "checkpoint")


def _round_writer(out_dir: Path):
    def write(round_idx: int, state: dict) -> None:
        save_checkpoint({f"model.{n}": v for n, v in state.items()},
                        out_dir / f"round_{round_idx:04d}")
    return write


def cmd_train(args) -> int:
    exp = _load(args)
    out_dir = _out_dir(exp, args)
    out_dir.mkdir(parents=True, exist_ok=True)
    capture: dict = {}
    hook = _round_writer(out_dir) if exp.save_round_checkpoints else None
    report = run_federated(exp, threads=args.threads, round_checkpoint=hook,
                           capture=capture)
    write_report(report, out_dir)
    _final_checkpoint(out_dir, capture)
    print(f"final_accuracy {report.final_accuracy:.4f}")
    if report.rounds_to_target is not None:
        print(f"rounds_to_target {report.rounds_to_target}")
        print(f"tms {report.tms}")
    return 0


def cmd_central(args) -> int:
    exp = _load(args)
    out_dir = _out_dir(exp, args)
    out_dir.mkdir(parents=True, exist_ok=True)
    capture: dict = {}
    hook = _round_writer(out_dir) if exp.save_round_checkpoints else None
    report = central_train(exp, round_checkpoint=hook, capture=capture)
    write_report(report, out_dir)
    _final_checkpoint(out_dir, capture)
    print(f"final_accuracy {report.final_accuracy:.4f}")
    return 0


def cmd_partition(args) -> int:
    exp = _load(args)
    out_dir = _out_dir(exp, args)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, _ = _load_data(exp)
    partition, ks = _build_partition(exp, train)
    hists = label_histograms(partition, train.labels, train.num_classes)
    for cid in sorted(partition):
        counts = " ".join(str(c) for c in hists[cid])
        print(f"client {cid} n={len(partition[cid])} classes: {counts}")
    print(f"mean_ks {ks:.4f}")
    payload = {str(cid): [int(i) for i in idx] for cid, idx in partition.items()}
    (out_dir / "partition.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_flops(args) -> int:
    exp = _load(args)
    arch = exp.arch
    if args.calibrate is not None:
        depths = calibrate_depths(arch, int(args.calibrate), args.tolerance)
        print(f"calibrated_depths {' '.join(str(d) for d in depths)}")
        arch = replace(arch, depths=depths)
    print(f"params {count_params(arch)}")
    print(f"flops {count_flops(arch)}")
    return 0


_SWEEP_AXES = ("kernel_size", "activation", "stem", "act_placement", "norm_placement")


def cmd_sweep(args) -> int:
    exp = _load(args)  # validates the base config up front
    out_dir = _out_dir(exp, args)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        base_doc["seed"] = args.seed
    rows = []
    for value in args.values:
        doc = copy.deepcopy(base_doc)
        doc["arch"][args.axis] = int(value) if args.axis == "kernel_size" else value
        run_exp = parse_experiment(doc)
        report = run_federated(run_exp, threads=args.threads)
        sub = out_dir / f"sweep_{args.axis}_{value}"
        write_report(report, sub)
        best = max(r.accuracy for r in report.records)
        rows.append((value, report.final_accuracy, best,
                     report.rounds_to_target, report.tms))
        print(f"{args.axis}={value} final_accuracy={report.final_accuracy:.4f}")
    lines = [f"{args.axis},final_accuracy,best_accuracy,rounds_to_target,tms"]
    for value, final, best, rtt, tms_v in rows:
        lines.append(f"{value},{final!r},{best!r},"
                     f"{'' if rtt is None else rtt},{'' if tms_v is None else tms_v}")
    (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_eval(args) -> int:
    exp = _load(args)
    entries = load_checkpoint(args.checkpoint)
    state = {n[len("model."):]: v for n, v in entries.items() if n.startswith("model.")}
    if not state:
        raise CheckpointError(f"{args.checkpoint}: no model entries")
    model = Network(exp.arch, exp.dtype)
    model.load_state_dict(state)
    _, test = _load_data(exp)
    acc = evaluate(model, test.images, test.labels, dtype=exp.dtype)
    print(f"accuracy {acc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedconv",
        description="Federated CNN ablation simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="max parallel clients per round")
        p.add_argument("--out", default=None, help="override config output_dir")

    for name, fn in (("train", cmd_train), ("central", cmd_central),
                     ("partition", cmd_partition)):
        p = sub.add_parser(name)
        common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("flops")
    common(p)
    p.add_argument("--calibrate", type=float, default=None,
                   help="target FLOPs for depth calibration")
    p.add_argument("--tolerance", type=float, default=0.15,
                   help="relative FLOPs tolerance for --calibrate")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("sweep")
    common(p)
    p.add_argument("--axis", required=True, choices=_SWEEP_AXES)
    p.add_argument("--values", required=True, nargs="+")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("eval")
    common(p)
    p.add_argument("--checkpoint", required=True,
                   help="checkpoint stem (without .manifest/.blob)")
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        return _fail("--threads must be >= 1")
    try:
        return args.fn(args)
    except _USAGE_ERRORS as e:
        return _fail(str(e))
    except NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
