"""Command line entry point: ``gairlab {train,attack,profile,logits}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from gairlab.attacks import RandomStart
from gairlab.checkpoint import load_checkpoint
from gairlab.config import ConfigError, parse_config
from gairlab.evaluation import RobustnessReport, geometry_profile, robust_error, standard_error
from gairlab.experiment import load_datasets, run_experiment


def _load_config(args):
    cfg = parse_config(Path(args.config).read_text())
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _write(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_train(args):
    cfg = _load_config(args)
    result = run_experiment(cfg, args.out)
    print(json.dumps(result.summary, sort_keys=True))


def cmd_attack(args):
    cfg = _load_config(args)
    _, test = load_datasets(cfg)
    model, _, _ = load_checkpoint(args.checkpoint)
    report = RobustnessReport(n=len(test), standard_error=standard_error(model, test))
    for i, (name, acfg) in enumerate(cfg.evals):
        rng = np.random.default_rng([cfg.seed, i])
        report.robust_error[name] = robust_error(model, test, acfg, rng)
    _write(json.dumps(asdict(report), indent=2, sort_keys=True) + "\n", args.out)


def cmd_profile(args):
    cfg = _load_config(args)
    train, _ = load_datasets(cfg)
    model, _, _ = load_checkpoint(args.checkpoint)
    acfg = replace(cfg.trainer.attack, random_start=RandomStart.NONE)
    prof = geometry_profile(model, train, acfg)
    lines = ["index,label,kappa"]
    lines += [f"{i},{int(y)},{int(k)}" for i, (y, k) in enumerate(zip(train.labels, prof.kappa))]
    _write("\n".join(lines) + "\n", args.out)
    print(f"kappa mean {prof.mean:.6g} median {prof.median}", file=sys.stderr)


def cmd_logits(args):
    cfg = _load_config(args)
    _, test = load_datasets(cfg)
    model, _, _ = load_checkpoint(args.checkpoint)
    logits = model.forward(test.inputs)
    lines = ["index,label," + ",".join(f"logit_{c}" for c in range(logits.shape[1]))]
    for i, (y, row) in enumerate(zip(test.labels, logits)):
        lines.append(f"{i},{int(y)}," + ",".join(format(v, ".17g") for v in row))
    _write("\n".join(lines) + "\n", args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gairlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("train", cmd_train, "run a full experiment", False),
        ("attack", cmd_attack, "robustness report for a checkpoint", True),
        ("profile", cmd_profile, "per-example geometry values on the training set", True),
        ("logits", cmd_logits, "raw test-set logits as CSV", True),
    ]
    for name, fn, help_text, needs_ckpt in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--checkpoint", required=needs_ckpt)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
