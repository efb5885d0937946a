"""Command-line interface.

Subcommands: synth, train, eval, ablate, gradcheck, flowcheck. Exit codes:
0 on success, 1 on validation failure, 2 on numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import checks
from .config import TrainConfig, load_config
from .errors import (AlignmentError, ConfigurationError, DomainError,
                     EvaluationError, ShapeError)
from .tensorio import write_tensor
from .training import (ablate, default_train_seeds, evaluate, format_ablation_table,
                       load_checkpoint, make_scene, train)

_VALIDATION_ERRORS = (ConfigurationError, ShapeError, DomainError, AlignmentError,
                      OSError, ValueError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); bad usage is exit 1
        raise ConfigurationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="meshflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write one synthetic scene as tensor files")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="optional config file (defaults otherwise)")

    p = sub.add_parser("train", help="train a model and save a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint on listed scene seeds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seeds", required=True, help="file of integer seeds, one per line")
    p.add_argument("--out", help="key=value metrics file "
                                 "(default: <checkpoint>/metrics.txt)")

    p = sub.add_parser("ablate", help="train toggle-ablation arms and print a table")
    p.add_argument("--config", required=True)
    p.add_argument("--toggles", required=True,
                   help="comma list of arms; each arm names modules to disable, "
                        "joined by '+' (e.g. depth,dist,silh+mask)")

    sub.add_parser("gradcheck", help="gradient self-checks for every primitive "
                                     "and the full pipeline")
    sub.add_parser("flowcheck", help="flow invertibility, log-det, and "
                                     "normalization self-checks")
    return parser


def _read_seeds(path: str) -> list[int]:
    seeds = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                seeds.append(int(line))
            except ValueError as err:
                raise ConfigurationError(f"{path}:{lineno}: not an integer seed") from err
    if not seeds:
        raise ConfigurationError(f"{path}: no seeds listed")
    return seeds


def _cmd_synth(args) -> int:
    cfg = load_config(args.config) if args.config else TrainConfig().validate()
    scene = make_scene(args.seed, cfg)
    os.makedirs(args.out, exist_ok=True)
    for name, array in (("image", scene.image), ("depth", scene.depth),
                        ("silhouette", scene.silhouette),
                        ("vertices", scene.gt_vertices),
                        ("joints3d", scene.gt_j3d), ("joints2d", scene.gt_j2d),
                        ("camera", scene.camera_gt)):
        write_tensor(os.path.join(args.out, f"{name}.d2a1"), array)
    print(f"scene seed={args.seed} written to {args.out} "
          f"({int(scene.silhouette.sum())} foreground pixels)")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    _, log = train(cfg, default_train_seeds(cfg), out_dir=args.out)
    first, last = log[0]["total"], log[-1]["total"]
    print(f"trained {len(log)} steps; total loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    report = evaluate(model, _read_seeds(args.seeds))
    print(report.as_table())
    out = args.out or os.path.join(args.checkpoint, "metrics.txt")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_keyvalues())
    print(f"metrics written to {out}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    toggles = [part.strip() for part in args.toggles.split(",") if part.strip()]
    if not toggles:
        raise ConfigurationError("--toggles needs at least one arm")
    rows = ablate(cfg, toggles)
    print(format_ablation_table(rows))
    return 0


def _run_checks(results) -> int:
    print(checks.format_results(results))
    return 0 if all(r.passed for r in results) else 2


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command == "gradcheck":
            return _run_checks(checks.gradcheck_suite())
        return _run_checks(checks.flowcheck_suite())
    except EvaluationError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 2
    except _VALIDATION_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
