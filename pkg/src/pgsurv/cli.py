"""pgsurv command line: pretrain, finetune, evaluate, ablate, synth, gradcheck."""
import argparse
import json
import logging
import sys

from . import runner
from .config import ConfigError, load_config
from .data import CohortParseError, IntegrityError
from .diffcore import DeterminismError
from .survival import DegenerateCohortError


def _common(p):
    p.add_argument("--config", help="YAML or JSON key-value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--modality", choices=["multimodal", "image", "genomics"])
    p.add_argument("--fraction", type=float)
    p.add_argument("--loss", dest="fusion_loss", choices=["mse", "cosine"])
    p.add_argument("--no-pretrain", dest="pretrain", action="store_false", default=None)
    p.add_argument("--scheme", choices=["internal", "external"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--folds", type=lambda s: [int(x) for x in s.split(",")],
                   help="comma-separated subset of CV folds")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="pgsurv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("pretrain", help="fusion-loss pretraining, one checkpoint per repeat and fold"))
    p = sub.add_parser("finetune", help="survival finetuning in the configured modality mode")
    _common(p)
    p.add_argument("--checkpoint", help="pretraining checkpoint file or directory")
    p = sub.add_parser("evaluate", help="C-index of finetuned checkpoints on held-out patients")
    _common(p)
    p.add_argument("--checkpoint", required=True, help="finetuned checkpoint file or directory")
    p.add_argument("--split", default="test")
    _common(sub.add_parser("ablate", help="fraction x pretraining x fusion-loss sweep"))
    _common(sub.add_parser("synth", help="write a synthetic cohort in the on-disk formats"))
    p = sub.add_parser("gradcheck", help="finite-difference check of all parameter groups")
    _common(p)
    p.add_argument("--samples", type=int, default=3, help="entries checked per parameter tensor")
    p.add_argument("--force-dropout", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--corrupt-rule", help=argparse.SUPPRESS)
    return parser


OVERRIDES = ("seed", "modality", "fraction", "fusion_loss", "pretrain", "scheme", "epochs", "repeats", "folds")


def _print_summary(report):
    cmd = report["command"]
    if cmd == "pretrain":
        for row in report["runs"]:
            print(f"repeat {row['repeat']} fold {row['fold']}: fusion loss "
                  f"{row['initial_loss']:.5f} -> {row['final_loss']:.5f}")
    elif cmd == "finetune":
        for row in report["runs"]:
            print(f"repeat {row['repeat']} fold {row['fold']}: best epoch {row['best_epoch']} "
                  f"val C {row['best_val_c_index']:.4f} test C {row['test_c_index']:.4f}")
        s = report["test_c_index"]
        print(f"{report['mode']} test C-index {s['mean']:.4f} +- {s['std']:.4f} over {s['n']} repeats")
    elif cmd == "evaluate":
        s = report["c_index"]
        print(f"{report['split']} C-index {s['mean']:.4f} +- {s['std']:.4f}")
    elif cmd == "ablate":
        for c in report["cells"]:
            s = c["test_c_index"]
            print(f"{c['name']:<28} test C {s['mean']:.4f} +- {s['std']:.4f}")
    elif cmd == "gradcheck":
        for name, err in report["max_rel_error"].items():
            print(f"{name:<40} {err:.3e}")
        print(f"worst {report['worst']:.3e} ({'ok' if report['passed'] else 'FAILED'}, tol {report['tolerance']:g})")
    else:
        print(json.dumps(report))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, **{k: getattr(args, k) for k in OVERRIDES})
        if args.command == "pretrain":
            report = runner.cmd_pretrain(cfg, args.out)
        elif args.command == "finetune":
            report = runner.cmd_finetune(cfg, args.out, args.checkpoint)
        elif args.command == "evaluate":
            report = runner.cmd_evaluate(cfg, args.out, args.checkpoint, args.split)
        elif args.command == "ablate":
            report = runner.cmd_ablate(cfg, args.out)
        elif args.command == "synth":
            report = runner.cmd_synth(cfg, args.out)
        else:
            report = runner.cmd_gradcheck(cfg, args.out, args.samples, args.corrupt_rule, args.force_dropout)
    except (ConfigError, runner.ModeMismatchError, runner.SplitRoleError, DeterminismError,
            CohortParseError, IntegrityError, DegenerateCohortError, OSError) as exc:
        print(f"pgsurv {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    _print_summary(report)
    if args.command == "gradcheck" and not report["passed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
