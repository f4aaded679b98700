"""`fewlabel` command-line entry point."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from fewlabel_gan.cli.commands import (
    cmd_audit,
    cmd_evaluate,
    cmd_pretrain,
    cmd_report,
    cmd_train,
    select_configs,
)
from fewlabel_gan.models.manifest import ReportTarget, load_manifest
from fewlabel_gan.utils.logger import setup_logger
from fewlabel_gan.utils.validators import ConfigurationError, ValidationError

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def parse_seeds(value: str) -> List[int]:
    try:
        seeds = [int(s) for s in value.split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"Seeds must be integers, got '{value}'") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("At least one seed is required")
    return seeds


def _add_selection(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, type=Path, help="Experiment manifest (JSON)")
    parser.add_argument("--method", default=None, help="Only this method (name or run name)")
    parser.add_argument("--k-percent", type=float, default=None, help="Only this label fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewlabel", description="Label-efficient conditional GAN training and evaluation"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pretrain = sub.add_parser("pretrain", help="Train the embedder and label providers")
    _add_selection(pretrain)

    train = sub.add_parser("train", help="Train GANs for every method and seed")
    _add_selection(train)
    train.add_argument("--seeds", type=parse_seeds, default=None, help="e.g. 1,2,3")
    train.add_argument("--out", type=Path, default=None, help="Override the run directory")
    train.add_argument(
        "--dry-run", action="store_true", help="Print the resolved configs and exit"
    )

    evaluate = sub.add_parser("evaluate", help="Re-evaluate the latest checkpoints")
    _add_selection(evaluate)
    evaluate.add_argument("--seeds", type=parse_seeds, default=None)
    evaluate.add_argument("--out", type=Path, default=None, help="Run directory to read")

    report = sub.add_parser("report", help="Tables and charts from metric logs")
    report.add_argument("logs", type=Path, help="Directory with metrics.jsonl files")
    report.add_argument("--out", type=Path, default=None, help="Default: <logs>/report")
    report.add_argument(
        "--targets",
        default=None,
        help="Comma list of " + ", ".join(t.value for t in ReportTarget),
    )

    audit = sub.add_parser("audit", help="Parameter tables in reference naming")
    audit.add_argument("--scale", choices=("full", "desk"), default="full")
    audit.add_argument("--num-classes", type=int, default=None)
    return parser


def run(args: argparse.Namespace) -> int:
    if args.command == "report":
        targets = None
        if args.targets:
            try:
                targets = [ReportTarget(t.strip()) for t in args.targets.split(",")]
            except ValueError as exc:
                raise ConfigurationError(f"Unknown report target in '{args.targets}'") from exc
        cmd_report(args.logs, args.out or args.logs / "report", targets)
        return EXIT_OK
    if args.command == "audit":
        cmd_audit(args.scale, args.num_classes)
        return EXIT_OK

    manifest = load_manifest(args.manifest)
    if getattr(args, "out", None) is not None:
        manifest.out_dir = str(args.out.resolve())
    configs = select_configs(manifest, args.method, args.k_percent)
    seeds = getattr(args, "seeds", None) or manifest.seeds

    if args.command == "pretrain":
        for path, status in cmd_pretrain(manifest, configs).items():
            print(f"{status:>8}  {path}")
    elif args.command == "train":
        cmd_train(manifest, configs, seeds, dry_run=args.dry_run)
    elif args.command == "evaluate":
        cmd_evaluate(manifest, configs, seeds)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ValidationError, ConfigurationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
