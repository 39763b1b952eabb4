"""Command-line interface over campaign stages.

Every verb takes ``--config`` and ``--run-dir``; ``--seed`` overrides the
config seed and ``--force`` recomputes a stage whose artifact already
exists. Exit status is 0 on success and 1 on failure, with the failing
stage named on stderr.
"""

from __future__ import annotations

import argparse
import sys

from .core import CampaignConfig, load_dataset, persist_records
from .reporting import BaselineImport, Campaign, StageError, import_baseline


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="campaign config JSON")
    parser.add_argument("--run-dir", required=True, help="run directory for artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument("--force", action="store_true",
                        help="recompute the stage even if its artifact exists")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowprofile",
        description="Distribution-aligned adversarial text attacks and "
                    "detection-aware evaluation.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in [
        ("fit-stats", "fit training-distribution statistics"),
        ("calibrate", "calibrate detector thresholds"),
        ("finetune", "fine-tune the masked-LM adapters"),
        ("attack", "attack the evaluation split"),
        ("evaluate", "aggregate records into a summary"),
        ("report", "print the campaign summary"),
        ("histograms", "export original-vs-adversarial score histograms"),
        ("run", "run every stage in order"),
    ]:
        p = sub.add_parser(verb, help=help_text)
        _add_common(p)
        if verb == "histograms":
            p.add_argument("--images", action="store_true",
                           help="also render PNGs (needs matplotlib)")
    p = sub.add_parser("import-baseline",
                       help="evaluate externally produced adversarial pairs")
    _add_common(p)
    p.add_argument("--pairs", required=True,
                   help="TSV of 'example_id<TAB>adversarial text'")
    p.add_argument("--out", required=True, help="output record store (JSON lines)")
    return parser


def _campaign(args: argparse.Namespace) -> Campaign:
    config = CampaignConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    return Campaign(config, args.run_dir)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        campaign = _campaign(args)
        if args.verb == "fit-stats":
            campaign.stage_stats(force=args.force)
        elif args.verb == "calibrate":
            campaign.stage_calibrate(force=args.force)
        elif args.verb == "finetune":
            campaign.stage_finetune(force=args.force)
        elif args.verb == "attack":
            campaign.stage_attack(force=args.force)
        elif args.verb == "evaluate":
            campaign.stage_evaluate(force=args.force)
        elif args.verb == "report":
            summary = campaign.stage_evaluate(force=args.force)
            print(summary.render(), end="")
        elif args.verb == "histograms":
            for path in campaign.export_score_histograms(render_images=args.images):
                print(path)
        elif args.verb == "run":
            summary = campaign.run_all()
            print(summary.render(), end="")
        elif args.verb == "import-baseline":
            imported = BaselineImport.parse(args.pairs)
            examples = load_dataset(campaign.config.eval_path, campaign.config.task)
            victim = campaign._load_victim(fresh=True)
            suite = campaign.stage_calibrate()
            records = import_baseline(imported, examples, victim, detectors=suite)
            persist_records(records, args.out)
            print(f"wrote {len(records)} records to {args.out}")
        else:  # pragma: no cover - argparse enforces choices
            raise ValueError(f"unknown verb {args.verb!r}")
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error in {args.verb}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
