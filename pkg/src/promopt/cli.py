"""Subcommand-per-stage command line.

Exit codes: 0 success, 2 usage, 3 missing/stale stage dependency, 4 input
schema or fitting error, 5 training divergence, 6 infeasible optimization,
1 any other package error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import (
    ElasticitySkip,
    FeatureError,
    FitError,
    InfeasibleError,
    PromoptError,
    RowError,
    SchemaError,
    SizingError,
    StageDependencyError,
    TrainingError,
)
from .ingest import gen_synthetic, write_transactions
from .pipeline import STAGES, PipelineConfig, run_all, run_stage

EXIT_DEPENDENCY = 3
EXIT_SCHEMA = 4
EXIT_TRAINING = 5
EXIT_INFEASIBLE = 6


def _parse_response(text: str) -> list[tuple[float, float]]:
    pairs = []
    for chunk in text.split(","):
        a, b = chunk.split(":")
        pairs.append((float(a), float(b)))
    return pairs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="promopt", description="Promotion offer optimization pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="write a config file with every default spelled out")
    init.add_argument("--workspace", required=True)
    init.add_argument("--input", required=True, help="path to the transaction CSV")
    init.add_argument("--force", action="store_true", help="overwrite an existing config")

    synth = sub.add_parser("synth", help="generate a synthetic transaction log with known offer response")
    synth.add_argument("--out", required=True, help="output CSV path")
    synth.add_argument("--truth", default="", help="where to write the generating parameters (JSON)")
    synth.add_argument("--seed", type=int, default=7)
    synth.add_argument("--consumers", type=int, default=20)
    synth.add_argument("--items", type=int, default=30)
    synth.add_argument("--categories", type=int, default=3)
    synth.add_argument("--periods", type=int, default=26)
    synth.add_argument(
        "--response",
        default="0.08:-2.5,0.1:-3.0,0.06:-2.0",
        help="per-category a:b pairs, comma separated",
    )

    for stage in STAGES:
        stage_parser = sub.add_parser(stage, help=f"run the {stage} stage")
        stage_parser.add_argument("--workspace", required=True)

    run_all_parser = sub.add_parser("run-all", help="run every stage in order")
    run_all_parser.add_argument("--workspace", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init":
            config_path = Path(args.workspace) / "config.ini"
            if config_path.exists() and not args.force:
                print(f"{config_path} already exists (use --force to overwrite)", file=sys.stderr)
                return 1
            PipelineConfig(input_path=args.input).save(args.workspace)
            print(f"wrote {config_path}")
        elif args.command == "synth":
            response = _parse_response(args.response)
            if len(response) != args.categories:
                print("--response must give one a:b pair per category", file=sys.stderr)
                return 2
            dataset = gen_synthetic(
                seed=args.seed,
                n_consumers=args.consumers,
                n_items=args.items,
                n_categories=args.categories,
                periods=args.periods,
                response=response,
            )
            write_transactions(dataset.records, args.out)
            if args.truth:
                Path(args.truth).parent.mkdir(parents=True, exist_ok=True)
                Path(args.truth).write_text(
                    json.dumps({"response": dataset.response, "periods": dataset.n_periods}, sort_keys=True, indent=2)
                    + "\n",
                    encoding="utf-8",
                )
            print(f"wrote {len(dataset.records)} transactions to {args.out}")
        elif args.command == "run-all":
            run_all(args.workspace)
            print("all stages complete")
        else:
            run_stage(args.command, args.workspace)
            print(f"stage {args.command} complete")
    except StageDependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    except (SchemaError, RowError, SizingError, FeatureError, FitError, ElasticitySkip) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (PromoptError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
