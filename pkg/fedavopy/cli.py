import argparse
import logging
import sys
from dataclasses import replace

from pandas import read_csv

from . import analysis
from .experiment import load_config, run_experiment
from .federated import ALGORITHMS


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedavopy", description="Federated learning with per-client hyperparameter tuning."
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="Log per-client details.")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[common], help="Run an experiment from a config.")
    run.add_argument("--config", required=True, help="Path to the JSON experiment config.")
    run.add_argument("--seed-override", type=int, help="Run this single seed instead.")
    run.add_argument("--algorithm", choices=ALGORITHMS, help="Run this single algorithm instead.")
    run.add_argument("--out", help="Output directory, overriding output_path.")

    report = commands.add_parser(
        "report", parents=[common], help="Print rounds-to-threshold of metric CSVs."
    )
    report.add_argument("--csv", nargs="+", required=True, help="Per-round metric CSV files.")
    report.add_argument("--threshold", type=float, required=True, help="Accuracy threshold.")
    return parser


def run_command(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.seed_override is not None:
        overrides["seeds"] = [args.seed_override]
    if args.algorithm is not None:
        overrides["algorithms"] = [args.algorithm]
    if args.out is not None:
        overrides["output_path"] = args.out
    cfg = replace(cfg, **overrides)

    summary = run_experiment(cfg)
    print(summary.to_string(index=False))
    return 0


def report_command(args: argparse.Namespace) -> int:
    for path in args.csv:
        df = read_csv(path)
        if "global_accuracy" not in df or "round" not in df:
            raise ValueError(f"{path} is not a per-round metric file.")
        accuracy = df.loc[df["round"] >= 1, "global_accuracy"].tolist()
        crossed = analysis.rounds_to_threshold(accuracy, args.threshold) if accuracy else None
        final = df["global_accuracy"].iloc[-1]
        print(f"{path}\trounds_to_threshold={crossed}\tfinal_accuracy={final:.4f}")
    return 0


def main(argv: list = None) -> int:
    """
    Entry point of the `fedavopy` command. Returns the process exit code.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            return run_command(args)
        return report_command(args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"fedavopy: {e}", file=sys.stderr)
        return 1
