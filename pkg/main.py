"""
Main CLI entry point for federated CycleGAN experiments.

Subcommands:
1. train   - run one experiment config centrally or federated
2. verify  - decomposition, finite-difference, equivalence and codec suites
3. bench   - parameter counts or upload bytes of both model variants
4. report  - held-out metrics of a finished run
5. series  - per-round loss series of a run as gnuplot columns
"""
import argparse
import sys
from dotenv import load_dotenv

# Load environment variables before settings and logging are read
load_dotenv()

from src.cli.commands import run_command  # noqa: E402
from src.cli.config import MODES  # noqa: E402
from src.cli.suites import SUITES  # noqa: E402


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcyclegan", description="Federated CycleGAN experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train from a TOML experiment config")
    train.add_argument("config_path", metavar="config", help="Path to the experiment config")
    train.add_argument("--mode", choices=MODES, default="federated")
    train.add_argument("--output-dir", dest="output_dir", default=None, help="Overrides [output].directory")

    verify = sub.add_parser("verify", help="Run verification suites")
    verify.add_argument("--suite", dest="suites", action="append", choices=sorted(SUITES),
                        help="Suite to run (repeatable; all when omitted)")
    verify.add_argument("--report", dest="report_path", default=None, help="Write a JSON report here")

    bench = sub.add_parser("bench", help="Compare the standard and switchable variants")
    bench.add_argument("what", choices=("params", "bytes"))
    bench.add_argument("--config", dest="config_path", default=None)

    report = sub.add_parser("report", help="Held-out metrics of a finished run")
    report.add_argument("run_dir")

    series = sub.add_parser("series", help="Per-round loss series of a finished run")
    series.add_argument("run_dir")
    series.add_argument("--out", default=None, help="Output .dat path (default: <run_dir>/series.dat)")
    return parser


def main(argv=None) -> int:
    """Main CLI function."""
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    return run_command(command, **args)


if __name__ == "__main__":
    sys.exit(main())
