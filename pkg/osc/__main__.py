import argparse
import logging
import os
import sys

from osc.cli import ExitStatus, cmd_plan, cmd_prov, cmd_run, cmd_validate

ADAPTER_NAMES = {"sim": "simulated", "simulated": "simulated", "shell": "shell"}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ExitStatus.USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="osc", description="OSC scientific workflow toolchain.")
    parser.add_argument(
        "--verbose",
        "-v",
        action="store_true",
        help="Log debug messages to stderr",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    validate = commands.add_parser("validate", help="Check a model against rules R1-R14")
    validate.add_argument("file", type=str, help="The .osc model file")

    plan = commands.add_parser("plan", help="Print the execution plan as JSON")
    plan.add_argument("file", type=str, help="The .osc model file")
    plan.add_argument(
        "--bind",
        action="append",
        default=[],
        metavar="PORT=DATASET",
        help="Bind a Bifurcacao port: F.port=dir:PATH, F.port=values:a,b or F.port=repeat:N",
    )
    plan.add_argument("--format", type=str, default="json", choices=["json"], help="Output format")

    run = commands.add_parser("run", help="Execute the workflow locally")
    run.add_argument("file", type=str, help="The .osc model file")
    run.add_argument(
        "--bind",
        action="append",
        default=[],
        metavar="PORT=DATASET",
        help="Bind a Bifurcacao port, as for `plan`",
    )
    run.add_argument(
        "--adapter",
        type=str,
        default=os.getenv("OSC_ADAPTER", "sim"),
        choices=sorted(ADAPTER_NAMES),
        help="Execution adapter",
    )
    run.add_argument("--jobs", "-j", type=int, default=int(os.getenv("OSC_JOBS", 1)), help="Concurrent nodes")
    run.add_argument("--faults", type=str, default=None, help="JSON fault script for the simulated adapter")
    run.add_argument(
        "--workdir",
        type=str,
        default=os.getenv("OSC_WORKDIR", "osc-work"),
        help="Where node outputs, report.json and provenance.json are written",
    )
    run.add_argument(
        "--retries-are-additional",
        action="store_true",
        help="Read num_tentativas as retries after the first attempt",
    )
    run.add_argument("--progress", action="store_true", help="Show a progress bar on stderr")

    prov = commands.add_parser("prov", help="Export the OPM graph of one version")
    prov.add_argument("workdir", type=str, help="Work directory of a previous run")
    prov.add_argument("--version", type=str, required=True, help="OPM version to export")
    prov.add_argument(
        "--granularity",
        action="append",
        default=[],
        metavar="FLOW=alta|baixa",
        help="Override the granularity of a flow",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="[%(levelname)s] %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if args.command == "validate":
        return cmd_validate(args.file)
    if args.command == "plan":
        return cmd_plan(args.file, args.bind, args.format)
    if args.command == "run":
        return cmd_run(
            args.file,
            args.bind,
            adapter=ADAPTER_NAMES[args.adapter],
            jobs=args.jobs,
            faults=args.faults,
            workdir=args.workdir,
            retries_are_additional=args.retries_are_additional,
            progress=args.progress,
        )
    return cmd_prov(args.workdir, args.version, args.granularity)


if __name__ == "__main__":
    sys.exit(main())
