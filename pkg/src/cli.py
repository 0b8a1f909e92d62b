import argparse

from src.core import constants as const
from src.core.errors import ConfigError

COMMANDS = {
    "gen-data": "Generate a dataset and client partition per seed.",
    "kernel": "Export H-infinity and H(0) with their spectra.",
    "train": "Run FedAvg per seed and audit the recorded trace.",
    "sweep-clients": "Measure rounds to eps for each client count.",
    "verify": "Re-audit an existing trace directory.",
}


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors raise ConfigError so they map onto the usage exit code."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}", source="cli")


def _add_common(parser: argparse.ArgumentParser) -> None:
    # Every default is None so config-file values are only overridden by flags
    # actually given; RunConfig supplies the real defaults.
    parser.add_argument("--config", type=str, default=None, help="key=value or JSON config file.")
    parser.add_argument(
        "--out", type=str, default=None, help=f"Output directory. Default: {const.DEFAULT_OUTPUT_DIR}."
    )
    parser.add_argument(
        "--seed",
        dest="seeds",
        type=str,
        default=None,
        help="Seeds as a list, e.g. '0,1,2' or '0-4'. Default: 0.",
    )
    parser.add_argument(
        "--record",
        type=str,
        choices=["loss-only", "bounds", "full-states"],
        default=None,
        help=f"Trace recording level. Default: {const.DEFAULT_RECORD_LEVEL}.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", default=None, help="Debug logging.")

    data = parser.add_argument_group("data")
    data.add_argument("-n", type=int, default=None, help=f"Training points. Default: {const.DEFAULT_N}.")
    data.add_argument("-d", type=int, default=None, help=f"Input dimension. Default: {const.DEFAULT_D}.")
    data.add_argument(
        "--distribution",
        choices=["uniform-sphere", "two-cluster"],
        default=None,
        help=f"Input distribution. Default: {const.DEFAULT_DISTRIBUTION}.",
    )
    data.add_argument(
        "--label-rule",
        choices=["linear-teacher", "cluster-sign"],
        default=None,
        help=f"Label rule. Default: {const.DEFAULT_LABEL_RULE}.",
    )
    data.add_argument(
        "--partition",
        type=str,
        default=None,
        help="Client split: 'iid' or 'skewed:<alpha>'. Default: iid.",
    )
    data.add_argument("--data", type=str, default=None, help="Load the dataset from a CSV file.")
    data.add_argument(
        "--partition-file", type=str, default=None, help="Load the client partition from a CSV file."
    )
    data.add_argument(
        "--test-size",
        type=int,
        default=None,
        help=f"Held-out points for the risk estimate. Default: {const.DEFAULT_TEST_SIZE}.",
    )

    train = parser.add_argument_group("training")
    train.add_argument(
        "-m", "--width", type=int, default=None, help=f"Hidden width. Default: {const.DEFAULT_WIDTH}."
    )
    train.add_argument(
        "--clients", type=int, default=None, help=f"Client count N. Default: {const.DEFAULT_CLIENTS}."
    )
    train.add_argument(
        "--local-steps",
        type=int,
        default=None,
        help=f"Local steps K per round. Default: {const.DEFAULT_LOCAL_STEPS}.",
    )
    train.add_argument(
        "--rounds", type=int, default=None, help="Global rounds T. Default: rounds_to_eps(eps)."
    )
    train.add_argument(
        "--eta-local", type=float, default=None, help="Local step size. Default: prescribed rate."
    )
    train.add_argument(
        "--eta-global", type=float, default=None, help="Global step size. Default: 1."
    )
    train.add_argument("--sigma", type=float, default=None, help="Init standard deviation. Default: 1.")
    train.add_argument(
        "--safety-c", type=float, default=None, help="Scale in (0, 1] on the prescribed local rate."
    )
    train.add_argument("--eps", type=float, default=None, help=f"Target ratio. Default: {const.DEFAULT_EPS}.")
    train.add_argument(
        "--max-rounds",
        type=int,
        default=None,
        help=f"Cap on the computed T. Default: {const.DEFAULT_MAX_ROUNDS}.",
    )
    train.add_argument(
        "--workers", type=int, default=None, help="Threads for the per-round client runs. Default: 1."
    )

    audit = parser.add_argument_group("audits")
    audit.add_argument(
        "--audits",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Audit the trace against the bounds. Default: --audits.",
    )
    audit.add_argument(
        "--radius-mode",
        choices=["running", "window"],
        default=None,
        help="Radius used by the Gram drift audit. Default: running.",
    )
    audit.add_argument(
        "--decomposition-radius",
        type=str,
        default=None,
        help="R for the C1..C4 split: a number or 'measured'. Default: the movement radius D.",
    )
    audit.add_argument("--delta", type=float, default=None, help="Failure probability. Default: 0.05.")
    audit.add_argument(
        "--generalization", action="store_true", default=None, help="Report the generalization bound."
    )
    audit.add_argument(
        "--mc-check",
        action="store_true",
        default=None,
        help="Check closed-form H-infinity entries against Monte Carlo.",
    )
    audit.add_argument(
        "--mc-samples", type=int, default=None, help=f"Monte Carlo samples. Default: {const.DEFAULT_MC_SAMPLES}."
    )
    audit.add_argument("--clients-list", type=str, default=None, help="Client counts for sweep-clients.")
    audit.add_argument("--m-list", type=str, default=None, help="Widths for the kernel gap sweep.")
    audit.add_argument("--plot", action="store_true", default=None, help="Write sweep.png.")
    audit.add_argument("--trace-dir", type=str, default=None, help="Trace directory for verify.")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="fl-ntk",
        description="FedAvg training of wide two-layer ReLU networks, audited against NTK bounds.",
    )
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, help_text in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text, description=help_text)
        _add_common(sub)
    return parser


def parse_args(argv=None):
    return build_parser().parse_args(argv)
