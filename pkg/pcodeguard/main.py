import argparse
import json
import logging
import sys
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, TextIO

from pydantic import ValidationError

from pcodeguard.core.config import settings
from pcodeguard.core.exceptions import FileUnreadableError, PcodeGuardError, UsageError
from pcodeguard.core.logging import setup_logging
from pcodeguard.schemas import ExitStatus, RunConfig, RunReport, parse_int
from pcodeguard.services.runner import AnalysisRunner

logger = logging.getLogger(__name__)


class CliArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting, so run_cli owns the exit code."""

    def error(self, message: str):
        raise UsageError(message)


@dataclass
class CliResult:
    exit_code: int
    report: Optional[RunReport] = None


def _hex(text: str) -> int:
    try:
        return parse_int(text)
    except (TypeError, ValueError):
        raise argparse.ArgumentTypeError(f"invalid address or number '{text}'") from None


def _func(text: str) -> Dict[str, Any]:
    address, sep, argc = text.partition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected ADDR:ARGC, got '{text}'")
    try:
        return {"address": parse_int(address), "arg_count": int(argc, 10)}
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ADDR:ARGC, got '{text}'") from None


def _stub(text: str) -> Dict[str, Any]:
    address, sep, rest = text.partition(":")
    name, _, value = rest.partition("=")
    if not sep or not name:
        raise argparse.ArgumentTypeError(f"expected ADDR:NAME=VALUE, got '{text}'")
    try:
        return {"address": parse_int(address), "name": name, "value": parse_int(value or "0")}
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ADDR:NAME=VALUE, got '{text}'") from None


def build_parser() -> CliArgumentParser:
    parser = CliArgumentParser(
        prog="pcodeguard",
        description="Concolic P-Code emulation that detects Go runtime panics and C memory-safety bugs.",
    )
    parser.add_argument("listings", nargs="*", metavar="LISTING", help="P-Code listing file(s)")
    parser.add_argument("--config", metavar="FILE", help="JSON run configuration; flags override it")
    parser.add_argument("--base", type=_hex, action="append", metavar="ADDR", help="base offset per listing")

    inputs = parser.add_argument_group("inputs")
    inputs.add_argument("--xrefs", metavar="FILE")
    inputs.add_argument("--jump-tables", metavar="FILE")
    inputs.add_argument("--symbols", metavar="FILE")
    inputs.add_argument("--dump", metavar="MANIFEST")
    inputs.add_argument("--stdin", dest="stdin_path", metavar="FILE")
    inputs.add_argument("--symbolic-stdin", type=int, metavar="N")
    inputs.add_argument("--symbolic-reg", dest="symbolic_registers", action="append", metavar="NAME")
    inputs.add_argument("--stub", dest="stubs", type=_stub, action="append", metavar="ADDR:NAME=VALUE")
    inputs.add_argument("--syscall-stub", type=_hex, metavar="ADDR")

    start = parser.add_argument_group("start and strategy")
    start.add_argument("--start", type=_hex, metavar="ADDR")
    start.add_argument("--func", type=_func, metavar="ADDR:ARGC")
    start.add_argument("--strategy", type=str.lower, choices=["s1", "s2", "s3"])
    start.add_argument("--interactive", action="store_true")

    detection = parser.add_argument_group("detection")
    detection.add_argument("--c-invariants", action="store_true", default=None)
    detection.add_argument("--panic-from-symbols", action="store_true", default=None)
    detection.add_argument("--continue-after-finding", action="store_true", default=None)
    detection.add_argument(
        "--no-validate-witnesses", dest="validate_witnesses", action="store_false", default=None
    )

    budgets = parser.add_argument_group("budgets")
    budgets.add_argument("--max-steps", type=int, metavar="N")
    budgets.add_argument("--max-forks", type=int, metavar="N")
    budgets.add_argument("--max-depth", type=int, metavar="N")
    budgets.add_argument("--solver-timeout-ms", type=int, metavar="N")
    budgets.add_argument("--workers", type=int, metavar="N")
    budgets.add_argument("--seed", type=int, metavar="N")

    output = parser.add_argument_group("output")
    output.add_argument("--out", dest="output_dir", metavar="DIR")
    output.add_argument("--log", action=argparse.BooleanOptionalAction, default=None)
    output.add_argument("--trace", action=argparse.BooleanOptionalAction, default=None)
    output.add_argument("--strict", action="store_true", default=None)
    output.add_argument("--lenient", action="store_true", default=None)
    output.add_argument("--debug", action="store_true", default=None)
    output.add_argument("--log-level", metavar="LEVEL")
    return parser


# Flags copied into the run config as-is when given
PASSTHROUGH = (
    "xrefs", "jump_tables", "symbols", "dump", "stdin_path", "symbolic_stdin", "symbolic_registers",
    "stubs", "syscall_stub", "start", "func", "c_invariants", "panic_from_symbols",
    "continue_after_finding", "validate_witnesses", "max_steps", "max_forks", "max_depth",
    "solver_timeout_ms", "workers", "seed", "output_dir", "log", "trace", "strict", "lenient", "debug",
)


def _read_config_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise FileUnreadableError(path, str(e)) from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}: run configuration must be a JSON object")
    return data


def config_values(args: argparse.Namespace) -> Dict[str, Any]:
    """Merges the optional config file with the flags that were actually given."""
    values = _read_config_file(args.config) if args.config else {}

    if args.listings:
        bases = args.base or []
        if len(bases) > len(args.listings):
            raise UsageError("more --base offsets than listings")
        values["listings"] = [
            {"path": path, "base": bases[i] if i < len(bases) else 0} for i, path in enumerate(args.listings)
        ]
    elif args.base:
        raise UsageError("--base given without listings")

    for name in PASSTHROUGH:
        value = getattr(args, name)
        if value is not None:
            values[name] = value
    if args.strategy:
        values["strategy"] = args.strategy.upper()
    return values


def _ask(question: str, default: str, stdin: TextIO, stdout: TextIO) -> str:
    stdout.write(f"{question} [{default}]: ")
    stdout.flush()
    answer = stdin.readline().strip()
    return answer or default


def prompt_interactive(values: Dict[str, Any], stdin: TextIO, stdout: TextIO) -> Dict[str, Any]:
    """Asks for the start address, the strategy and the C invariants on the given streams."""
    func = values.get("func") or {}
    current = values.get("start", func.get("address"))
    if isinstance(current, int):
        current = f"0x{current:x}"
    answer = _ask("Start address", str(current) if current is not None else "main", stdin, stdout)

    strategy = _ask("Strategy (s1/s2/s3)", str(values.get("strategy", "S1")).lower(), stdin, stdout).upper()
    if strategy not in ("S1", "S2", "S3"):
        raise UsageError(f"unknown strategy '{strategy}'")
    values["strategy"] = strategy

    address = None
    if answer != "main":
        try:
            address = parse_int(answer)
        except ValueError:
            raise UsageError(f"invalid start address '{answer}'") from None

    if strategy == "S3":
        if address is None:
            raise UsageError("strategy S3 needs a function address")
        argc = _ask("Argument count", str(func.get("arg_count", 0)), stdin, stdout)
        if not argc.isdigit():
            raise UsageError(f"invalid argument count '{argc}'")
        values["func"] = {"address": address, "arg_count": int(argc)}
        values.pop("start", None)
    else:
        values.pop("func", None)
        if address is None:
            values.pop("start", None)
        else:
            values["start"] = address

    enabled = "y" if values.get("c_invariants") else "n"
    values["c_invariants"] = _ask("Enable C invariants (y/n)", enabled, stdin, stdout).lower().startswith("y")
    return values


def build_config(values: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise UsageError(problems) from None


def _print_summary(report: RunReport, stdout: TextIO):
    for finding in report.findings:
        stdout.write(finding.summary() + "\n")
    if report.exit_status is ExitStatus.FAULT:
        stdout.write(f"Fault: {report.fault}\n")
    stdout.write(
        f"{report.exit_status.value}: {len(report.findings)} finding(s), "
        f"{report.stats.runs} run(s), {report.stats.steps} step(s)\n"
    )


def run_cli(
    argv: Optional[List[str]] = None,
    stdin: Optional[TextIO] = None,
    stdout: Optional[TextIO] = None,
) -> CliResult:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        setup_logging(args.log_level or ("DEBUG" if args.debug else settings.LOG_LEVEL))
        values = config_values(args)
        if args.interactive:
            values = prompt_interactive(values, stdin, stdout)
        config = build_config(values)

        runner = AnalysisRunner(config)
        report = runner.run()
        _print_summary(report, stdout)
        return CliResult(report.exit_code, report)

    except UsageError as e:
        logger.warning(f"{e.code}: {e.message}")
        sys.stderr.write(parser.format_usage())
        sys.stderr.write(f"{parser.prog}: error: {e.message}\n")
        return CliResult(e.exit_code)
    except PcodeGuardError as e:
        logger.warning(f"{e.code}: {e.message}")
        sys.stderr.write(f"{parser.prog}: {e.message}\n")
        return CliResult(e.exit_code)
    except Exception as e:
        logger.error(f"Unhandled error: {e}", exc_info=True)
        sys.stderr.write(f"{parser.prog}: internal error: {e}\n")
        return CliResult(3)


def main():
    sys.exit(run_cli().exit_code)


if __name__ == "__main__":
    main()
