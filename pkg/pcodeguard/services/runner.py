import logging
import os
from typing import Optional

from pcodeguard.core.exceptions import AddressUnknownError, FileUnreadableError, UsageError
from pcodeguard.pcode.model import ProgramImage
from pcodeguard.pcode.parser import load_listing, parse_program
from pcodeguard.schemas import ExitStatus, RunConfig, RunReport, Strategy
from pcodeguard.services.detection import InvariantProfile
from pcodeguard.services.emulator import OutcomeKind
from pcodeguard.services.explorer import ExplorationResult, Explorer, build_function_state
from pcodeguard.services.sidecars import Sidecars, load_sidecars
from pcodeguard.state.dump import load_dump, read_manifest
from pcodeguard.state.machine import MachineState, VirtualFileSystem, load_register_map
from pcodeguard.symbolic.solver import SolverAdapter, build_solver

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
ENTRY_SYMBOLS = ("main.main", "main")


class AnalysisRunner:
    """Loads every input named by a RunConfig, runs the selected strategy and builds the report."""

    def __init__(self, config: RunConfig, solver: Optional[SolverAdapter] = None):
        self.config = config
        self.solver = solver
        self.img: Optional[ProgramImage] = None
        self.sidecars = Sidecars()
        self.result: Optional[ExplorationResult] = None

    def load(self) -> ProgramImage:
        logger.debug(f"Loading {len(self.config.listings)} listing(s)")
        sources = [load_listing(spec.path, spec.base) for spec in self.config.listings]
        self.img = parse_program(sources, lenient=self.config.lenient)
        self.sidecars = load_sidecars(
            self.img,
            self.config.xrefs,
            self.config.jump_tables,
            self.config.symbols,
            self.config.panic_from_symbols,
        )
        return self.img

    def profile(self) -> InvariantProfile:
        custom = tuple(self.config.custom_invariants)
        if self.config.c_invariants:
            return InvariantProfile.c_profile(custom)
        return InvariantProfile(custom=custom)

    def _stdin_bytes(self) -> bytes:
        if not self.config.stdin_path:
            return b""
        try:
            with open(self.config.stdin_path, "rb") as fh:
                return fh.read()
        except OSError as e:
            raise FileUnreadableError(self.config.stdin_path, str(e)) from None

    def initial_state(self) -> MachineState:
        config = self.config
        register_map = load_register_map()
        stdin = self._stdin_bytes()

        if config.strategy is Strategy.S3:
            state = build_function_state(
                self.img, config.func.address, config.func.arg_count, config.seed, config.max_depth, register_map
            )
            state.vfs = VirtualFileSystem(stdin, config.symbolic_stdin)
        else:
            state = MachineState(register_map, config.max_depth, config.seed, stdin, config.symbolic_stdin)
            if config.dump:
                load_dump(state, read_manifest(config.dump))
                if config.start is not None:
                    state.pc = config.start
            else:
                state.prepare_stack()
                state.pc = self._entry_address()

        for register in config.symbolic_registers:
            state.make_symbolic_register(register)
        if state.pc not in self.img:
            raise AddressUnknownError(state.pc)
        return state

    def _entry_address(self) -> int:
        if self.config.start is not None:
            return self.config.start
        for name in ENTRY_SYMBOLS:
            address = self.sidecars.symbols.find(name)
            if address is not None:
                logger.info(f"Starting at {name} (0x{address:x})")
                return address
        raise UsageError("no start address: pass --start, --dump, or a symbol table with main.main")

    def run(self) -> RunReport:
        config = self.config
        logger.info(f"Starting {config.strategy.value} analysis of {', '.join(l.path for l in config.listings)}")
        if self.img is None:
            self.load()
        state = self.initial_state()

        solver = self.solver or build_solver(timeout_ms=config.solver_timeout_ms)
        explorer = Explorer(self.img, self.sidecars, self.profile(), config, solver)
        fork = config.strategy is not Strategy.S1
        self.result = explorer.explore(state, config.strategy if config.strategy is Strategy.S3 else Strategy.S1, fork)

        report = self.build_report(self.result)
        self.write_report(report)
        logger.info(f"Analysis finished: {report.exit_status.value}, {len(report.findings)} finding(s)")
        return report

    def build_report(self, result: ExplorationResult) -> RunReport:
        root = result.root
        fault = None
        if result.findings:
            status = ExitStatus.FINDING_HALT
        elif root is not None and root.outcome is not None and root.outcome.kind is OutcomeKind.FAULTED:
            status = ExitStatus.FAULT
            fault = str(root.outcome.fault)
        elif result.stats.budget_exhausted:
            status = ExitStatus.BUDGET_EXHAUSTED
        else:
            status = ExitStatus.CLEAN_TERMINATION

        stdout = root.state.vfs.stdout.decode("utf-8", errors="replace") if root is not None else ""
        return RunReport(
            strategy=self.config.strategy,
            exit_status=status,
            findings=result.findings,
            stats=result.stats,
            fault=fault,
            stdout=stdout,
        )

    def write_report(self, report: RunReport) -> str:
        os.makedirs(self.config.output_dir, exist_ok=True)
        path = os.path.join(self.config.output_dir, REPORT_FILE)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.model_dump_json(indent=2))
            fh.write("\n")
        logger.debug(f"Report written to {path}")
        return path
