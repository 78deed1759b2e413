"""
Concolic path exploration.

Every explored path is a fresh run from the initial state driven by a seed
(symbolic input name -> concrete value). After a run, each symbolic branch
past the run's flip point is negated in turn; satisfiable alternatives become
new runs whose seed is the solver model.
"""

import logging
import random
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Set, Tuple

from pcodeguard.core.exceptions import AddressUnknownError, UsageError
from pcodeguard.pcode.model import ProgramImage
from pcodeguard.schemas import ExplorationStats, Finding, RunConfig, Strategy
from pcodeguard.services.detection import Detector, FindingCollector, InvariantProfile, PanicXrefSet
from pcodeguard.services.emulator import Emulator, EmulatorOptions, OutcomeKind, StepOutcome, Stub
from pcodeguard.services.sidecars import Sidecars
from pcodeguard.services.tracing import RunArtifacts
from pcodeguard.state.machine import MachineState, RegisterMap
from pcodeguard.symbolic.expr import render
from pcodeguard.symbolic.solver import SolverAdapter, VerdictStatus, build_solver
from pcodeguard.symbolic.values import PathConstraint

logger = logging.getLogger(__name__)

SYSV_ARG_REGISTERS = ("rdi", "rsi", "rdx", "rcx", "r8", "r9")


@dataclass
class PathResult:
    run_id: int
    outcome: Optional[StepOutcome]
    state: MachineState
    budget_hit: bool = False

    @property
    def findings(self) -> List[Finding]:
        return list(self.state.findings)

    @property
    def constraints(self) -> List[PathConstraint]:
        return self.state.constraints


@dataclass(frozen=True)
class Candidate:
    run_id: int
    seed: Dict[str, int]
    depth: int = 0
    # Constraints before this index are fixed by the parent
    bound: int = 0


@dataclass
class ExplorationResult:
    findings: List[Finding]
    stats: ExplorationStats
    root: Optional[PathResult] = None
    runs: List[PathResult] = field(default_factory=list)


def run_path(state: MachineState, emulator: Emulator, max_steps: int, run_id: int = 0) -> PathResult:
    """Steps until the path exits, faults, hits an invariant or runs out of steps."""
    while state.steps < max_steps:
        outcome = emulator.step(state)
        if outcome.kind is not OutcomeKind.CONTINUE:
            logger.debug(f"Run {run_id} ended after {state.steps} steps: {outcome.kind.value}")
            return PathResult(run_id, outcome, state)
    logger.info(f"Run {run_id} hit the step budget ({max_steps})")
    return PathResult(run_id, None, state, budget_hit=True)


def emulator_options(config: RunConfig, explore: bool = True) -> EmulatorOptions:
    return EmulatorOptions(
        strict=config.strict,
        explore_tables=explore,
        continue_after_finding=config.continue_after_finding,
        debug=config.debug,
        stubs={s.address: Stub(s.name, s.value) for s in config.stubs},
        syscall_stub=config.syscall_stub,
    )


def _signature(constraint: PathConstraint) -> Tuple:
    return (constraint.origin, constraint.taken, render(constraint.expr))


class Explorer:
    def __init__(
        self,
        img: ProgramImage,
        sidecars: Sidecars,
        profile: InvariantProfile,
        config: RunConfig,
        solver: Optional[SolverAdapter] = None,
    ):
        self.img = img
        self.sidecars = sidecars
        self.profile = profile
        self.config = config
        self.solver = solver or build_solver(timeout_ms=config.solver_timeout_ms)
        self.initial: Optional[MachineState] = None
        self.base_strategy = Strategy.S1
        self.explore_enabled = True
        self._owner: Optional[threading.Thread] = None
        self._local = threading.local()

    # --- Single runs ---

    def worker_solver(self) -> SolverAdapter:
        """The shared adapter on the exploring thread; pool threads each build their own."""
        if self._owner is None or threading.current_thread() is self._owner:
            return self.solver
        solver = getattr(self._local, "solver", None)
        if solver is None:
            solver = self.solver.fresh()
            self._local.solver = solver
        return solver

    def _spawn(self, depth: int) -> MachineState:
        if depth == 0:
            return self.initial.clone()
        base = self.initial.clone()
        base.fork_depth = depth - 1
        return base.fork()

    def _artifacts(self, run_id: int) -> RunArtifacts:
        wants_files = self.config.log or self.config.trace
        return RunArtifacts(
            self.config.output_dir if wants_files else None,
            run_id,
            log=self.config.log,
            trace=self.config.trace,
            symbols=self.sidecars.symbols,
            debug=self.config.debug,
        )

    def _run(self, candidate: Candidate) -> PathResult:
        state = self._spawn(candidate.depth)
        state.install_seed(candidate.seed)
        strategy = self.base_strategy if candidate.run_id == 0 else Strategy.S2
        detector = Detector(self.sidecars.xrefs, self.profile, self.worker_solver(), strategy, candidate.run_id)
        with self._artifacts(candidate.run_id) as artifacts:
            emulator = Emulator(
                self.img,
                self.sidecars.tables,
                detector,
                artifacts,
                emulator_options(self.config, explore=self.explore_enabled),
            )
            return run_path(state, emulator, self.config.max_steps, candidate.run_id)

    # --- Exploration ---

    def explore(self, initial: MachineState, base_strategy: Strategy = Strategy.S1, fork: bool = True) -> ExplorationResult:
        self.initial = initial
        self.base_strategy = base_strategy
        self._owner = threading.current_thread()
        self.explore_enabled = fork

        stats = ExplorationStats()
        collector = FindingCollector()
        seen: Set[Tuple] = set()
        queue: Deque[Candidate] = deque([Candidate(0, dict(initial.seed))])
        next_id = 1
        root: Optional[PathResult] = None
        runs: List[PathResult] = []

        pool = ThreadPoolExecutor(max_workers=self.config.workers) if self.config.workers > 1 else None
        try:
            while queue:
                batch = [queue.popleft() for _ in range(min(self.config.workers, len(queue)))]
                if pool is not None and len(batch) > 1:
                    results = list(pool.map(self._run, batch))
                else:
                    results = [self._run(c) for c in batch]

                for candidate, result in zip(batch, results):
                    runs.append(result)
                    if root is None:
                        root = result
                    stats.runs += 1
                    stats.steps += result.state.steps
                    if result.budget_hit:
                        stats.exhaust("max_steps")
                    if result.outcome is not None and result.outcome.kind is OutcomeKind.FAULTED:
                        stats.faults += 1
                        if candidate.run_id != 0:
                            logger.info(f"Run {candidate.run_id} faulted: {result.outcome.fault}")
                    for finding in result.findings:
                        collector.add(finding)
                    if fork:
                        next_id = self._expand(candidate, result, queue, seen, stats, next_id)
        finally:
            if pool is not None:
                pool.shutdown(wait=True)

        findings = collector.findings
        if self.config.validate_witnesses:
            findings = [self._validate(f) for f in findings]

        logger.info(
            f"Exploration finished: {stats.runs} run(s), {stats.forks} fork(s), "
            f"{stats.sat}/{stats.unsat}/{stats.unknown} sat/unsat/unknown, {len(findings)} finding(s)"
        )
        return ExplorationResult(findings, stats, root, runs)

    def _expand(
        self,
        candidate: Candidate,
        result: PathResult,
        queue: Deque[Candidate],
        seen: Set[Tuple],
        stats: ExplorationStats,
        next_id: int,
    ) -> int:
        constraints = result.constraints
        prefix: Tuple = tuple(_signature(c) for c in constraints[: candidate.bound])
        for i in range(candidate.bound, len(constraints)):
            constraint = constraints[i]
            for alt_index, alternative in enumerate(constraint.alternative_predicates()):
                key = (prefix, constraint.origin, alt_index)
                if key in seen:
                    continue
                seen.add(key)
                if stats.forks >= self.config.max_forks:
                    stats.exhaust("max_forks")
                    return next_id
                if candidate.depth + 1 > self.config.max_depth:
                    stats.exhaust("max_depth")
                    return next_id

                verdict = self.solver.check_sat(constraints[:i], extra=alternative, hints=result.state.bindings)
                if verdict.status is VerdictStatus.SAT:
                    stats.sat += 1
                elif verdict.status is VerdictStatus.UNSAT:
                    stats.unsat += 1
                    continue
                else:
                    stats.unknown += 1
                    logger.debug(f"Alternative at 0x{constraint.origin[0]:x} undecided: {verdict.reason}")
                    continue

                seed = result.state.seed_from_model(verdict.model)
                stats.forks += 1
                queue.append(Candidate(next_id, seed, candidate.depth + 1, i + 1))
                logger.debug(
                    f"Queued run {next_id} flipping 0x{constraint.origin[0]:x}/{constraint.origin[1]} (depth {candidate.depth + 1})"
                )
                next_id += 1
            prefix = prefix + (_signature(constraint),)
        return next_id

    # --- Witness replay ---

    def replay_witness(self, finding: Finding) -> bool:
        """Re-runs concretely with the witness as seed; True if the same finding recurs."""
        if finding.witness is None or self.initial is None:
            return False
        state = self.initial.clone()
        state.install_seed(finding.witness)
        detector = Detector(self.sidecars.xrefs, self.profile, None, Strategy.S1, finding.run_id)
        options = emulator_options(self.config, explore=False)
        options.continue_after_finding = True
        emulator = Emulator(self.img, self.sidecars.tables, detector, RunArtifacts(None), options)
        result = run_path(state, emulator, self.config.max_steps, finding.run_id)
        return any(f.address == finding.address and f.label == finding.label for f in result.findings)

    def _validate(self, finding: Finding) -> Finding:
        if finding.witness is None:
            return finding
        ok = self.replay_witness(finding)
        if not ok:
            logger.warning(f"Witness for {finding.label} at 0x{finding.address:x} did not replay")
        return finding.model_copy(update={"replayed": ok})


def build_function_state(
    img: ProgramImage,
    func_addr: int,
    arg_count: int,
    seed: int = 0,
    max_depth: Optional[int] = None,
    register_map: Optional[RegisterMap] = None,
) -> MachineState:
    """Fresh state at `func_addr` with symbolic System V integer arguments and a sentinel return."""
    if func_addr not in img:
        raise AddressUnknownError(func_addr)
    if not 0 <= arg_count <= len(SYSV_ARG_REGISTERS):
        raise UsageError(f"argument count {arg_count} outside 0..{len(SYSV_ARG_REGISTERS)}")
    state = MachineState(register_map, max_fork_depth=max_depth, rng_seed=seed)
    state.prepare_stack()
    state.pc = func_addr
    rng = random.Random(seed)
    for i in range(arg_count):
        state.make_symbolic_register(SYSV_ARG_REGISTERS[i], f"arg{i}", default=rng.getrandbits(64))
    return state


def s2_explore(
    initial: MachineState,
    img: ProgramImage,
    xrefs: PanicXrefSet,
    config: RunConfig,
    sidecars: Optional[Sidecars] = None,
    profile: Optional[InvariantProfile] = None,
    solver: Optional[SolverAdapter] = None,
) -> Tuple[List[Finding], ExplorationStats]:
    sidecars = sidecars or Sidecars(xrefs=xrefs)
    explorer = Explorer(img, sidecars, profile or InvariantProfile(), config, solver)
    result = explorer.explore(initial, Strategy.S1, fork=True)
    return result.findings, result.stats


def s3_run(
    func_addr: int,
    arg_count: int,
    img: ProgramImage,
    xrefs: PanicXrefSet,
    profile: InvariantProfile,
    config: RunConfig,
    sidecars: Optional[Sidecars] = None,
    solver: Optional[SolverAdapter] = None,
) -> List[Finding]:
    state = build_function_state(img, func_addr, arg_count, config.seed, config.max_depth)
    sidecars = sidecars or Sidecars(xrefs=xrefs)
    explorer = Explorer(img, sidecars, profile, config, solver)
    return explorer.explore(state, Strategy.S3, fork=True).findings
