"""
Finding producers: the panic cross-reference check (S1), the C memory-safety
invariants and user-defined register predicates.
"""

import enum
import logging
import threading
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

from pcodeguard.pcode.model import PcodeOp
from pcodeguard.schemas import Comparator, CustomInvariant, Finding, Strategy
from pcodeguard.state.machine import MachineState
from pcodeguard.symbolic.expr import BinOp, BitvecExpr, binary, lit, mask, negate
from pcodeguard.symbolic.solver import SolverAdapter

logger = logging.getLogger(__name__)

# Go runtime panic classes, display names as reported
PANIC_KINDS: Dict[str, str] = {
    "nil_pointer_dereference": "Nil Pointer Dereference",
    "index_out_of_range": "Index Out Of Range",
    "nil_map_assignment": "Nil Map Assignment",
    "too_large_channel_creation": "Too Large Channel Creation",
    "negative_shift": "Negative Shift",
}

NULL_DEREF = "null_deref"
MISALIGNED_ACCESS = "misaligned_access"
UNINITIALIZED_READ = "uninitialized_read"
DIVISION_BY_ZERO = "division_by_zero"
TABLE_INDEX_OVERFLOW = "table_index_overflow"

C_KINDS: Dict[str, str] = {
    NULL_DEREF: "NullDeref",
    MISALIGNED_ACCESS: "MisalignedAccess",
    UNINITIALIZED_READ: "UninitializedRead",
    DIVISION_BY_ZERO: "DivisionByZero",
    TABLE_INDEX_OVERFLOW: "TableIndexOverflow",
}


def display_kind(label: str) -> str:
    if label in PANIC_KINDS:
        return PANIC_KINDS[label]
    if label in C_KINDS:
        return C_KINDS[label]
    return label.replace("_", " ").title()


@dataclass(frozen=True)
class XrefEntry:
    label: str
    message: str


class PanicXrefSet:
    """Addresses that transfer control to a runtime panic routine."""

    def __init__(self, entries: Optional[Mapping[int, XrefEntry]] = None, source: str = ""):
        self._entries: Dict[int, XrefEntry] = dict(entries or {})
        self.source = source

    def add(self, address: int, label: str, message: str) -> bool:
        if address in self._entries:
            return False
        self._entries[address] = XrefEntry(label, message)
        return True

    def get(self, address: int) -> Optional[XrefEntry]:
        return self._entries.get(address)

    def __contains__(self, address: object) -> bool:
        return address in self._entries

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._entries))

    def __len__(self) -> int:
        return len(self._entries)


@dataclass(frozen=True)
class InvariantProfile:
    panic_xref: bool = True
    null_deref: bool = False
    misaligned_access: bool = False
    uninitialized_read: bool = False
    division_by_zero: bool = False
    custom: Tuple[CustomInvariant, ...] = field(default=())

    @classmethod
    def c_profile(cls, custom: Sequence[CustomInvariant] = ()) -> "InvariantProfile":
        return cls(True, True, True, True, True, tuple(custom))

    @property
    def checks_accesses(self) -> bool:
        return self.null_deref or self.misaligned_access or self.uninitialized_read


class AccessKind(str, enum.Enum):
    LOAD = "Load"
    STORE = "Store"


@dataclass(frozen=True)
class AccessEvent:
    kind: AccessKind
    address: int
    size: int
    address_expr: Optional[BitvecExpr] = None


_COMPARATORS: Dict[Comparator, Tuple[BinOp, bool]] = {
    Comparator.EQ: (BinOp.EQUAL, False),
    Comparator.NE: (BinOp.NOTEQUAL, False),
    Comparator.ULT: (BinOp.LESS, False),
    Comparator.ULE: (BinOp.LESSEQUAL, False),
    Comparator.UGT: (BinOp.LESS, True),
    Comparator.UGE: (BinOp.LESSEQUAL, True),
    Comparator.SLT: (BinOp.SLESS, False),
    Comparator.SLE: (BinOp.SLESSEQUAL, False),
    Comparator.SGT: (BinOp.SLESS, True),
    Comparator.SGE: (BinOp.SLESSEQUAL, True),
}


def comparison(comparator: Comparator, left: BitvecExpr, right: BitvecExpr) -> BitvecExpr:
    op, swapped = _COMPARATORS[comparator]
    return binary(op, right, left) if swapped else binary(op, left, right)


class Detector:
    """Runs every active check for one path; findings are stamped with the run's strategy."""

    def __init__(
        self,
        xrefs: Optional[PanicXrefSet] = None,
        profile: Optional[InvariantProfile] = None,
        solver: Optional[SolverAdapter] = None,
        strategy: Strategy = Strategy.S1,
        run_id: int = 0,
    ):
        self.xrefs = xrefs if xrefs is not None else PanicXrefSet()
        self.profile = profile or InvariantProfile()
        self.solver = solver
        self.strategy = strategy
        self.run_id = run_id
        self._custom_by_address: Dict[int, List[CustomInvariant]] = {}
        for inv in self.profile.custom:
            self._custom_by_address.setdefault(inv.address, []).append(inv)

    def finding(
        self,
        state: MachineState,
        label: str,
        address: int,
        message: str,
        strategy: Optional[Strategy] = None,
        witness: Optional[Dict[str, int]] = None,
    ) -> Finding:
        strategy = strategy or self.strategy
        if witness is None and state.symbols and self.strategy is not Strategy.S1:
            witness = state.named_bindings()
        return Finding(
            strategy=strategy,
            kind=display_kind(label),
            label=label,
            address=address,
            message=message,
            witness=witness,
            trace_ref=state.steps,
            run_id=self.run_id,
        )

    def _solve_witness(self, state: MachineState, predicate: BitvecExpr) -> Optional[Dict[str, int]]:
        if self.solver is None:
            return None
        verdict = self.solver.check_sat(state.constraints, extra=predicate, hints=state.bindings)
        if not verdict.is_sat:
            logger.debug(f"No witness for invariant violation ({verdict.status.value} {verdict.reason})")
            return None
        return state.seed_from_model(verdict.model)

    # --- Hooks ---

    def before_instruction(self, state: MachineState) -> Optional[Finding]:
        if self.profile.panic_xref:
            found = s1_check(state, self.xrefs, self)
            if found is not None:
                return found
        for inv in self._custom_by_address.get(state.pc, ()):
            found = self.custom_check(state, inv)
            if found is not None:
                return found
        return None

    def on_access(self, state: MachineState, op: PcodeOp, event: AccessEvent) -> Optional[Finding]:
        if not self.profile.checks_accesses:
            return None
        return c_invariant_check(state, op, event, self)

    def on_division_by_zero(self, state: MachineState, address: int) -> Optional[Finding]:
        if not self.profile.division_by_zero:
            return None
        return self.finding(state, DIVISION_BY_ZERO, address, "integer division by zero", Strategy.CPROFILE)

    def table_overflow(self, state: MachineState, address: int, index: int, size: int) -> Finding:
        return self.finding(
            state,
            TABLE_INDEX_OVERFLOW,
            address,
            f"jump-table index {index} outside {size} targets",
        )

    def custom_check(self, state: MachineState, inv: CustomInvariant) -> Optional[Finding]:
        value = state.read_register(inv.register_name)
        width = value.size * 8
        constant = lit(inv.constant & mask(width), width)
        label = f"custom:{inv.name}"
        message = inv.message or f"{inv.register_name} {inv.comparator.value} 0x{inv.constant & mask(width):x} violated"

        holds = comparison(inv.comparator, lit(value.value, width), constant)
        if not holds.value:
            return self.finding(state, label, state.pc, message, Strategy.CPROFILE)
        if value.is_symbolic:
            witness = self._solve_witness(state, negate(comparison(inv.comparator, value.symbolic, constant)))
            if witness is not None:
                return self.finding(state, label, state.pc, message, Strategy.CPROFILE, witness)
        return None


def s1_check(state: MachineState, xrefs: PanicXrefSet, detector: Optional[Detector] = None) -> Optional[Finding]:
    """Finding when the program counter sits on a panic cross-reference."""
    entry = xrefs.get(state.pc)
    if entry is None:
        return None
    detector = detector or Detector(xrefs)
    logger.info(f"Panic cross-reference reached at 0x{state.pc:x}: {entry.label}")
    return detector.finding(state, entry.label, state.pc, entry.message)


def c_invariant_check(
    state: MachineState, op: PcodeOp, event: AccessEvent, detector: Optional[Detector] = None
) -> Optional[Finding]:
    """Null, then misaligned, then uninitialized; at most one finding per access."""
    detector = detector or Detector(profile=InvariantProfile.c_profile())
    profile = detector.profile
    where = state.pc
    verb = "load from" if event.kind is AccessKind.LOAD else "store to"

    if profile.null_deref:
        if event.address == 0:
            return detector.finding(state, NULL_DEREF, where, f"{verb} null pointer", Strategy.CPROFILE)
        if event.address_expr is not None:
            width = event.address_expr.width
            witness = detector._solve_witness(
                state, binary(BinOp.EQUAL, event.address_expr, lit(0, width))
            )
            if witness is not None:
                return detector.finding(
                    state, NULL_DEREF, where, f"{verb} a pointer that can be null", Strategy.CPROFILE, witness
                )

    if event.kind is not AccessKind.LOAD:
        return None

    if profile.misaligned_access and event.address % event.size != 0:
        return detector.finding(
            state,
            MISALIGNED_ACCESS,
            where,
            f"{event.size}-byte load from misaligned address 0x{event.address:x}",
            Strategy.CPROFILE,
        )

    if profile.uninitialized_read:
        missing = state.memory.uninitialized(event.address, event.size)
        if missing:
            return detector.finding(
                state,
                UNINITIALIZED_READ,
                where,
                f"load of uninitialized memory at 0x{missing[0]:x}",
                Strategy.CPROFILE,
            )
    return None


class FindingCollector:
    """Thread-safe accumulator; one finding per (label, address), lowest run id wins."""

    def __init__(self):
        self._lock = threading.Lock()
        self._findings: Dict[Tuple[str, int], Finding] = {}

    def add(self, finding: Finding) -> bool:
        key = (finding.label, finding.address)
        with self._lock:
            current = self._findings.get(key)
            if current is not None and current.run_id <= finding.run_id:
                return False
            self._findings[key] = finding
            return True

    def replace(self, finding: Finding) -> None:
        with self._lock:
            self._findings[(finding.label, finding.address)] = finding

    @property
    def findings(self) -> List[Finding]:
        with self._lock:
            return sorted(self._findings.values(), key=lambda f: (f.run_id, f.trace_ref, f.address, f.label))

    def __len__(self) -> int:
        with self._lock:
            return len(self._findings)
