"""
P-Code emulator.

Each opcode has a `handle_<opcode>` method. Concrete results come from the
CONCRETE_* tables below; when any input carries a symbolic expression the
output gets the matching expression node.
"""

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

from pcodeguard.core.config import settings
from pcodeguard.core.exceptions import (
    ExecFaultError,
    ExecFaultKind,
    IndexOutOfTableError,
    UnsupportedOpError,
)
from pcodeguard.pcode.model import (
    WIDE_OPS,
    Instruction,
    Opcode,
    PcodeOp,
    ProgramImage,
)
from pcodeguard.schemas import Finding
from pcodeguard.services.detection import AccessEvent, AccessKind, Detector
from pcodeguard.services.sidecars import JumpTableEntry, JumpTableMap
from pcodeguard.services.syscalls import do_syscall
from pcodeguard.services.tracing import RunArtifacts, TraceEvent, TraceEventKind
from pcodeguard.state.machine import MachineState
from pcodeguard.symbolic.expr import (
    BinOp,
    UnOp,
    binary,
    concat,
    extract,
    lit,
    resize,
    sext,
    unary,
    zext,
)
from pcodeguard.symbolic.values import ConcolicValue, PathConstraint

logger = logging.getLogger(__name__)

CALL_ARG_REGISTERS = ("rdi", "rsi", "rdx", "rcx", "r8", "r9")
MAX_STUB_CHAIN = 16


# --- Concrete integer semantics ---


def _bits(n: int) -> int:
    return (1 << n) - 1


def _sx(value: int, n: int) -> int:
    return value - (1 << n) if value & (1 << (n - 1)) else value


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def _trunc_rem(a: int, b: int) -> int:
    r = abs(a) % abs(b)
    return -r if a < 0 else r


def _shift_right_arith(a: int, b: int, n: int) -> int:
    sa = _sx(a, n)
    if b >= n:
        return _bits(n) if sa < 0 else 0
    return sa >> b


def _signed_overflow(result: int, n: int) -> int:
    return int(result < -(1 << (n - 1)) or result > (1 << (n - 1)) - 1)


# (a, b, width of input0 in bits) -> unmasked result
CONCRETE_BINARY: Dict[Opcode, Callable[[int, int, int], int]] = {
    Opcode.INT_ADD: lambda a, b, n: a + b,
    Opcode.INT_SUB: lambda a, b, n: a - b,
    Opcode.INT_MULT: lambda a, b, n: a * b,
    Opcode.INT_DIV: lambda a, b, n: a // b,
    Opcode.INT_REM: lambda a, b, n: a % b,
    Opcode.INT_SDIV: lambda a, b, n: _trunc_div(_sx(a, n), _sx(b, n)),
    Opcode.INT_SREM: lambda a, b, n: _trunc_rem(_sx(a, n), _sx(b, n)),
    Opcode.INT_AND: lambda a, b, n: a & b,
    Opcode.INT_OR: lambda a, b, n: a | b,
    Opcode.INT_XOR: lambda a, b, n: a ^ b,
    Opcode.INT_LEFT: lambda a, b, n: 0 if b >= n else a << b,
    Opcode.INT_RIGHT: lambda a, b, n: 0 if b >= n else a >> b,
    Opcode.INT_SRIGHT: _shift_right_arith,
    Opcode.INT_EQUAL: lambda a, b, n: int(a == b),
    Opcode.INT_NOTEQUAL: lambda a, b, n: int(a != b),
    Opcode.INT_LESS: lambda a, b, n: int(a < b),
    Opcode.INT_LESSEQUAL: lambda a, b, n: int(a <= b),
    Opcode.INT_SLESS: lambda a, b, n: int(_sx(a, n) < _sx(b, n)),
    Opcode.INT_SLESSEQUAL: lambda a, b, n: int(_sx(a, n) <= _sx(b, n)),
    Opcode.INT_CARRY: lambda a, b, n: (a + b) >> n,
    Opcode.INT_SCARRY: lambda a, b, n: _signed_overflow(_sx(a, n) + _sx(b, n), n),
    Opcode.INT_SBORROW: lambda a, b, n: _signed_overflow(_sx(a, n) - _sx(b, n), n),
    Opcode.BOOL_AND: lambda a, b, n: int(a != 0 and b != 0),
    Opcode.BOOL_OR: lambda a, b, n: int(a != 0 or b != 0),
    Opcode.BOOL_XOR: lambda a, b, n: int((a != 0) ^ (b != 0)),
}

CONCRETE_UNARY: Dict[Opcode, Callable[[int, int], int]] = {
    Opcode.INT_2COMP: lambda a, n: -a,
    Opcode.INT_NEGATE: lambda a, n: ~a,
    Opcode.BOOL_NEGATE: lambda a, n: int(a == 0),
}

OPCODE_BINOP: Dict[Opcode, BinOp] = {
    Opcode.INT_ADD: BinOp.ADD,
    Opcode.INT_SUB: BinOp.SUB,
    Opcode.INT_MULT: BinOp.MULT,
    Opcode.INT_DIV: BinOp.DIV,
    Opcode.INT_REM: BinOp.REM,
    Opcode.INT_SDIV: BinOp.SDIV,
    Opcode.INT_SREM: BinOp.SREM,
    Opcode.INT_AND: BinOp.AND,
    Opcode.INT_OR: BinOp.OR,
    Opcode.INT_XOR: BinOp.XOR,
    Opcode.INT_LEFT: BinOp.LEFT,
    Opcode.INT_RIGHT: BinOp.RIGHT,
    Opcode.INT_SRIGHT: BinOp.SRIGHT,
    Opcode.INT_EQUAL: BinOp.EQUAL,
    Opcode.INT_NOTEQUAL: BinOp.NOTEQUAL,
    Opcode.INT_LESS: BinOp.LESS,
    Opcode.INT_LESSEQUAL: BinOp.LESSEQUAL,
    Opcode.INT_SLESS: BinOp.SLESS,
    Opcode.INT_SLESSEQUAL: BinOp.SLESSEQUAL,
    Opcode.INT_CARRY: BinOp.CARRY,
    Opcode.INT_SCARRY: BinOp.SCARRY,
    Opcode.INT_SBORROW: BinOp.SBORROW,
    Opcode.BOOL_AND: BinOp.BOOL_AND,
    Opcode.BOOL_OR: BinOp.BOOL_OR,
    Opcode.BOOL_XOR: BinOp.BOOL_XOR,
}

OPCODE_UNOP: Dict[Opcode, UnOp] = {
    Opcode.INT_2COMP: UnOp.TWOCOMP,
    Opcode.INT_NEGATE: UnOp.NEGATE,
    Opcode.BOOL_NEGATE: UnOp.BOOL_NEGATE,
}

DIVISIONS = frozenset({Opcode.INT_DIV, Opcode.INT_SDIV, Opcode.INT_REM, Opcode.INT_SREM})


# --- Outcomes ---


@dataclass(frozen=True)
class ExecFault:
    kind: ExecFaultKind
    address: int
    op_index: int
    reason: str = ""

    def __str__(self) -> str:
        return f"{self.kind.value} at 0x{self.address:x}/{self.op_index}: {self.reason}"


class OutcomeKind(str, enum.Enum):
    CONTINUE = "Continue"
    EXITED = "Exited"
    FAULTED = "Faulted"
    INVARIANT_HIT = "InvariantHit"


@dataclass(frozen=True)
class StepOutcome:
    kind: OutcomeKind
    next_pc: Optional[int] = None
    exit_code: Optional[int] = None
    fault: Optional[ExecFault] = None
    finding: Optional[Finding] = None

    @classmethod
    def continue_(cls, next_pc: int) -> "StepOutcome":
        return cls(OutcomeKind.CONTINUE, next_pc=next_pc)

    @classmethod
    def exited(cls, code: int) -> "StepOutcome":
        return cls(OutcomeKind.EXITED, exit_code=code)

    @classmethod
    def faulted(cls, fault: ExecFault) -> "StepOutcome":
        return cls(OutcomeKind.FAULTED, fault=fault)

    @classmethod
    def invariant_hit(cls, finding: Finding) -> "StepOutcome":
        return cls(OutcomeKind.INVARIANT_HIT, finding=finding)


class TransferKind(str, enum.Enum):
    BRANCH = "branch"
    CALL = "call"
    RETURN = "return"


@dataclass(frozen=True)
class IntraJump:
    delta: int


@dataclass(frozen=True)
class Transfer:
    target: int
    kind: TransferKind = TransferKind.BRANCH


@dataclass(frozen=True)
class Halt:
    outcome: StepOutcome


OpResult = Optional[Union[IntraJump, Transfer, Halt]]


class _FindingRaised(Exception):
    def __init__(self, finding: Finding):
        self.finding = finding
        super().__init__(finding.message)


@dataclass(frozen=True)
class Stub:
    name: str
    value: int


@dataclass
class EmulatorOptions:
    strict: bool = False
    explore_tables: bool = True
    continue_after_finding: bool = False
    debug: bool = False
    stubs: Mapping[int, Stub] = field(default_factory=dict)
    syscall_stub: Optional[int] = None
    sentinel: int = field(default_factory=lambda: settings.SENTINEL_RETURN)
    noop_callothers: FrozenSet[str] = field(default_factory=lambda: frozenset(settings.NOOP_CALLOTHERS))


def table_index(state: MachineState, entry: JumpTableEntry) -> Tuple[int, ConcolicValue]:
    raw = state.read_register(entry.index_source)
    return (raw.value - entry.index_base) & _bits(raw.size * 8), raw


def resolve_branchind(
    state: MachineState,
    instr_addr: int,
    dest: ConcolicValue,
    tables: JumpTableMap,
    explore: bool = True,
    op_index: int = 0,
) -> List[Tuple[int, Optional[PathConstraint]]]:
    """Targets of an indirect branch; a symbolic table index yields one constrained pair per entry."""
    entry = tables.get(instr_addr)
    if entry is None:
        return [(dest.value, None)]
    index, raw = table_index(state, entry)
    count = len(entry.targets)
    if index >= count:
        raise IndexOutOfTableError(instr_addr, index, count)
    if not (raw.is_symbolic and explore):
        return [(entry.targets[index], None)]

    width = raw.size * 8
    index_expr = binary(BinOp.SUB, raw.symbolic, lit(entry.index_base, width))
    return [
        (target, PathConstraint(binary(BinOp.EQUAL, index_expr, lit(k, width)), (instr_addr, op_index), True))
        for k, target in enumerate(entry.targets)
    ]


class Emulator:
    def __init__(
        self,
        img: ProgramImage,
        tables: Optional[JumpTableMap] = None,
        detector: Optional[Detector] = None,
        artifacts: Optional[RunArtifacts] = None,
        options: Optional[EmulatorOptions] = None,
    ):
        self.img = img
        self.tables: JumpTableMap = tables or {}
        self.detector = detector or Detector()
        self.artifacts = artifacts or RunArtifacts(None)
        self.options = options or EmulatorOptions()
        self._handlers: Dict[Opcode, Callable] = {}
        for opcode in Opcode:
            handler = getattr(self, f"handle_{opcode.value.lower()}", None)
            if handler is None:
                handler = self.handle_binary if opcode in CONCRETE_BINARY else self.handle_unary
            self._handlers[opcode] = handler

    # --- Step loop ---

    def step(self, state: MachineState) -> StepOutcome:
        state.unique.clear()
        try:
            found = self.detector.before_instruction(state)
            if found is not None:
                self._emit(state, found)
            outcome = self._execute_instruction(state)
        except _FindingRaised as raised:
            outcome = StepOutcome.invariant_hit(raised.finding)
        except ExecFaultError as e:
            outcome = StepOutcome.faulted(ExecFault(e.kind, e.address or state.pc, e.op_index, e.reason))
        state.steps += 1

        if self.options.debug:
            for problem in state.check_consistency():
                logger.error(f"Concolic mismatch after step {state.steps - 1}: {problem}")
        self.artifacts.end_step()
        return outcome

    def _execute_instruction(self, state: MachineState) -> StepOutcome:
        pc = state.pc
        if pc not in self.img:
            return self._continue_to(state, pc, (pc, 0), allow_xref=False)
        instr = self.img[pc]
        ops = instr.ops
        idx = 0
        while idx < len(ops):
            try:
                result = self.execute_op(state, ops[idx], idx, instr)
            except ExecFaultError as e:
                return StepOutcome.faulted(ExecFault(e.kind, instr.address, idx, e.reason))

            if result is None:
                idx += 1
            elif isinstance(result, IntraJump):
                target = idx + result.delta
                if not 0 <= target <= len(ops):
                    return self._fault(
                        ExecFaultKind.UNMAPPED_BRANCH_TARGET,
                        (instr.address, idx),
                        f"relative branch to op {target} outside 0..{len(ops)}",
                    )
                idx = target
            elif isinstance(result, Halt):
                return result.outcome
            else:
                return self._transfer(state, result, (instr.address, idx))

        if instr.length:
            fallthrough = pc + instr.length
        else:
            fallthrough = self.img.next_instruction_address(pc)
            if fallthrough is None:
                return self._fault(
                    ExecFaultKind.UNMAPPED_BRANCH_TARGET, (pc, len(ops) - 1), "execution ran past the last instruction"
                )
        return self._continue_to(state, fallthrough, (pc, len(ops) - 1))

    def _fault(self, kind: ExecFaultKind, origin: Tuple[int, int], reason: str) -> StepOutcome:
        fault = ExecFault(kind, origin[0], origin[1], reason)
        logger.debug(f"Fault: {fault}")
        return StepOutcome.faulted(fault)

    def _transfer(self, state: MachineState, transfer: Transfer, origin: Tuple[int, int]) -> StepOutcome:
        if transfer.kind is TransferKind.CALL:
            args = tuple(state.read_register(name).value for name in CALL_ARG_REGISTERS)
            self.artifacts.event(TraceEvent(state.steps, TraceEventKind.CALL, transfer.target, args))
        elif transfer.kind is TransferKind.RETURN:
            self.artifacts.event(TraceEvent(state.steps, TraceEventKind.RETURN, transfer.target))
        return self._continue_to(state, transfer.target, origin)

    def _continue_to(
        self, state: MachineState, target: int, origin: Tuple[int, int], allow_xref: bool = True
    ) -> StepOutcome:
        """Resolves a control transfer, emulating syscall/function stubs and the sentinel return."""
        for _ in range(MAX_STUB_CHAIN):
            if target in self.img or (allow_xref and target in self.detector.xrefs):
                state.pc = target
                return StepOutcome.continue_(target)
            if target == self.options.sentinel:
                logger.debug("Returned to the sentinel address")
                return StepOutcome.exited(0)
            if self.options.syscall_stub is not None and target == self.options.syscall_stub:
                halt = self._syscall(state)
                if halt is not None:
                    return halt.outcome
            elif target in self.options.stubs:
                stub = self.options.stubs[target]
                logger.debug(f"Stubbed call to {stub.name} returns 0x{stub.value:x}")
                state.write_register("rax", stub.value)
            else:
                return self._fault(
                    ExecFaultKind.UNMAPPED_BRANCH_TARGET, origin, f"transfer to unmapped address 0x{target:x}"
                )
            target = self._emulated_return(state)
            allow_xref = True
        return self._fault(ExecFaultKind.UNMAPPED_BRANCH_TARGET, origin, "stub return chain too long")

    def _emulated_return(self, state: MachineState) -> int:
        rsp = state.read_register("rsp").value
        ret = state.memory.read(rsp, 8).value
        state.write_register("rsp", rsp + 8)
        self.artifacts.event(TraceEvent(state.steps, TraceEventKind.RETURN, ret))
        return ret

    def _emit(self, state: MachineState, finding: Finding) -> None:
        state.findings.append(finding)
        self.artifacts.event(TraceEvent(state.steps, TraceEventKind.FINDING, finding.address, label=finding.label))
        if not self.options.continue_after_finding:
            raise _FindingRaised(finding)

    def _syscall(self, state: MachineState) -> Optional[Halt]:
        result = do_syscall(state, self.options.strict)
        self.artifacts.event(TraceEvent(state.steps, TraceEventKind.SYSCALL, number=result.number, args=result.args))
        if result.exit_code is not None:
            return Halt(StepOutcome.exited(result.exit_code))
        return None

    def do_syscall(self, state: MachineState) -> StepOutcome:
        try:
            halt = self._syscall(state)
        except ExecFaultError as e:
            return StepOutcome.faulted(ExecFault(e.kind, state.pc, 0, e.reason))
        return halt.outcome if halt is not None else StepOutcome.continue_(state.pc)

    # --- Op execution ---

    def execute_op(self, state: MachineState, op: PcodeOp, op_index: int, instr: Instruction) -> OpResult:
        if op.opcode not in WIDE_OPS and any(
            vn.size > 8 for vn in (*op.inputs, op.output) if vn is not None
        ):
            raise UnsupportedOpError(f"{op.opcode.value} on a 16-byte varnode", instr.address, op_index)

        values: List[Optional[ConcolicValue]] = []
        for i, vn in enumerate(op.inputs):
            is_address = i == 0 and op.opcode in (Opcode.BRANCH, Opcode.CBRANCH, Opcode.CALL)
            values.append(None if is_address else state.read_varnode(vn))

        result = self._handlers[op.opcode](state, op, values, op_index, instr)

        if self.artifacts.logging:
            output = (op.output, state.read_varnode(op.output)) if op.output is not None else None
            self.artifacts.log_op(state.steps, instr.address, op_index, op, list(zip(op.inputs, values)), output)
        return result

    @staticmethod
    def _write(state: MachineState, op: PcodeOp, value: int, expr=None) -> None:
        out = op.output
        if expr is not None and expr.width == 1:
            expr = zext(expr, 8)
        state.write_varnode(out, ConcolicValue.from_int(value, out.size, expr))

    def handle_copy(self, state, op, values, op_index, instr) -> OpResult:
        state.write_varnode(op.output, values[0])
        return None

    def handle_binary(self, state, op, values, op_index, instr) -> OpResult:
        a, b = values
        code = op.opcode
        width = op.inputs[0].size * 8
        if code in DIVISIONS and b.value == 0:
            found = self.detector.on_division_by_zero(state, instr.address)
            if found is None:
                raise ExecFaultError(ExecFaultKind.DIVISION_BY_ZERO, f"{code.value} by zero", instr.address, op_index)
            self._emit(state, found)
            # Continuing past the finding: take the solver's total-division result
            value = binary(OPCODE_BINOP[code], lit(a.value, width), lit(b.value, width)).value
        else:
            value = CONCRETE_BINARY[code](a.value, b.value, width)

        expr = None
        if a.is_symbolic or b.is_symbolic:
            expr = binary(OPCODE_BINOP[code], a.expr(), b.expr())
        self._write(state, op, value & _bits(op.output.size * 8), expr)
        return None

    def handle_unary(self, state, op, values, op_index, instr) -> OpResult:
        (a,) = values
        width = op.inputs[0].size * 8
        value = CONCRETE_UNARY[op.opcode](a.value, width)
        expr = unary(OPCODE_UNOP[op.opcode], a.symbolic) if a.is_symbolic else None
        self._write(state, op, value & _bits(op.output.size * 8), expr)
        return None

    def handle_popcount(self, state, op, values, op_index, instr) -> OpResult:
        (a,) = values
        out_width = op.output.size * 8
        expr = None
        if a.is_symbolic:
            expr = resize(unary(UnOp.POPCOUNT, a.symbolic), out_width)
        self._write(state, op, bin(a.value).count("1") & _bits(out_width), expr)
        return None

    def handle_int_zext(self, state, op, values, op_index, instr) -> OpResult:
        (a,) = values
        expr = zext(a.symbolic, op.output.size * 8) if a.is_symbolic else None
        self._write(state, op, a.value, expr)
        return None

    def handle_int_sext(self, state, op, values, op_index, instr) -> OpResult:
        (a,) = values
        out_width = op.output.size * 8
        expr = sext(a.symbolic, out_width) if a.is_symbolic else None
        self._write(state, op, _sx(a.value, a.size * 8) & _bits(out_width), expr)
        return None

    def handle_piece(self, state, op, values, op_index, instr) -> OpResult:
        high, low = values
        value = (high.value << (low.size * 8)) | low.value
        expr = concat(high.expr(), low.expr()) if high.is_symbolic or low.is_symbolic else None
        self._write(state, op, value, expr)
        return None

    def handle_subpiece(self, state, op, values, op_index, instr) -> OpResult:
        a = values[0]
        shift = op.inputs[1].offset
        out_width = op.output.size * 8
        value = (a.value >> (shift * 8)) & _bits(out_width)
        expr = extract(a.symbolic, shift, out_width) if a.is_symbolic else None
        self._write(state, op, value, expr)
        return None

    # --- Memory ---

    def _access(self, state: MachineState, op: PcodeOp, kind: AccessKind, addr: ConcolicValue, size: int, where: Tuple[int, int]):
        if addr.is_symbolic:
            state.symbolic_accesses.append((where[0], where[1], addr.symbolic))
        found = self.detector.on_access(state, op, AccessEvent(kind, addr.value, size, addr.symbolic))
        if found is not None:
            self._emit(state, found)

    def handle_load(self, state, op, values, op_index, instr) -> OpResult:
        addr = values[1]
        size = op.output.size
        self._access(state, op, AccessKind.LOAD, addr, size, (instr.address, op_index))
        state.write_varnode(op.output, state.memory.read(addr.value, size))
        return None

    def handle_store(self, state, op, values, op_index, instr) -> OpResult:
        addr, data = values[1], values[2]
        self._access(state, op, AccessKind.STORE, addr, data.size, (instr.address, op_index))
        state.memory.write(addr.value, data)
        return None

    # --- Control flow ---

    @staticmethod
    def _direct(op: PcodeOp, kind: TransferKind) -> Union[IntraJump, Transfer]:
        dest = op.inputs[0]
        if dest.is_constant:
            return IntraJump(_sx(dest.offset & _bits(dest.size * 8), dest.size * 8))
        return Transfer(dest.offset, kind)

    def handle_branch(self, state, op, values, op_index, instr) -> OpResult:
        return self._direct(op, TransferKind.BRANCH)

    def handle_call(self, state, op, values, op_index, instr) -> OpResult:
        return self._direct(op, TransferKind.CALL)

    def handle_cbranch(self, state, op, values, op_index, instr) -> OpResult:
        cond = values[1]
        taken = cond.value != 0
        if cond.is_symbolic:
            state.constraints.append(PathConstraint(cond.symbolic, (instr.address, op_index), taken))
        return self._direct(op, TransferKind.BRANCH) if taken else None

    def _indirect(self, state, values, op_index, instr, kind: TransferKind) -> OpResult:
        dest = values[0]
        try:
            pairs = resolve_branchind(state, instr.address, dest, self.tables, self.options.explore_tables, op_index)
        except IndexOutOfTableError as e:
            self._emit(state, self.detector.table_overflow(state, instr.address, e.index, e.size))
            raise ExecFaultError(ExecFaultKind.UNMAPPED_BRANCH_TARGET, str(e), instr.address, op_index)

        if len(pairs) == 1 and pairs[0][1] is None:
            target = pairs[0][0]
        else:
            index, raw = table_index(state, self.tables[instr.address])
            target, chosen = pairs[index]
            width = raw.size * 8
            index_expr = binary(BinOp.SUB, raw.symbolic, lit(self.tables[instr.address].index_base, width))
            alternatives = tuple(c.expr for k, (_, c) in enumerate(pairs) if k != index)
            overflow = binary(BinOp.LESS, lit(len(pairs) - 1, width), index_expr)
            state.constraints.append(
                PathConstraint(chosen.expr, chosen.origin, True, alternatives + (overflow,))
            )

        if instr.address in self.tables and target != dest.value:
            logger.warning(
                f"Jump table at 0x{instr.address:x} selects 0x{target:x}; branch value was 0x{dest.value:x}"
            )
        return Transfer(target, kind)

    def handle_branchind(self, state, op, values, op_index, instr) -> OpResult:
        return self._indirect(state, values, op_index, instr, TransferKind.BRANCH)

    def handle_callind(self, state, op, values, op_index, instr) -> OpResult:
        return self._indirect(state, values, op_index, instr, TransferKind.CALL)

    def handle_return(self, state, op, values, op_index, instr) -> OpResult:
        return Transfer(values[0].value, TransferKind.RETURN)

    def handle_callother(self, state, op, values, op_index, instr) -> OpResult:
        name = self.img.callother_name(instr.address, op_index)
        if name == "syscall":
            return self._syscall(state)
        if name is not None and name.lower() in self.options.noop_callothers:
            if op.output is not None:
                self._write(state, op, 0)
            return None
        label = name or f"#{op.inputs[0].offset}"
        if self.options.strict:
            raise ExecFaultError(ExecFaultKind.UNKNOWN_CALLOTHER, f"pseudo-op {label}", instr.address, op_index)
        logger.warning(f"Unknown pseudo-op {label} at 0x{instr.address:x}; output set to zero")
        if op.output is not None:
            self._write(state, op, 0)
        return None


def execute_op(state: MachineState, op: PcodeOp, op_index: int, instr: Instruction, emulator: Emulator) -> OpResult:
    return emulator.execute_op(state, op, op_index, instr)


def step(state: MachineState, emulator: Emulator) -> StepOutcome:
    return emulator.step(state)
