"""
In-memory representation of low-level P-Code programs.

A program is a set of machine instructions, each lifted to an ordered list of
P-Code operations over varnodes living in one of four address spaces.
"""

import bisect
import enum
from dataclasses import dataclass
from types import MappingProxyType
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

from pcodeguard.core.exceptions import (
    AddressUnknownError,
    InvalidPcodeError,
    ParseErrorKind,
)

MAX_OFFSET = (1 << 64) - 1
STORAGE_SIZES = (1, 2, 4, 8, 16)


class SpaceKind(str, enum.Enum):
    CONSTANT = "const"
    REGISTER = "register"
    UNIQUE = "unique"
    RAM = "ram"


class Opcode(str, enum.Enum):
    COPY = "COPY"
    LOAD = "LOAD"
    STORE = "STORE"
    BRANCH = "BRANCH"
    CBRANCH = "CBRANCH"
    BRANCHIND = "BRANCHIND"
    CALL = "CALL"
    CALLIND = "CALLIND"
    CALLOTHER = "CALLOTHER"
    RETURN = "RETURN"
    PIECE = "PIECE"
    SUBPIECE = "SUBPIECE"
    POPCOUNT = "POPCOUNT"
    INT_EQUAL = "INT_EQUAL"
    INT_NOTEQUAL = "INT_NOTEQUAL"
    INT_LESS = "INT_LESS"
    INT_SLESS = "INT_SLESS"
    INT_LESSEQUAL = "INT_LESSEQUAL"
    INT_SLESSEQUAL = "INT_SLESSEQUAL"
    INT_ZEXT = "INT_ZEXT"
    INT_SEXT = "INT_SEXT"
    INT_ADD = "INT_ADD"
    INT_SUB = "INT_SUB"
    INT_CARRY = "INT_CARRY"
    INT_SCARRY = "INT_SCARRY"
    INT_SBORROW = "INT_SBORROW"
    INT_2COMP = "INT_2COMP"
    INT_NEGATE = "INT_NEGATE"
    INT_XOR = "INT_XOR"
    INT_AND = "INT_AND"
    INT_OR = "INT_OR"
    INT_LEFT = "INT_LEFT"
    INT_RIGHT = "INT_RIGHT"
    INT_SRIGHT = "INT_SRIGHT"
    INT_MULT = "INT_MULT"
    INT_DIV = "INT_DIV"
    INT_SDIV = "INT_SDIV"
    INT_REM = "INT_REM"
    INT_SREM = "INT_SREM"
    BOOL_NEGATE = "BOOL_NEGATE"
    BOOL_XOR = "BOOL_XOR"
    BOOL_AND = "BOOL_AND"
    BOOL_OR = "BOOL_OR"


# Decompiler-level and floating-point opcodes that a raw listing must never contain
HIGH_LEVEL_OPCODES = frozenset(
    {
        "MULTIEQUAL",
        "INDIRECT",
        "CAST",
        "PTRADD",
        "PTRSUB",
        "SEGMENTOP",
        "CPOOLREF",
        "NEW",
        "INSERT",
        "EXTRACT",
        "LZCOUNT",
        "FLOAT_EQUAL",
        "FLOAT_NOTEQUAL",
        "FLOAT_LESS",
        "FLOAT_LESSEQUAL",
        "FLOAT_NAN",
        "FLOAT_ADD",
        "FLOAT_DIV",
        "FLOAT_MULT",
        "FLOAT_SUB",
        "FLOAT_NEG",
        "FLOAT_ABS",
        "FLOAT_SQRT",
        "FLOAT_INT2FLOAT",
        "FLOAT_FLOAT2FLOAT",
        "FLOAT_TRUNC",
        "FLOAT_CEIL",
        "FLOAT_FLOOR",
        "FLOAT_ROUND",
    }
)

# Binary ops whose inputs share a size and whose output has that size
SAME_SIZE_BINARY = frozenset(
    {
        Opcode.INT_ADD,
        Opcode.INT_SUB,
        Opcode.INT_XOR,
        Opcode.INT_AND,
        Opcode.INT_OR,
        Opcode.INT_MULT,
        Opcode.INT_DIV,
        Opcode.INT_SDIV,
        Opcode.INT_REM,
        Opcode.INT_SREM,
    }
)
COMPARISONS = frozenset(
    {
        Opcode.INT_EQUAL,
        Opcode.INT_NOTEQUAL,
        Opcode.INT_LESS,
        Opcode.INT_SLESS,
        Opcode.INT_LESSEQUAL,
        Opcode.INT_SLESSEQUAL,
        Opcode.INT_CARRY,
        Opcode.INT_SCARRY,
        Opcode.INT_SBORROW,
    }
)
SHIFTS = frozenset({Opcode.INT_LEFT, Opcode.INT_RIGHT, Opcode.INT_SRIGHT})
BOOL_BINARY = frozenset({Opcode.BOOL_XOR, Opcode.BOOL_AND, Opcode.BOOL_OR})
BRANCHES = frozenset(
    {
        Opcode.BRANCH,
        Opcode.CBRANCH,
        Opcode.BRANCHIND,
        Opcode.CALL,
        Opcode.CALLIND,
        Opcode.RETURN,
    }
)
# Ops allowed to touch 16-byte varnodes
WIDE_OPS = frozenset(
    {
        Opcode.COPY,
        Opcode.LOAD,
        Opcode.STORE,
        Opcode.PIECE,
        Opcode.SUBPIECE,
        Opcode.INT_AND,
        Opcode.INT_OR,
        Opcode.INT_XOR,
        Opcode.INT_NEGATE,
        Opcode.INT_ZEXT,
        Opcode.CALLOTHER,
    }
)


@dataclass(frozen=True)
class Arity:
    min_inputs: int
    max_inputs: int
    output: Optional[bool]  # True required, False forbidden, None optional


ARITY: Dict[Opcode, Arity] = {
    Opcode.COPY: Arity(1, 1, True),
    Opcode.LOAD: Arity(2, 2, True),
    Opcode.STORE: Arity(3, 3, False),
    Opcode.BRANCH: Arity(1, 1, False),
    Opcode.CBRANCH: Arity(2, 2, False),
    Opcode.BRANCHIND: Arity(1, 1, False),
    Opcode.CALL: Arity(1, 3, False),
    Opcode.CALLIND: Arity(1, 3, False),
    Opcode.CALLOTHER: Arity(1, 3, None),
    Opcode.RETURN: Arity(1, 2, False),
    Opcode.PIECE: Arity(2, 2, True),
    Opcode.SUBPIECE: Arity(2, 2, True),
    Opcode.POPCOUNT: Arity(1, 1, True),
    Opcode.INT_ZEXT: Arity(1, 1, True),
    Opcode.INT_SEXT: Arity(1, 1, True),
    Opcode.INT_2COMP: Arity(1, 1, True),
    Opcode.INT_NEGATE: Arity(1, 1, True),
    Opcode.BOOL_NEGATE: Arity(1, 1, True),
}
for _op in SAME_SIZE_BINARY | COMPARISONS | SHIFTS | BOOL_BINARY:
    ARITY[_op] = Arity(2, 2, True)


@dataclass(frozen=True, slots=True)
class Varnode:
    space: SpaceKind
    offset: int
    size: int

    def __post_init__(self):
        if not 1 <= self.size <= 16:
            raise InvalidPcodeError(
                f"varnode size {self.size} outside [1,16]", ParseErrorKind.BAD_VARNODE
            )
        if not 0 <= self.offset <= MAX_OFFSET:
            raise InvalidPcodeError(
                f"varnode offset {self.offset:#x} is not a 64-bit value",
                ParseErrorKind.BAD_VARNODE,
            )

    @property
    def is_constant(self) -> bool:
        return self.space is SpaceKind.CONSTANT

    def __str__(self) -> str:
        return f"({self.space.value},0x{self.offset:x},{self.size})"


@dataclass(frozen=True, slots=True)
class PcodeOp:
    opcode: Opcode
    inputs: Tuple[Varnode, ...]
    output: Optional[Varnode] = None

    def __post_init__(self):
        validate_op(self)

    def __str__(self) -> str:
        ins = " , ".join(str(v) for v in self.inputs)
        body = f"{self.opcode.value} {ins}"
        return f"{self.output} = {body}" if self.output is not None else body


def validate_op(op: PcodeOp) -> None:
    """Checks the arity/size table; raises InvalidPcodeError on any violation."""
    arity = ARITY[op.opcode]
    name = op.opcode.value
    n = len(op.inputs)
    if not arity.min_inputs <= n <= arity.max_inputs:
        raise InvalidPcodeError(f"{name} takes {arity.min_inputs}-{arity.max_inputs} inputs, got {n}")
    if arity.output is True and op.output is None:
        raise InvalidPcodeError(f"{name} requires an output")
    if arity.output is False and op.output is not None:
        raise InvalidPcodeError(f"{name} has no output")

    out = op.output
    if out is not None:
        if out.is_constant:
            raise InvalidPcodeError(f"{name} writes to a constant varnode")
        if out.size not in STORAGE_SIZES:
            raise InvalidPcodeError(f"{name} output size {out.size} not in {STORAGE_SIZES}")

    ins = op.inputs
    code = op.opcode
    if code in SAME_SIZE_BINARY:
        if ins[0].size != ins[1].size or out.size != ins[0].size:
            raise InvalidPcodeError(f"{name} operand/output sizes differ")
    elif code in COMPARISONS:
        if ins[0].size != ins[1].size:
            raise InvalidPcodeError(f"{name} operand sizes differ")
        if out.size != 1:
            raise InvalidPcodeError(f"{name} output must be 1 byte")
    elif code in SHIFTS:
        if out.size != ins[0].size:
            raise InvalidPcodeError(f"{name} output size must match input0")
    elif code in BOOL_BINARY or code is Opcode.BOOL_NEGATE:
        if out.size != 1 or any(v.size != 1 for v in ins):
            raise InvalidPcodeError(f"{name} operates on 1-byte booleans")
    elif code in (Opcode.INT_2COMP, Opcode.INT_NEGATE, Opcode.COPY):
        if out.size != ins[0].size:
            raise InvalidPcodeError(f"{name} output size must match input")
    elif code in (Opcode.INT_ZEXT, Opcode.INT_SEXT):
        if out.size < ins[0].size:
            raise InvalidPcodeError(f"{name} cannot narrow")
    elif code is Opcode.PIECE:
        if out.size != ins[0].size + ins[1].size:
            raise InvalidPcodeError("PIECE output size must be the sum of its inputs")
    elif code is Opcode.SUBPIECE:
        if not ins[1].is_constant:
            raise InvalidPcodeError("SUBPIECE byte offset must be a constant")
        if ins[1].offset + out.size > ins[0].size:
            raise InvalidPcodeError("SUBPIECE reads past the end of input0")
    elif code is Opcode.LOAD or code is Opcode.STORE:
        if not ins[0].is_constant:
            raise InvalidPcodeError(f"{name} space id must be a constant")
    elif code is Opcode.CALLOTHER:
        if not ins[0].is_constant:
            raise InvalidPcodeError("CALLOTHER index must be a constant")


@dataclass(frozen=True)
class Instruction:
    address: int
    ops: Tuple[PcodeOp, ...]
    length: int = 0

    def __post_init__(self):
        if not self.ops:
            raise InvalidPcodeError(
                f"instruction 0x{self.address:x} has no ops", ParseErrorKind.EMPTY_INSTRUCTION
            )
        if not 0 <= self.address <= MAX_OFFSET:
            raise InvalidPcodeError(
                f"instruction address {self.address:#x} is not a 64-bit value",
                ParseErrorKind.BAD_ADDRESS,
            )


@dataclass(frozen=True)
class LoadUnit:
    name: str
    base: int


class ProgramImage:
    """Immutable, address-ordered collection of instructions from one or more listings."""

    def __init__(
        self,
        instructions: Mapping[int, Instruction],
        load_units: List[LoadUnit],
        callother_names: Optional[Mapping[Tuple[int, int], str]] = None,
    ):
        ordered = dict(sorted(instructions.items()))
        self._instructions = MappingProxyType(ordered)
        self._addresses = list(ordered)
        self.load_units: Tuple[LoadUnit, ...] = tuple(load_units)
        self.callother_names = MappingProxyType(dict(callother_names or {}))

    @property
    def instructions(self) -> Mapping[int, Instruction]:
        return self._instructions

    @property
    def first_address(self) -> Optional[int]:
        return self._addresses[0] if self._addresses else None

    def __contains__(self, address: object) -> bool:
        return address in self._instructions

    def __getitem__(self, address: int) -> Instruction:
        try:
            return self._instructions[address]
        except KeyError:
            raise AddressUnknownError(address) from None

    def __iter__(self) -> Iterator[Instruction]:
        return iter(self._instructions.values())

    def __len__(self) -> int:
        return len(self._addresses)

    def callother_name(self, address: int, op_index: int) -> Optional[str]:
        return self.callother_names.get((address, op_index))

    def next_instruction_address(self, address: int) -> Optional[int]:
        return next_instruction_address(self, address)


def next_instruction_address(img: ProgramImage, addr: int) -> Optional[int]:
    """Smallest instruction address strictly greater than `addr`, or None at the end."""
    if addr not in img:
        raise AddressUnknownError(addr)
    idx = bisect.bisect_right(img._addresses, addr)
    return img._addresses[idx] if idx < len(img._addresses) else None
