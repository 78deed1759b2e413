import enum
from typing import Any, Dict, Optional


class PcodeGuardError(Exception):
    """Base class for all application-specific exceptions."""

    def __init__(
        self,
        message: str,
        code: str = "INTERNAL_ERROR",
        exit_code: int = 3,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.code = code
        self.exit_code = exit_code
        self.details = details
        super().__init__(self.message)


class UsageError(PcodeGuardError):
    """Raised for invalid command-line or run-config input."""

    def __init__(self, reason: str):
        super().__init__(message=reason, code="USAGE_ERROR", exit_code=2)


# --- P-Code model & parsing ---


class ParseErrorKind(str, enum.Enum):
    BAD_VARNODE = "BadVarnode"
    UNKNOWN_OPCODE = "UnknownOpcode"
    ARITY_MISMATCH = "ArityMismatch"
    BAD_ADDRESS = "BadAddress"
    REJECTED_HIGH_LEVEL_OP = "RejectedHighLevelOp"
    EMPTY_INSTRUCTION = "EmptyInstruction"
    BAD_ENCODING = "BadEncoding"


class InvalidPcodeError(PcodeGuardError):
    """Raised when a varnode or op violates the model's size/arity rules."""

    def __init__(self, reason: str, kind: ParseErrorKind = ParseErrorKind.ARITY_MISMATCH):
        self.kind = kind
        super().__init__(message=reason, code="INVALID_PCODE", exit_code=2)


class ParseError(PcodeGuardError):
    """Raised on the first malformed line of a listing."""

    def __init__(self, line_number: int, kind: ParseErrorKind, reason: str, unit: str = ""):
        self.line_number = line_number
        self.kind = kind
        self.unit = unit
        where = f"{unit}:{line_number}" if unit else f"line {line_number}"
        super().__init__(
            message=f"{where}: {kind.value}: {reason}",
            code="PARSE_ERROR",
            exit_code=2,
            details={"line": line_number, "kind": kind.value, "unit": unit},
        )


class DuplicateAddressError(PcodeGuardError):
    """Raised when two loaded units yield the same instruction address."""

    def __init__(self, address: int, first_unit: str, second_unit: str):
        self.address = address
        super().__init__(
            message=f"Instruction 0x{address:x} defined by both '{first_unit}' and '{second_unit}'",
            code="DUPLICATE_ADDRESS",
            exit_code=2,
        )


class AddressUnknownError(PcodeGuardError):
    """Raised when an address is not an instruction of the program image."""

    def __init__(self, address: int):
        self.address = address
        super().__init__(
            message=f"Address 0x{address:x} is not an instruction address",
            code="ADDRESS_UNKNOWN",
            exit_code=2,
        )


# --- Symbolic core ---


class UnboundSymbolError(PcodeGuardError):
    """Raised when evaluation meets a symbol without a binding."""

    def __init__(self, symbol_id: int):
        self.symbol_id = symbol_id
        super().__init__(
            message=f"Symbol sym{symbol_id} has no binding", code="UNBOUND_SYMBOL"
        )


# --- Machine state ---


class WriteToConstantError(PcodeGuardError):
    def __init__(self, varnode: Any):
        super().__init__(
            message=f"Cannot write to constant varnode {varnode}",
            code="WRITE_TO_CONSTANT",
        )


class ForkLimitExceededError(PcodeGuardError):
    def __init__(self, depth: int, limit: int):
        super().__init__(
            message=f"Fork depth {depth} reached the configured maximum {limit}",
            code="FORK_LIMIT_EXCEEDED",
        )


class UnknownRegisterNameError(PcodeGuardError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(
            message=f"Unknown register name '{name}'",
            code="UNKNOWN_REGISTER",
            exit_code=2,
        )


class SegmentOverlapError(PcodeGuardError):
    def __init__(self, first: int, second: int):
        super().__init__(
            message=f"Dump segments at 0x{first:x} and 0x{second:x} overlap",
            code="SEGMENT_OVERLAP",
            exit_code=2,
        )


class FileUnreadableError(PcodeGuardError):
    def __init__(self, path: str, original_error: str):
        super().__init__(
            message=f"Cannot read '{path}': {original_error}",
            code="FILE_UNREADABLE",
            exit_code=2,
        )


# --- Emulation ---


class ExecFaultKind(str, enum.Enum):
    DIVISION_BY_ZERO = "DivisionByZero"
    UNMAPPED_BRANCH_TARGET = "UnmappedBranchTarget"
    UNSUPPORTED_OP = "UnsupportedOp"
    UNKNOWN_CALLOTHER = "UnknownCallother"
    UNKNOWN_SYSCALL = "UnknownSyscall"


class ExecFaultError(PcodeGuardError):
    """Raised inside op execution; the step loop turns it into a Faulted outcome."""

    def __init__(self, kind: ExecFaultKind, reason: str, address: int = 0, op_index: int = 0):
        self.kind = kind
        self.reason = reason
        self.address = address
        self.op_index = op_index
        super().__init__(
            message=f"{kind.value} at 0x{address:x}/{op_index}: {reason}",
            code="EXEC_FAULT",
            exit_code=3,
        )


class UnsupportedOpError(ExecFaultError):
    def __init__(self, reason: str, address: int = 0, op_index: int = 0):
        super().__init__(ExecFaultKind.UNSUPPORTED_OP, reason, address, op_index)


class IndexOutOfTableError(PcodeGuardError):
    """Raised when a jump-table index falls outside its target list."""

    def __init__(self, switch_addr: int, index: int, size: int):
        self.switch_addr = switch_addr
        self.index = index
        self.size = size
        super().__init__(
            message=f"Jump table at 0x{switch_addr:x}: index {index} outside {size} targets",
            code="INDEX_OUT_OF_TABLE",
        )


# --- Sidecars ---


class MalformedSidecarError(PcodeGuardError):
    """Raised when an xref, jump-table, symbol or dump file is invalid."""

    def __init__(self, path: str, reason: str, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = f"{path}:{line}" if line is not None else path
        super().__init__(
            message=f"Malformed sidecar {where}: {reason}",
            code="MALFORMED_SIDECAR",
            exit_code=2,
            details={"path": path, "line": line},
        )
