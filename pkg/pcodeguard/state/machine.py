"""
Forkable concolic machine state.

Registers, RAM and the unique space share one paged byte store: every byte
keeps a concrete value, an initialized flag and an optional 8-bit symbolic
expression.
"""

import copy
import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

from pydantic import ValidationError

from pcodeguard.core.config import settings
from pcodeguard.core.exceptions import (
    FileUnreadableError,
    ForkLimitExceededError,
    MalformedSidecarError,
    UnknownRegisterNameError,
    WriteToConstantError,
)
from pcodeguard.pcode.model import MAX_OFFSET, SpaceKind, Varnode
from pcodeguard.schemas import RegisterMapDocument
from pcodeguard.symbolic.expr import (
    BitvecExpr,
    Extract,
    Symbol,
    concat,
    evaluate,
    extract,
    lit,
    sym,
)
from pcodeguard.symbolic.values import ConcolicValue, PathConstraint

logger = logging.getLogger(__name__)

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
PAGE_MASK = PAGE_SIZE - 1

RegisterMap = Dict[str, Tuple[int, int]]


class ByteStore:
    """Paged little-endian byte storage."""

    def __init__(self):
        self._pages: Dict[int, bytearray] = {}
        self._init: Dict[int, bytearray] = {}
        self._symbolic: Dict[int, BitvecExpr] = {}

    def clone(self) -> "ByteStore":
        other = copy.copy(self)
        other._pages = {k: bytearray(v) for k, v in self._pages.items()}
        other._init = {k: bytearray(v) for k, v in self._init.items()}
        other._symbolic = dict(self._symbolic)
        return other

    def _page(self, addr: int) -> Tuple[bytearray, bytearray]:
        key = addr >> PAGE_SHIFT
        page = self._pages.get(key)
        if page is None:
            page = self._pages[key] = bytearray(PAGE_SIZE)
            self._init[key] = bytearray(PAGE_SIZE)
        return page, self._init[key]

    def write(self, offset: int, value: ConcolicValue) -> None:
        expr = value.symbolic
        for i, byte in enumerate(value.concrete):
            addr = (offset + i) & MAX_OFFSET
            page, flags = self._page(addr)
            page[addr & PAGE_MASK] = byte
            flags[addr & PAGE_MASK] = 1
            if expr is None:
                self._symbolic.pop(addr, None)
            elif value.size == 1:
                self._symbolic[addr] = expr
            else:
                self._symbolic[addr] = extract(expr, i, 8)

    def write_bytes(self, offset: int, data: bytes) -> None:
        """Concrete bulk write (dump segments, zeroed regions)."""
        pos = 0
        while pos < len(data):
            addr = (offset + pos) & MAX_OFFSET
            page, flags = self._page(addr)
            start = addr & PAGE_MASK
            chunk = min(PAGE_SIZE - start, len(data) - pos)
            page[start : start + chunk] = data[pos : pos + chunk]
            flags[start : start + chunk] = b"\x01" * chunk
            pos += chunk
        if self._symbolic:
            for i in range(len(data)):
                self._symbolic.pop((offset + i) & MAX_OFFSET, None)

    def read(self, offset: int, size: int) -> ConcolicValue:
        raw = bytearray(size)
        parts: List[Optional[BitvecExpr]] = []
        for i in range(size):
            addr = (offset + i) & MAX_OFFSET
            page = self._pages.get(addr >> PAGE_SHIFT)
            if page is not None:
                raw[i] = page[addr & PAGE_MASK]
            parts.append(self._symbolic.get(addr))
        if all(p is None for p in parts):
            return ConcolicValue(bytes(raw))
        return ConcolicValue(bytes(raw), _reassemble(parts, raw))

    def is_initialized(self, offset: int, size: int = 1) -> bool:
        return not self.uninitialized(offset, size)

    def uninitialized(self, offset: int, size: int) -> List[int]:
        missing = []
        for i in range(size):
            addr = (offset + i) & MAX_OFFSET
            flags = self._init.get(addr >> PAGE_SHIFT)
            if flags is None or not flags[addr & PAGE_MASK]:
                missing.append(addr)
        return missing

    def concrete_byte(self, addr: int) -> int:
        page = self._pages.get(addr >> PAGE_SHIFT)
        return page[addr & PAGE_MASK] if page is not None else 0

    def symbolic_items(self) -> Iterator[Tuple[int, BitvecExpr]]:
        return iter(self._symbolic.items())

    def clear(self) -> None:
        self._pages.clear()
        self._init.clear()
        self._symbolic.clear()

    def is_empty(self) -> bool:
        return not self._pages and not self._symbolic


def _reassemble(parts: List[Optional[BitvecExpr]], raw: bytearray) -> BitvecExpr:
    # Consecutive byte slices of one stored expression read back as that expression
    first = parts[0]
    if first is not None:
        base, low = (first.child, first.low_byte) if isinstance(first, Extract) and first.width == 8 else (first, 0)
        if all(
            isinstance(p, Extract) and p.width == 8 and p.child is base and p.low_byte == low + i
            for i, p in enumerate(parts)
            if i > 0
        ):
            if low == 0 and base.width == len(parts) * 8:
                return base
            if len(parts) == 1:
                return first
            return extract(base, low, len(parts) * 8)

    pieces = [p if p is not None else lit(raw[i], 8) for i, p in enumerate(parts)]
    result = pieces[-1]
    for piece in reversed(pieces[:-1]):
        result = concat(result, piece)
    return result


class RegisterFile(ByteStore):
    def __init__(self, name_map: Optional[RegisterMap] = None):
        super().__init__()
        self.name_map: RegisterMap = {k.lower(): v for k, v in (name_map or {}).items()}

    def lookup(self, name: str) -> Tuple[int, int]:
        try:
            return self.name_map[name.lower()]
        except KeyError:
            raise UnknownRegisterNameError(name) from None

    def varnode(self, name: str) -> Varnode:
        offset, size = self.lookup(name)
        return Varnode(SpaceKind.REGISTER, offset, size)

    def read_named(self, name: str) -> ConcolicValue:
        offset, size = self.lookup(name)
        return self.read(offset, size)

    def write_named(self, name: str, value: int) -> None:
        offset, size = self.lookup(name)
        self.write(offset, ConcolicValue.from_int(value, size))


class SparseMemory(ByteStore):
    pass


class UniqueSpace(ByteStore):
    pass


class StreamRole(str, enum.Enum):
    STDIN = "Stdin"
    STDOUT = "Stdout"
    STDERR = "Stderr"
    CLOSED = "Closed"


@dataclass
class FileDescriptor:
    role: StreamRole
    data: bytearray = field(default_factory=bytearray)
    position: int = 0


class VirtualFileSystem:
    """Descriptor table for the guest's standard streams."""

    def __init__(self, stdin: bytes = b"", symbolic_stdin: int = 0):
        self.fds: Dict[int, FileDescriptor] = {
            0: FileDescriptor(StreamRole.STDIN, bytearray(stdin)),
            1: FileDescriptor(StreamRole.STDOUT),
            2: FileDescriptor(StreamRole.STDERR),
        }
        # Number of stdin bytes still to be delivered as fresh symbols
        self.symbolic_stdin = symbolic_stdin
        self.stdin_symbols = 0

    def clone(self) -> "VirtualFileSystem":
        other = copy.copy(self)
        other.fds = {
            fd: FileDescriptor(d.role, bytearray(d.data), d.position) for fd, d in self.fds.items()
        }
        return other

    def role(self, fd: int) -> StreamRole:
        entry = self.fds.get(fd)
        return entry.role if entry is not None else StreamRole.CLOSED

    def close(self, fd: int) -> bool:
        entry = self.fds.get(fd)
        if entry is None or entry.role is StreamRole.CLOSED:
            return False
        entry.role = StreamRole.CLOSED
        return True

    def write(self, fd: int, data: bytes) -> bool:
        entry = self.fds.get(fd)
        if entry is None or entry.role not in (StreamRole.STDOUT, StreamRole.STDERR):
            return False
        entry.data.extend(data)
        return True

    def read(self, fd: int, count: int) -> Optional[bytes]:
        entry = self.fds.get(fd)
        if entry is None or entry.role is not StreamRole.STDIN:
            return None
        chunk = bytes(entry.data[entry.position : entry.position + count])
        entry.position += len(chunk)
        return chunk

    @property
    def stdout(self) -> bytes:
        return bytes(self.fds[1].data)

    @property
    def stderr(self) -> bytes:
        return bytes(self.fds[2].data)


@dataclass(frozen=True)
class SymbolicInput:
    """A symbol installed at the start of a run at a fixed location."""

    name: str
    symbol_id: int
    varnode: Varnode
    default: int


class MachineState:
    def __init__(
        self,
        register_map: Optional[RegisterMap] = None,
        max_fork_depth: Optional[int] = None,
        rng_seed: int = 0,
        stdin: bytes = b"",
        symbolic_stdin: int = 0,
    ):
        self.pc = 0
        self.registers = RegisterFile(register_map if register_map is not None else load_register_map())
        self.memory = SparseMemory()
        self.unique = UniqueSpace()
        self.vfs = VirtualFileSystem(stdin, symbolic_stdin)
        self.constraints: List[PathConstraint] = []
        self.fork_depth = 0
        self.max_fork_depth = settings.MAX_DEPTH if max_fork_depth is None else max_fork_depth
        self.rng_seed = rng_seed & ((1 << 64) - 1)

        self.symbols: Dict[int, Symbol] = {}
        self.bindings: Dict[int, int] = {}
        self.seed: Dict[str, int] = {}
        self.inputs: List[SymbolicInput] = []
        self.next_symbol_id = 1

        self.brk = settings.HEAP_BASE
        self.mmap_next = settings.MMAP_BASE
        self.steps = 0
        self.findings: list = []
        self.symbolic_accesses: List[Tuple[int, int, BitvecExpr]] = []

    # --- Varnode access ---

    def space(self, kind: SpaceKind) -> ByteStore:
        if kind is SpaceKind.REGISTER:
            return self.registers
        if kind is SpaceKind.RAM:
            return self.memory
        return self.unique

    def read_varnode(self, vn: Varnode) -> ConcolicValue:
        if vn.is_constant:
            return ConcolicValue.from_int(vn.offset, vn.size)
        return self.space(vn.space).read(vn.offset, vn.size)

    def write_varnode(self, vn: Varnode, value: ConcolicValue) -> None:
        if vn.is_constant:
            raise WriteToConstantError(vn)
        if value.size != vn.size:
            raise ValueError(f"value of {value.size} bytes written to {vn}")
        self.space(vn.space).write(vn.offset, value)

    def read_register(self, name: str) -> ConcolicValue:
        return self.registers.read_named(name)

    def write_register(self, name: str, value: int) -> None:
        self.registers.write_named(name, value)

    # --- Forking ---

    def clone(self) -> "MachineState":
        other = copy.copy(self)
        other.registers = self.registers.clone()
        other.memory = self.memory.clone()
        other.unique = self.unique.clone()
        other.vfs = self.vfs.clone()
        other.constraints = list(self.constraints)
        other.symbols = dict(self.symbols)
        other.bindings = dict(self.bindings)
        other.seed = dict(self.seed)
        other.inputs = list(self.inputs)
        other.findings = list(self.findings)
        other.symbolic_accesses = list(self.symbolic_accesses)
        return other

    def fork(self) -> "MachineState":
        if self.fork_depth >= self.max_fork_depth:
            raise ForkLimitExceededError(self.fork_depth, self.max_fork_depth)
        child = self.clone()
        child.fork_depth = self.fork_depth + 1
        return child

    # --- Symbolic inputs ---

    def new_symbol(self, name: str, size: int, default: int = 0) -> ConcolicValue:
        """Fresh symbol of `size` bytes; its concrete value comes from the seed when present."""
        symbol = sym(self.next_symbol_id, size * 8, name)
        self.next_symbol_id += 1
        value = self.seed.get(name, default) & ((1 << (size * 8)) - 1)
        self.symbols[symbol.id] = symbol
        self.bindings[symbol.id] = value
        return ConcolicValue.from_int(value, size, symbol)

    def make_symbolic(self, vn: Varnode, name: str, default: Optional[int] = None) -> Symbol:
        if default is None:
            default = self.read_varnode(vn).value
        value = self.new_symbol(name, vn.size, default)
        self.write_varnode(vn, value)
        self.inputs.append(SymbolicInput(name, value.symbolic.id, vn, default))
        return value.symbolic

    def make_symbolic_register(self, register: str, name: Optional[str] = None, default: Optional[int] = None) -> Symbol:
        return self.make_symbolic(self.registers.varnode(register), name or register.lower(), default)

    def install_seed(self, seed: Mapping[str, int]) -> None:
        """Re-seeds the start-time inputs; later symbols pick their values up by name."""
        self.seed = dict(seed)
        for inp in self.inputs:
            value = self.seed.get(inp.name, inp.default) & ((1 << (inp.varnode.size * 8)) - 1)
            self.bindings[inp.symbol_id] = value
            self.write_varnode(inp.varnode, ConcolicValue.from_int(value, inp.varnode.size, self.symbols[inp.symbol_id]))

    def named_bindings(self) -> Dict[str, int]:
        return {self.symbols[sid].name: value for sid, value in sorted(self.bindings.items())}

    def seed_from_model(self, model: Mapping[int, int]) -> Dict[str, int]:
        """Name-keyed seed for a re-run: current values overridden by a solver model."""
        seed = self.named_bindings()
        for sid, value in model.items():
            symbol = self.symbols.get(sid)
            if symbol is not None:
                seed[symbol.name] = value
        return seed

    # --- Consistency ---

    def check_consistency(self) -> List[str]:
        """Symbolic bytes whose value under the bindings disagrees with the concrete byte."""
        problems = []
        for label, store in (("register", self.registers), ("ram", self.memory), ("unique", self.unique)):
            for addr, expr in store.symbolic_items():
                expected = evaluate(expr, self.bindings)
                actual = store.concrete_byte(addr)
                if expected != actual:
                    problems.append(f"{label}[0x{addr:x}]: concrete 0x{actual:02x}, symbolic 0x{expected:02x}")
        return problems

    # --- Stack ---

    def prepare_stack(self, return_address: Optional[int] = None) -> int:
        """Maps a zeroed stack, points RSP inside it and pushes `return_address`."""
        top = settings.STACK_BASE
        self.memory.write_bytes(top - settings.STACK_SIZE, bytes(settings.STACK_SIZE))
        rsp = top - PAGE_SIZE
        ret = settings.SENTINEL_RETURN if return_address is None else return_address
        self.memory.write(rsp, ConcolicValue.from_int(ret, 8))
        self.write_register("rsp", rsp)
        return rsp


def read_varnode(state: MachineState, vn: Varnode) -> ConcolicValue:
    return state.read_varnode(vn)


def write_varnode(state: MachineState, vn: Varnode, value: ConcolicValue) -> None:
    state.write_varnode(vn, value)


def fork(state: MachineState) -> MachineState:
    return state.fork()


_REGISTER_MAP_CACHE: Dict[str, RegisterMap] = {}


def load_register_map(path: Optional[str] = None) -> RegisterMap:
    path = path or settings.REGISTER_MAP_PATH
    cached = _REGISTER_MAP_CACHE.get(path)
    if cached is not None:
        return dict(cached)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise FileUnreadableError(path, str(e)) from None
    except json.JSONDecodeError as e:
        raise MalformedSidecarError(path, e.msg, e.lineno) from None
    try:
        document = RegisterMapDocument.model_validate(raw)
    except ValidationError as e:
        raise MalformedSidecarError(path, str(e.errors()[0]["msg"])) from None

    mapping = {name.lower(): (spec.offset, spec.size) for name, spec in document.registers.items()}
    logger.debug(f"Loaded {len(mapping)} {document.architecture} registers from {path}")
    _REGISTER_MAP_CACHE[path] = mapping
    return dict(mapping)
