"""
The x86-64 Linux syscall subset the guest programs need.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

from pcodeguard.core.exceptions import ExecFaultError, ExecFaultKind
from pcodeguard.state.machine import PAGE_SIZE, MachineState, StreamRole

logger = logging.getLogger(__name__)

SYSCALL_NUMBER_REGISTER = "rax"
SYSCALL_ARG_REGISTERS = ("rdi", "rsi", "rdx", "r10", "r8", "r9")

EBADF = 9
ENOMEM = 12
EINVAL = 22
MAP_ANONYMOUS = 0x20
# Largest region brk/mmap will zero-fill
MAX_MAPPING = 1 << 26


class Syscall(enum.IntEnum):
    READ = 0
    WRITE = 1
    CLOSE = 3
    MMAP = 9
    BRK = 12
    EXIT = 60
    EXIT_GROUP = 231


@dataclass(frozen=True)
class SyscallResult:
    number: int
    args: Tuple[int, ...]
    exit_code: Optional[int] = None


def _align(value: int) -> int:
    return (value + PAGE_SIZE - 1) & ~(PAGE_SIZE - 1)


def _neg(errno: int) -> int:
    return (-errno) & ((1 << 64) - 1)


def syscall_args(state: MachineState) -> Tuple[int, ...]:
    return tuple(state.read_register(name).value for name in SYSCALL_ARG_REGISTERS)


def _sys_read(state: MachineState, fd: int, buf: int, count: int) -> int:
    vfs = state.vfs
    if fd == 0 and vfs.symbolic_stdin > 0 and vfs.role(0) is StreamRole.STDIN:
        n = min(count, vfs.symbolic_stdin)
        concrete = vfs.read(0, n) or b""
        for i in range(n):
            default = concrete[i] if i < len(concrete) else 0
            value = state.new_symbol(f"stdin{vfs.stdin_symbols}", 1, default)
            vfs.stdin_symbols += 1
            state.memory.write(buf + i, value)
        vfs.symbolic_stdin -= n
        return n
    data = vfs.read(fd, count)
    if data is None:
        return _neg(EBADF)
    if data:
        state.memory.write_bytes(buf, data)
    return len(data)


def _sys_write(state: MachineState, fd: int, buf: int, count: int) -> int:
    if count > MAX_MAPPING:
        return _neg(EINVAL)
    data = state.memory.read(buf, count).concrete if count else b""
    if not state.vfs.write(fd, data):
        return _neg(EBADF)
    return count


def _sys_brk(state: MachineState, requested: int) -> int:
    if requested <= state.brk or requested - state.brk > MAX_MAPPING:
        return state.brk
    state.memory.write_bytes(state.brk, bytes(requested - state.brk))
    state.brk = requested
    return state.brk


def _sys_mmap(state: MachineState, length: int, flags: int) -> int:
    if not flags & MAP_ANONYMOUS:
        return _neg(EBADF)
    size = _align(max(length, 1))
    if size > MAX_MAPPING:
        return _neg(ENOMEM)
    base = state.mmap_next
    state.memory.write_bytes(base, bytes(size))
    state.mmap_next += size
    return base


def do_syscall(state: MachineState, strict: bool = False) -> SyscallResult:
    """Dispatches on rax; the result goes back to rax unless the guest exits."""
    number = state.read_register(SYSCALL_NUMBER_REGISTER).value
    args = syscall_args(state)
    a0, a1, a2, a3 = args[0], args[1], args[2], args[3]

    if number in (Syscall.EXIT, Syscall.EXIT_GROUP):
        logger.debug(f"exit syscall {number} with status {a0 & 0xFF}")
        return SyscallResult(number, args, exit_code=a0 & 0xFF)

    if number == Syscall.READ:
        result = _sys_read(state, a0, a1, a2)
    elif number == Syscall.WRITE:
        result = _sys_write(state, a0, a1, a2)
    elif number == Syscall.CLOSE:
        result = 0 if state.vfs.close(a0) else _neg(EBADF)
    elif number == Syscall.MMAP:
        result = _sys_mmap(state, a1, a3)
    elif number == Syscall.BRK:
        result = _sys_brk(state, a0)
    elif strict:
        raise ExecFaultError(ExecFaultKind.UNKNOWN_SYSCALL, f"syscall {number} is not emulated")
    else:
        logger.warning(f"Unknown syscall {number}; returning 0")
        result = 0

    state.registers.write_named(SYSCALL_NUMBER_REGISTER, result)
    return SyscallResult(number, args)
