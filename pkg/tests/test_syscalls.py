import pytest

from pcodeguard.core.config import settings
from pcodeguard.core.exceptions import ExecFaultError, ExecFaultKind
from pcodeguard.services.emulator import OutcomeKind
from pcodeguard.services.syscalls import EBADF, EINVAL, Syscall, do_syscall
from pcodeguard.state.machine import MachineState

from support import image_from, make_emulator, run_to_end

BUFFER = 0x600000


def _call(state, number, *args):
    state.write_register("rax", number)
    for name, value in zip(("rdi", "rsi", "rdx", "r10", "r8", "r9"), args):
        state.write_register(name, value)
    return do_syscall(state)


def _errno(code: int) -> int:
    return (-code) & ((1 << 64) - 1)


def test_write_to_stdout(state):
    state.memory.write_bytes(BUFFER, b"hello")
    result = _call(state, Syscall.WRITE, 1, BUFFER, 5)
    assert result.exit_code is None
    assert result.args[:3] == (1, BUFFER, 5)
    assert state.read_register("rax").value == 5
    assert state.vfs.stdout == b"hello"


def test_write_to_stdin_or_closed_descriptor(state):
    _call(state, Syscall.WRITE, 0, BUFFER, 1)
    assert state.read_register("rax").value == _errno(EBADF)
    _call(state, Syscall.CLOSE, 1)
    assert state.read_register("rax").value == 0
    _call(state, Syscall.WRITE, 1, BUFFER, 1)
    assert state.read_register("rax").value == _errno(EBADF)
    _call(state, Syscall.CLOSE, 1)
    assert state.read_register("rax").value == _errno(EBADF)


def test_exit_group_reports_status(state):
    result = _call(state, Syscall.EXIT_GROUP, 0x102)
    assert result.exit_code == 2


def test_read_from_stdin():
    state = MachineState(stdin=b"abc")
    _call(state, Syscall.READ, 0, BUFFER, 8)
    assert state.read_register("rax").value == 3
    assert state.memory.read(BUFFER, 3).concrete == b"abc"
    _call(state, Syscall.READ, 0, BUFFER, 8)
    assert state.read_register("rax").value == 0


def test_symbolic_stdin_bytes_are_named_inputs():
    state = MachineState(stdin=b"AB", symbolic_stdin=2)
    _call(state, Syscall.READ, 0, BUFFER, 4)
    assert state.read_register("rax").value == 2
    first = state.memory.read(BUFFER, 1)
    assert first.is_symbolic and first.value == ord("A")
    assert state.named_bindings() == {"stdin0": ord("A"), "stdin1": ord("B")}
    assert state.vfs.symbolic_stdin == 0


def test_brk_grows_zeroed_heap(state):
    _call(state, Syscall.BRK, 0)
    assert state.read_register("rax").value == settings.HEAP_BASE
    _call(state, Syscall.BRK, settings.HEAP_BASE + 0x100)
    assert state.read_register("rax").value == settings.HEAP_BASE + 0x100
    assert state.memory.is_initialized(settings.HEAP_BASE, 0x100)


def test_anonymous_mmap_hands_out_pages(state):
    _call(state, Syscall.MMAP, 0, 0x10, 3, 0x22)
    first = state.read_register("rax").value
    _call(state, Syscall.MMAP, 0, 0x10, 3, 0x22)
    second = state.read_register("rax").value
    assert first == settings.MMAP_BASE
    assert second == first + 0x1000
    assert state.memory.is_initialized(first, 0x10)


def test_file_backed_mmap_is_refused(state):
    _call(state, Syscall.MMAP, 0, 0x10, 3, 0x2)
    assert state.read_register("rax").value == _errno(EBADF)


def test_unknown_syscall_returns_zero_when_lenient(state):
    _call(state, 9999)
    assert state.read_register("rax").value == 0


def test_unknown_syscall_is_an_error_when_strict(state):
    state.write_register("rax", 9999)
    with pytest.raises(ExecFaultError) as info:
        do_syscall(state, strict=True)
    assert info.value.kind is ExecFaultKind.UNKNOWN_SYSCALL


def test_strict_emulator_faults_on_unknown_syscall(state):
    img = image_from(
        "0x201000\n"
        "  (register,0x0,8) = COPY (const,0x270f,8)\n"
        '  CALLOTHER (const,0x5,4) , "syscall"\n'
    )
    outcome = make_emulator(img, strict=True).step(state)
    assert outcome.kind is OutcomeKind.FAULTED
    assert outcome.fault.kind is ExecFaultKind.UNKNOWN_SYSCALL
    assert outcome.fault.address == 0x201000


def test_exit_through_emulator(state):
    img = image_from(
        "0x201000\n"
        "  (register,0x0,8) = COPY (const,0xe7,8)\n"
        "  (register,0x38,8) = COPY (const,0x0,8)\n"
        '  CALLOTHER (const,0x5,4) , "syscall"\n'
    )
    outcome = make_emulator(img).step(state)
    assert outcome.kind is OutcomeKind.EXITED
    assert outcome.exit_code == 0


def test_syscall_stub_address_is_emulated(state):
    img = image_from(
        "0x201000\n"
        "  (register,0x0,8) = COPY (const,0x3c,8)\n"
        "  (register,0x38,8) = COPY (const,0x4,8)\n"
        "  CALL (ram,0x400000,8)\n"
    )
    outcome = make_emulator(img, syscall_stub=0x400000).step(state)
    assert outcome.kind is OutcomeKind.EXITED
    assert outcome.exit_code == 4


def test_oversized_write_is_rejected(state):
    state.memory.write_bytes(BUFFER, b"x")
    _call(state, Syscall.WRITE, 1, BUFFER, (1 << 64) - 1)
    assert state.read_register("rax").value == _errno(EINVAL)
    assert state.vfs.stdout == b""


def test_oversized_write_does_not_stop_the_guest(state):
    img = image_from(
        "0x201000\n"
        "  (register,0x0,8) = COPY (const,0x1,8)\n"
        "  (register,0x38,8) = COPY (const,0x1,8)\n"
        "  (register,0x30,8) = COPY (const,0x600000,8)\n"
        "  (register,0x10,8) = COPY (const,0xffffffffffffffff,8)\n"
        '  CALLOTHER (const,0x5,4) , "syscall"\n'
        "0x201010\n"
        "  (register,0x0,8) = COPY (const,0x3c,8)\n"
        "  (register,0x38,8) = COPY (const,0x0,8)\n"
        '  CALLOTHER (const,0x5,4) , "syscall"\n'
    )
    outcome = run_to_end(state, make_emulator(img))
    assert outcome.kind is OutcomeKind.EXITED
    assert outcome.exit_code == 0
    assert state.vfs.stdout == b""
