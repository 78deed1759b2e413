import pytest

from pcodeguard.core.exceptions import ExecFaultKind
from pcodeguard.services.detection import InvariantProfile, PanicXrefSet, XrefEntry
from pcodeguard.services.emulator import OutcomeKind, Stub
from pcodeguard.core.config import settings

from support import fresh_state, image_from, make_emulator, run_to_end


def _step(text, state=None, **kwargs):
    img = image_from(text)
    state = state or fresh_state(img.first_address)
    emulator = make_emulator(img, **kwargs)
    return emulator.step(state), state


def test_int_add_and_fallthrough():
    outcome, state = _step(
        "0x10\n  (register,0x0,8) = INT_ADD (const,0x2,8) , (const,0x3,8)\n"
        "0x13\n  (register,0x0,8) = COPY (const,0x0,8)\n"
    )
    assert outcome.kind is OutcomeKind.CONTINUE
    assert outcome.next_pc == 0x13
    assert state.pc == 0x13
    assert state.read_register("rax").value == 5


def test_header_length_sets_fallthrough():
    outcome, _ = _step(
        "0x10 len=2\n  (register,0x0,8) = COPY (const,0x1,8)\n"
        "0x12\n  (register,0x0,8) = COPY (const,0x0,8)\n"
        "0x20\n  (register,0x0,8) = COPY (const,0x0,8)\n"
    )
    assert outcome.next_pc == 0x12


def test_cbranch_relative_skips_ops():
    outcome, state = _step(
        "0x10\n"
        "  CBRANCH (const,0x2,8) , (const,0x1,1)\n"
        "  (register,0x0,8) = COPY (const,0x1,8)\n"
        "  (register,0x18,8) = COPY (const,0x2,8)\n"
        "0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n"
    )
    assert outcome.next_pc == 0x14
    assert state.read_register("rax").value == 0
    assert state.read_register("rbx").value == 2


def test_signed_carry_and_arithmetic_shift():
    outcome, state = _step(
        "0x10\n"
        "  (register,0x20b,1) = INT_SCARRY (const,0x7f,1) , (const,0x1,1)\n"
        "  (register,0x0,1) = INT_SRIGHT (const,0x80,1) , (const,0x9,1)\n"
        "0x14\n  (register,0x8,8) = COPY (const,0x0,8)\n"
    )
    assert outcome.kind is OutcomeKind.CONTINUE
    assert state.read_register("of").value == 1
    assert state.read_register("al").value == 0xFF


def test_branch_to_absolute_address():
    outcome, state = _step(
        "0x10\n  BRANCH (ram,0x30,8)\n0x20\n  (register,0x0,8) = COPY (const,0x1,8)\n0x30\n  (register,0x0,8) = COPY (const,0x2,8)\n"
    )
    assert outcome.next_pc == 0x30 and state.pc == 0x30


def test_unmapped_branch_target_faults():
    outcome, _ = _step("0x10\n  BRANCH (ram,0x999,8)\n")
    assert outcome.kind is OutcomeKind.FAULTED
    assert outcome.fault.kind is ExecFaultKind.UNMAPPED_BRANCH_TARGET
    assert (outcome.fault.address, outcome.fault.op_index) == (0x10, 0)


def test_relative_branch_out_of_range_faults():
    outcome, _ = _step("0x10\n  BRANCH (const,0x5,8)\n0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n")
    assert outcome.kind is OutcomeKind.FAULTED


def test_running_past_last_instruction_faults():
    outcome, _ = _step("0x10\n  (register,0x0,8) = COPY (const,0x1,8)\n")
    assert outcome.kind is OutcomeKind.FAULTED
    assert "past the last instruction" in outcome.fault.reason


def test_panic_xref_halts_the_path():
    xrefs = PanicXrefSet({0x40: XrefEntry("nil_map_assignment", "assignment to entry in nil map")})
    img = image_from("0x10\n  BRANCH (ram,0x40,8)\n")
    state = fresh_state(0x10)
    emulator = make_emulator(img, xrefs)
    assert emulator.step(state).next_pc == 0x40
    outcome = emulator.step(state)
    assert outcome.kind is OutcomeKind.INVARIANT_HIT
    assert outcome.finding.label == "nil_map_assignment"
    assert outcome.finding.kind == "Nil Map Assignment"
    assert outcome.finding.address == 0x40
    assert state.findings == [outcome.finding]


DIVIDE = "0x10\n  (register,0x0,8) = INT_DIV (const,0x1,8) , (register,0x8,8)\n0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n"


def test_division_by_zero_faults_without_c_profile():
    outcome, _ = _step(DIVIDE)
    assert outcome.kind is OutcomeKind.FAULTED
    assert outcome.fault.kind is ExecFaultKind.DIVISION_BY_ZERO


def test_division_by_zero_is_a_finding_under_c_profile():
    outcome, _ = _step(DIVIDE, profile=InvariantProfile.c_profile())
    assert outcome.kind is OutcomeKind.INVARIANT_HIT
    assert outcome.finding.kind == "DivisionByZero"


def test_division_by_zero_can_continue_with_total_result():
    outcome, state = _step(DIVIDE, profile=InvariantProfile.c_profile(), continue_after_finding=True)
    assert outcome.kind is OutcomeKind.CONTINUE
    assert state.read_register("rax").value == (1 << 64) - 1
    assert len(state.findings) == 1


def test_stubbed_call_returns_value():
    text = (
        "0x10\n"
        "  (register,0x20,8) = INT_SUB (register,0x20,8) , (const,0x8,8)\n"
        "  STORE (const,0x1b1,8) , (register,0x20,8) , (const,0x15,8)\n"
        "  CALL (ram,0x500,8)\n"
        "0x15\n  (register,0x8,8) = COPY (register,0x0,8)\n"
    )
    img = image_from(text)
    state = fresh_state(0x10)
    rsp = state.read_register("rsp").value
    emulator = make_emulator(img, stubs={0x500: Stub("getpid", 7)})
    outcome = emulator.step(state)
    assert outcome.next_pc == 0x15
    assert state.read_register("rax").value == 7
    assert state.read_register("rsp").value == rsp


def test_return_to_sentinel_exits():
    outcome, _ = _step(f"0x10\n  RETURN (const,{settings.SENTINEL_RETURN:#x},8)\n")
    assert outcome.kind is OutcomeKind.EXITED
    assert outcome.exit_code == 0


def test_unknown_callother_faults_in_strict_mode():
    text = '0x10\n  (register,0x0,8) = CALLOTHER (const,0x9,4) , "cpuid"\n0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n'
    outcome, _ = _step(text, strict=True)
    assert outcome.kind is OutcomeKind.FAULTED
    assert outcome.fault.kind is ExecFaultKind.UNKNOWN_CALLOTHER

    state = fresh_state(0x10)
    state.write_register("rax", 9)
    outcome, state = _step(text, state=state)
    assert outcome.kind is OutcomeKind.CONTINUE
    assert state.read_register("rax").value == 0


def test_noop_callother_is_ignored_even_when_strict():
    outcome, _ = _step('0x10\n  CALLOTHER (const,0x2,4) , "lock"\n0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n', strict=True)
    assert outcome.kind is OutcomeKind.CONTINUE


def test_wide_arithmetic_is_unsupported():
    outcome, _ = _step(
        "0x10\n  (register,0x1200,16) = INT_ADD (register,0x1200,16) , (register,0x1220,16)\n"
        "0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n"
    )
    assert outcome.kind is OutcomeKind.FAULTED
    assert outcome.fault.kind is ExecFaultKind.UNSUPPORTED_OP


def test_wide_copy_is_supported():
    outcome, _ = _step(
        "0x10\n  (register,0x1200,16) = COPY (register,0x1220,16)\n0x14\n  (register,0x0,8) = COPY (const,0x0,8)\n"
    )
    assert outcome.kind is OutcomeKind.CONTINUE


def test_symbolic_branch_records_path_constraint():
    text = (
        "0x10\n"
        "  (register,0x206,1) = INT_EQUAL (register,0x38,1) , (const,0x2a,1)\n"
        "  CBRANCH (ram,0x30,8) , (register,0x206,1)\n"
        "0x20\n  (register,0x0,8) = COPY (const,0x0,8)\n"
        "0x30\n  (register,0x0,8) = COPY (const,0x1,8)\n"
    )
    state = fresh_state(0x10)
    state.make_symbolic_register("rdi", default=0)
    outcome, state = _step(text, state=state)
    assert outcome.next_pc == 0x20
    assert len(state.constraints) == 1
    constraint = state.constraints[0]
    assert constraint.origin == (0x10, 1)
    assert constraint.taken is False
    assert state.check_consistency() == []


def test_concrete_program_runs_to_exit():
    text = (
        "0x10\n"
        "  (register,0x0,8) = COPY (const,0xe7,8)\n"
        "  (register,0x38,8) = COPY (const,0x3,8)\n"
        '  CALLOTHER (const,0x5,4) , "syscall"\n'
    )
    img = image_from(text)
    outcome = run_to_end(fresh_state(0x10), make_emulator(img))
    assert outcome.kind is OutcomeKind.EXITED
    assert outcome.exit_code == 3
