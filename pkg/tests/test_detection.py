import pytest

from pcodeguard.pcode.model import Opcode, PcodeOp, SpaceKind, Varnode
from pcodeguard.schemas import CustomInvariant, Finding, Strategy
from pcodeguard.services.detection import (
    AccessEvent,
    AccessKind,
    Detector,
    FindingCollector,
    InvariantProfile,
    PanicXrefSet,
    XrefEntry,
    c_invariant_check,
    display_kind,
    s1_check,
)
from pcodeguard.symbolic.expr import zext
from pcodeguard.symbolic.solver import build_solver
from pcodeguard.symbolic.values import ConcolicValue

LOAD = PcodeOp(
    Opcode.LOAD,
    (Varnode(SpaceKind.CONSTANT, 0x1b1, 8), Varnode(SpaceKind.REGISTER, 0x0, 8)),
    Varnode(SpaceKind.REGISTER, 0x10, 8),
)
XREFS = PanicXrefSet({0x2034c5: XrefEntry("nil_map_assignment", "add an entry to a nil map")})


@pytest.fixture
def c_detector():
    return Detector(profile=InvariantProfile.c_profile(), solver=build_solver("enumeration"))


def test_s1_check_on_xref(state):
    state.pc = 0x2034c5
    finding = s1_check(state, XREFS)
    assert finding.label == "nil_map_assignment"
    assert finding.kind == "Nil Map Assignment"
    assert finding.message == "add an entry to a nil map"
    assert finding.address == 0x2034c5
    assert finding.strategy is Strategy.S1


def test_s1_check_elsewhere(state):
    state.pc = 0x2034c4
    assert s1_check(state, XREFS) is None


def test_null_load(state, c_detector):
    finding = c_invariant_check(state, LOAD, AccessEvent(AccessKind.LOAD, 0, 8), c_detector)
    assert finding.kind == "NullDeref"
    assert finding.strategy is Strategy.CPROFILE


def test_null_store(state, c_detector):
    finding = c_invariant_check(state, LOAD, AccessEvent(AccessKind.STORE, 0, 8), c_detector)
    assert finding.kind == "NullDeref"
    assert "store" in finding.message


def test_misaligned_load(state, c_detector):
    state.memory.write_bytes(0x1000, bytes(8))
    finding = c_invariant_check(state, LOAD, AccessEvent(AccessKind.LOAD, 0x1003, 4), c_detector)
    assert finding.kind == "MisalignedAccess"


def test_misaligned_store_is_allowed(state, c_detector):
    assert c_invariant_check(state, LOAD, AccessEvent(AccessKind.STORE, 0x1003, 4), c_detector) is None


def test_uninitialized_load(state, c_detector):
    finding = c_invariant_check(state, LOAD, AccessEvent(AccessKind.LOAD, 0x5000, 8), c_detector)
    assert finding.kind == "UninitializedRead"
    assert "0x5000" in finding.message


def test_store_then_load_is_clean(state, c_detector):
    state.memory.write(0x5000, ConcolicValue.from_int(1, 8))
    assert c_invariant_check(state, LOAD, AccessEvent(AccessKind.LOAD, 0x5000, 8), c_detector) is None


def test_symbolic_pointer_that_can_be_null(state, c_detector):
    state.make_symbolic_register("rdi", default=0x1005)
    pointer = zext(state.read_register("dil").symbolic, 64)
    event = AccessEvent(AccessKind.LOAD, 5, 8, pointer)
    finding = c_invariant_check(state, LOAD, event, c_detector)
    assert finding.kind == "NullDeref"
    assert finding.witness == {"rdi": 0x1000}


def test_checks_disabled_by_default_profile(state):
    detector = Detector()
    assert detector.on_access(state, LOAD, AccessEvent(AccessKind.LOAD, 0, 8)) is None
    assert detector.on_division_by_zero(state, 0x10) is None


def _rax_below_16() -> CustomInvariant:
    return CustomInvariant(name="rax_small", address=0x201000, register="rax", comparator="ult", constant=0x10)


def test_custom_invariant_on_concrete_register(state):
    detector = Detector(profile=InvariantProfile(custom=(_rax_below_16(),)))
    state.write_register("rax", 0x20)
    finding = detector.before_instruction(state)
    assert finding.label == "custom:rax_small"
    assert "rax ult 0x10" in finding.message

    state.write_register("rax", 1)
    assert detector.before_instruction(state) is None
    state.pc = 0x201004
    state.write_register("rax", 0x20)
    assert detector.before_instruction(state) is None


def test_custom_invariant_solves_for_symbolic_violation(state):
    invariant = CustomInvariant(name="dil_small", address=0x201000, register="dil", comparator="ult", constant=0x10)
    detector = Detector(profile=InvariantProfile(custom=(invariant,)), solver=build_solver("enumeration"))
    state.make_symbolic_register("dil", default=1)
    finding = detector.before_instruction(state)
    assert finding is not None
    assert finding.witness["dil"] >= 0x10


def test_xref_is_checked_before_custom_invariants(state):
    xrefs = PanicXrefSet({0x201000: XrefEntry("negative_shift", "negative shift amount")})
    detector = Detector(xrefs, InvariantProfile(custom=(_rax_below_16(),)))
    state.write_register("rax", 0x20)
    assert detector.before_instruction(state).label == "negative_shift"


def test_display_kinds():
    assert display_kind("index_out_of_range") == "Index Out Of Range"
    assert display_kind("uninitialized_read") == "UninitializedRead"
    assert display_kind("panic") == "Panic"


def _finding(run_id: int, label: str = "negative_shift", address: int = 0x10) -> Finding:
    return Finding(strategy=Strategy.S2, kind="Negative Shift", label=label, address=address, message="m", run_id=run_id)


def test_collector_keeps_lowest_run_per_site():
    collector = FindingCollector()
    assert collector.add(_finding(2))
    assert collector.add(_finding(1))
    assert not collector.add(_finding(3))
    assert collector.add(_finding(4, address=0x20))
    assert [(f.run_id, f.address) for f in collector.findings] == [(1, 0x10), (4, 0x20)]
    assert len(collector) == 2


def test_xref_set_rejects_duplicates():
    xrefs = PanicXrefSet()
    assert xrefs.add(0x10, "panic", "m")
    assert not xrefs.add(0x10, "panic", "other")
    assert list(xrefs) == [0x10]
