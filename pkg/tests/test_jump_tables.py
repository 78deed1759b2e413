import pytest

from pcodeguard.core.exceptions import IndexOutOfTableError
from pcodeguard.services.detection import InvariantProfile
from pcodeguard.services.emulator import OutcomeKind, resolve_branchind
from pcodeguard.services.explorer import Explorer
from pcodeguard.services.sidecars import JumpTableEntry, load_sidecars
from pcodeguard.symbolic.expr import evaluate
from pcodeguard.symbolic.solver import build_solver
from pcodeguard.symbolic.values import ConcolicValue

from support import fixture_path, fresh_state, load_fixture, make_config, make_emulator, run_to_end

SWITCH = 0x10
TABLES = {SWITCH: JumpTableEntry((0xA, 0xB, 0xC), "dil")}
DEST = ConcolicValue.from_int(0, 8)


def test_concrete_index_selects_one_target(state):
    state.write_register("rdi", 1)
    assert resolve_branchind(state, SWITCH, DEST, TABLES) == [(0xB, None)]


def test_index_base_is_subtracted(state):
    tables = {SWITCH: JumpTableEntry((0xA, 0xB, 0xC), "dil", 0x10)}
    state.write_register("rdi", 0x12)
    assert resolve_branchind(state, SWITCH, DEST, tables) == [(0xC, None)]


def test_symbolic_index_yields_constrained_pairs(state):
    state.make_symbolic_register("rdi", default=0)
    pairs = resolve_branchind(state, SWITCH, DEST, TABLES, op_index=2)
    assert [target for target, _ in pairs] == [0xA, 0xB, 0xC]
    for k, (_, constraint) in enumerate(pairs):
        assert constraint.origin == (SWITCH, 2)
        symbol_id = next(iter(state.symbols))
        assert evaluate(constraint.predicate(), {symbol_id: k}) == 1
        assert evaluate(constraint.predicate(), {symbol_id: k + 1}) == 0


def test_symbolic_index_is_concrete_when_exploration_is_off(state):
    state.make_symbolic_register("rdi", default=2)
    assert resolve_branchind(state, SWITCH, DEST, TABLES, explore=False) == [(0xC, None)]


def test_index_past_table_end(state):
    state.write_register("rdi", 7)
    with pytest.raises(IndexOutOfTableError) as info:
        resolve_branchind(state, SWITCH, DEST, TABLES)
    assert (info.value.index, info.value.size) == (7, 3)


def test_branch_without_table_uses_branch_value(state):
    dest = ConcolicValue.from_int(0x201020, 8)
    assert resolve_branchind(state, 0x999, dest, TABLES) == [(0x201020, None)]


def _jump_table_sidecars(img):
    return load_sidecars(img, fixture_path("jump_table.xrefs"), fixture_path("jump_table.json"))


@pytest.mark.parametrize("selector, exit_code", [(0, 0), (1, 1)])
def test_concrete_cases_exit(selector, exit_code):
    img = load_fixture("jump_table")
    sidecars = _jump_table_sidecars(img)
    state = fresh_state()
    state.write_register("rdi", selector)
    outcome = run_to_end(state, make_emulator(img, sidecars.xrefs, tables=sidecars.tables))
    assert outcome.kind is OutcomeKind.EXITED
    assert outcome.exit_code == exit_code


def test_overflowing_selector_is_a_finding():
    img = load_fixture("jump_table")
    sidecars = _jump_table_sidecars(img)
    state = fresh_state()
    state.write_register("rdi", 5)
    outcome = run_to_end(state, make_emulator(img, sidecars.xrefs, tables=sidecars.tables))
    assert outcome.kind is OutcomeKind.INVARIANT_HIT
    assert outcome.finding.label == "table_index_overflow"
    assert outcome.finding.address == 0x201008


def test_exploration_reaches_every_case_and_the_overflow(tmp_path):
    img = load_fixture("jump_table")
    sidecars = _jump_table_sidecars(img)
    state = fresh_state()
    state.make_symbolic_register("rdi")
    config = make_config(tmp_path, strategy="S2")

    explorer = Explorer(img, sidecars, InvariantProfile(), config, build_solver("enumeration"))
    result = explorer.explore(state, fork=True)

    found = {(f.label, f.address): f for f in result.findings}
    assert set(found) == {("index_out_of_range", 0x201028), ("table_index_overflow", 0x201008)}
    assert found[("index_out_of_range", 0x201028)].witness["rdi"] & 0xFF == 2
    assert found[("table_index_overflow", 0x201008)].witness["rdi"] & 0xFF >= 3
    assert all(f.replayed for f in result.findings)
    assert result.stats.runs == 4
    assert result.stats.forks == 3
