"""Emulator opcode handlers, driven through execute_op, checked against the expression language."""

import random

import pytest

from pcodeguard.core.exceptions import ExecFaultError, ExecFaultKind
from pcodeguard.pcode.model import BOOL_BINARY, COMPARISONS, Opcode, PcodeOp, SpaceKind, Varnode
from pcodeguard.services.detection import Detector, InvariantProfile
from pcodeguard.services.emulator import (
    CONCRETE_BINARY,
    CONCRETE_UNARY,
    DIVISIONS,
    OPCODE_BINOP,
    OPCODE_UNOP,
    Emulator,
    EmulatorOptions,
)
from pcodeguard.symbolic.expr import (
    BINARY_SEMANTICS,
    UnOp,
    binary,
    concat,
    eval_concrete,
    evaluate,
    extract,
    lit,
    resize,
    sext,
    unary,
    zext,
)
from pcodeguard.symbolic.values import ConcolicValue

from support import fresh_state, image_from

LEFT = Varnode(SpaceKind.REGISTER, 0x38, 1)
RIGHT = Varnode(SpaceKind.REGISTER, 0x30, 1)
WIDE = Varnode(SpaceKind.REGISTER, 0x38, 2)
OUT = Varnode(SpaceKind.UNIQUE, 0x100, 1)

BINARY_OPCODES = sorted(CONCRETE_BINARY, key=lambda o: o.value)
UNARY_OPCODES = sorted(CONCRETE_UNARY, key=lambda o: o.value)


@pytest.fixture(scope="module")
def img():
    return image_from("0x10\n  (register,0x0,8) = COPY (const,0x0,8)\n")


def _emulator(img, profile=None, **options) -> Emulator:
    return Emulator(img, detector=Detector(profile=profile), options=EmulatorOptions(**options))


def _run(emulator, state, op, instr) -> bytes:
    emulator.execute_op(state, op, 0, instr)
    return state.read_varnode(op.output).concrete


@pytest.mark.parametrize("opcode", BINARY_OPCODES, ids=lambda o: o.value)
def test_binary_ops_on_every_byte_pair(img, opcode):
    # Zero divisors continue past the C-profile finding with the total-division result
    emulator = _emulator(img, InvariantProfile.c_profile(), continue_after_finding=True)
    instr = img[0x10]
    state = fresh_state(0x10)
    op = PcodeOp(opcode, (LEFT, RIGHT), OUT)
    binop = OPCODE_BINOP[opcode]

    for a in range(256):
        state.write_varnode(LEFT, ConcolicValue.from_int(a, 1))
        for b in range(256):
            state.write_varnode(RIGHT, ConcolicValue.from_int(b, 1))
            expected = eval_concrete(binary(binop, lit(a, 8), lit(b, 8)), {})
            assert _run(emulator, state, op, instr) == expected, f"{opcode.value}({a:#x}, {b:#x})"

    if opcode in DIVISIONS:
        assert len(state.findings) == 256
        assert {f.label for f in state.findings} == {"division_by_zero"}
    else:
        assert state.findings == []


@pytest.mark.parametrize("opcode", sorted(DIVISIONS, key=lambda o: o.value), ids=lambda o: o.value)
def test_zero_divisor_faults_without_the_c_profile(img, opcode):
    state = fresh_state(0x10)
    state.write_varnode(LEFT, ConcolicValue.from_int(7, 1))
    state.write_varnode(RIGHT, ConcolicValue.from_int(0, 1))
    with pytest.raises(ExecFaultError) as info:
        _emulator(img).execute_op(state, PcodeOp(opcode, (LEFT, RIGHT), OUT), 0, img[0x10])
    assert info.value.kind is ExecFaultKind.DIVISION_BY_ZERO


UNARY_CASES = [
    *[(opcode, 1, lambda x, u=OPCODE_UNOP[opcode]: unary(u, x)) for opcode in UNARY_OPCODES],
    (Opcode.POPCOUNT, 1, lambda x: resize(unary(UnOp.POPCOUNT, x), 8)),
    *[(Opcode.INT_ZEXT, n, lambda x, n=n: zext(x, n * 8)) for n in (2, 4, 8)],
    *[(Opcode.INT_SEXT, n, lambda x, n=n: sext(x, n * 8)) for n in (2, 4, 8)],
]


@pytest.mark.parametrize(
    "opcode,out_size,reference",
    UNARY_CASES,
    ids=[f"{opcode.value}-{size}" for opcode, size, _ in UNARY_CASES],
)
def test_unary_and_extension_ops_on_every_byte(img, opcode, out_size, reference):
    emulator = _emulator(img)
    instr = img[0x10]
    out = Varnode(SpaceKind.UNIQUE, 0x100, out_size)
    op = PcodeOp(opcode, (LEFT,), out)

    for a in range(256):
        state = fresh_state(0x10)
        state.write_varnode(LEFT, ConcolicValue.from_int(a, 1))
        expected = eval_concrete(reference(lit(a, 8)), {})
        assert _run(emulator, state, op, instr) == expected, f"{opcode.value}({a:#x})"

        # Same op over a symbolic input must agree with its concrete shadow
        state.make_symbolic(LEFT, "x")
        emulator.execute_op(state, op, 0, instr)
        result = state.read_varnode(out)
        assert result.concrete == expected
        if result.is_symbolic:
            assert evaluate(result.symbolic, state.bindings) == result.value
        assert state.check_consistency() == []


def test_piece_on_every_byte_pair(img):
    emulator = _emulator(img)
    instr = img[0x10]
    state = fresh_state(0x10)
    out = Varnode(SpaceKind.UNIQUE, 0x100, 2)
    op = PcodeOp(Opcode.PIECE, (LEFT, RIGHT), out)
    for high in range(256):
        state.write_varnode(LEFT, ConcolicValue.from_int(high, 1))
        for low in range(256):
            state.write_varnode(RIGHT, ConcolicValue.from_int(low, 1))
            expected = eval_concrete(concat(lit(high, 8), lit(low, 8)), {})
            assert _run(emulator, state, op, instr) == expected


@pytest.mark.parametrize("offset", [0, 1])
def test_subpiece_on_every_halfword(img, offset):
    emulator = _emulator(img)
    instr = img[0x10]
    state = fresh_state(0x10)
    op = PcodeOp(Opcode.SUBPIECE, (WIDE, Varnode(SpaceKind.CONSTANT, offset, 4)), OUT)
    for a in range(1 << 16):
        state.write_varnode(WIDE, ConcolicValue.from_int(a, 2))
        assert _run(emulator, state, op, instr) == eval_concrete(extract(lit(a, 16), offset, 8), {})


def _varnode_pair(opcode: Opcode, size: int):
    in_size = 1 if opcode in BOOL_BINARY else size
    out_size = 1 if opcode in COMPARISONS or opcode in BOOL_BINARY else size
    return in_size, out_size


@pytest.mark.parametrize("size", [1, 2, 4, 8])
def test_sampled_symbolic_ops_stay_concolically_consistent(img, size):
    rng = random.Random(size)
    emulator = _emulator(img, InvariantProfile.c_profile(), continue_after_finding=True)
    instr = img[0x10]
    for opcode in BINARY_OPCODES:
        in_size, out_size = _varnode_pair(opcode, size)
        for i in range(20):
            state = fresh_state(0x10)
            a = rng.getrandbits(in_size * 8)
            # Every fifth sample divides by zero
            b = 0 if i % 5 == 0 else rng.getrandbits(in_size * 8)
            left = Varnode(SpaceKind.REGISTER, 0x38, in_size)
            state.write_varnode(left, ConcolicValue.from_int(a, in_size))
            state.make_symbolic(left, "x")
            right = Varnode(SpaceKind.CONSTANT, b, in_size)
            out = Varnode(SpaceKind.UNIQUE, 0x100, out_size)

            emulator.execute_op(state, PcodeOp(opcode, (left, right), out), 0, instr)
            result = state.read_varnode(out)

            expected = BINARY_SEMANTICS[OPCODE_BINOP[opcode]](a, b, in_size * 8)
            assert result.value == expected, f"{opcode.value} {a:#x} {b:#x}"
            if result.is_symbolic:
                assert evaluate(result.symbolic, state.bindings) == result.value
            assert state.check_consistency() == []
