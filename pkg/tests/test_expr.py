import pytest

from pcodeguard.core.exceptions import UnboundSymbolError, UnsupportedOpError
from pcodeguard.symbolic.expr import (
    BinOp,
    Binary,
    Literal,
    UnOp,
    binary,
    concat,
    eval_concrete,
    evaluate,
    extract,
    ite,
    lit,
    negate,
    bool_of,
    render,
    sext,
    sym,
    symbol_ids,
    unary,
    zext,
)


def test_add_wraps_to_width():
    expr = binary(BinOp.ADD, sym(0, 8), lit(1, 8))
    assert eval_concrete(expr, {0: 0xFF}) == b"\x00"


def test_sborrow_detects_signed_overflow():
    expr = binary(BinOp.SBORROW, sym(0, 8), lit(1, 8))
    assert expr.width == 1
    assert evaluate(expr, {0: 0x80}) == 1
    assert evaluate(expr, {0: 0x81}) == 0


def test_literal_subtrees_fold():
    folded = binary(BinOp.MULT, lit(6, 32), lit(7, 32))
    assert isinstance(folded, Literal) and folded.value == 42
    assert isinstance(binary(BinOp.ADD, sym(0, 32), lit(0, 32)), Binary)


def test_signed_division_truncates_toward_zero():
    expr = binary(BinOp.SDIV, lit(0xF9, 8), lit(2, 8))  # -7 / 2
    assert expr.value == 0xFD
    assert binary(BinOp.SREM, lit(0xF9, 8), lit(2, 8)).value == 0xFF


def test_shift_at_or_past_width():
    assert binary(BinOp.LEFT, lit(1, 8), lit(8, 8)).value == 0
    assert binary(BinOp.RIGHT, lit(0x80, 8), lit(9, 8)).value == 0
    assert binary(BinOp.SRIGHT, lit(0x80, 8), lit(9, 8)).value == 0xFF
    assert binary(BinOp.SRIGHT, lit(0x40, 8), lit(9, 8)).value == 0


def test_extract_concat_and_extensions():
    value = lit(0x11223344, 32)
    assert extract(value, 1, 16).value == 0x2233
    assert concat(lit(0xAB, 8), lit(0xCD, 8)).value == 0xABCD
    assert zext(lit(0x80, 8), 32).value == 0x80
    assert sext(lit(0x80, 8), 32).value == 0xFFFFFF80

    x = sym(3, 32)
    assert evaluate(extract(x, 2, 8), {3: 0xAABBCCDD}) == 0xBB
    assert evaluate(sext(extract(x, 0, 8), 16), {3: 0xF0}) == 0xFFF0
    assert zext(x, 32) is x


def test_extract_past_end_is_rejected():
    with pytest.raises(ValueError):
        extract(sym(0, 16), 1, 16)


def test_width_mismatch_is_rejected():
    with pytest.raises(ValueError):
        binary(BinOp.ADD, sym(0, 8), lit(1, 16))


def test_wide_arithmetic_is_unsupported():
    with pytest.raises(UnsupportedOpError):
        binary(BinOp.ADD, sym(0, 128), lit(1, 128))
    assert binary(BinOp.XOR, sym(0, 128), lit(1, 128)).width == 128


def test_unary_ops():
    assert unary(UnOp.NEGATE, lit(0x0F, 8)).value == 0xF0
    assert unary(UnOp.TWOCOMP, lit(1, 8)).value == 0xFF
    assert unary(UnOp.POPCOUNT, lit(0xF1, 8)).value == 5
    assert unary(UnOp.BOOL_NEGATE, lit(0, 8)).value == 1


def test_ite_selects_branch():
    cond = binary(BinOp.EQUAL, sym(0, 8), lit(5, 8))
    expr = ite(cond, lit(10, 8), lit(20, 8))
    assert evaluate(expr, {0: 5}) == 10
    assert evaluate(expr, {0: 6}) == 20
    assert ite(lit(1, 1), lit(1, 8), lit(2, 8)).value == 1


def test_negate_and_bool_of():
    x = sym(0, 8)
    assert evaluate(bool_of(x), {0: 3}) == 1
    assert evaluate(negate(bool_of(x)), {0: 0}) == 1


def test_unbound_symbol():
    with pytest.raises(UnboundSymbolError) as info:
        evaluate(binary(BinOp.ADD, sym(7, 8), lit(1, 8)), {})
    assert info.value.symbol_id == 7


def test_render_uses_symbol_names():
    expr = binary(BinOp.EQUAL, sym(3, 8, "rdi"), lit(0x2a, 8))
    assert render(expr) == "(eq rdi 0x2a:8)"
    assert render(sym(3, 8)) == "sym3"


def test_symbol_ids_are_sorted_and_unique():
    x, y = sym(2, 8), sym(1, 8)
    expr = binary(BinOp.ADD, binary(BinOp.ADD, x, y), x)
    assert symbol_ids(expr) == [1, 2]
    assert symbol_ids(None) == []


def test_deep_chains_evaluate_without_recursion():
    expr = sym(0, 64)
    for _ in range(5000):
        expr = binary(BinOp.ADD, expr, lit(1, 64))
    assert evaluate(expr, {0: 1}) == 5001
