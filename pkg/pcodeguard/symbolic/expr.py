"""
Bitvector expression language.

Nodes are immutable and shared freely between states. Constructors fold
literal-only subtrees eagerly; no other rewriting is performed. The
reference semantics here are written independently of the emulator's
opcode handlers so the two can be checked against each other.
"""

import enum
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Mapping, Optional, Union

from pcodeguard.core.exceptions import UnboundSymbolError, UnsupportedOpError

MAX_WIDTH = 128


class BinOp(str, enum.Enum):
    ADD = "add"
    SUB = "sub"
    MULT = "mult"
    DIV = "div"
    SDIV = "sdiv"
    REM = "rem"
    SREM = "srem"
    AND = "and"
    OR = "or"
    XOR = "xor"
    LEFT = "shl"
    RIGHT = "lshr"
    SRIGHT = "ashr"
    EQUAL = "eq"
    NOTEQUAL = "ne"
    LESS = "ult"
    SLESS = "slt"
    LESSEQUAL = "ule"
    SLESSEQUAL = "sle"
    CARRY = "carry"
    SCARRY = "scarry"
    SBORROW = "sborrow"
    BOOL_AND = "band"
    BOOL_OR = "bor"
    BOOL_XOR = "bxor"


class UnOp(str, enum.Enum):
    NEGATE = "not"
    TWOCOMP = "neg"
    BOOL_NEGATE = "bnot"
    POPCOUNT = "popcount"


PREDICATES = frozenset(
    {
        BinOp.EQUAL,
        BinOp.NOTEQUAL,
        BinOp.LESS,
        BinOp.SLESS,
        BinOp.LESSEQUAL,
        BinOp.SLESSEQUAL,
        BinOp.CARRY,
        BinOp.SCARRY,
        BinOp.SBORROW,
    }
)
SHIFT_OPS = frozenset({BinOp.LEFT, BinOp.RIGHT, BinOp.SRIGHT})
WIDE_BINARY_OK = frozenset({BinOp.AND, BinOp.OR, BinOp.XOR})


@dataclass(frozen=True, slots=True, eq=False)
class Literal:
    value: int
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class Symbol:
    id: int
    width: int
    name: str = ""


@dataclass(frozen=True, slots=True, eq=False)
class Unary:
    op: UnOp
    child: "BitvecExpr"
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class Binary:
    op: BinOp
    left: "BitvecExpr"
    right: "BitvecExpr"
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class Extract:
    child: "BitvecExpr"
    low_byte: int
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class Concat:
    high: "BitvecExpr"
    low: "BitvecExpr"
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class ZeroExtend:
    child: "BitvecExpr"
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class SignExtend:
    child: "BitvecExpr"
    width: int


@dataclass(frozen=True, slots=True, eq=False)
class IfThenElse:
    cond: "BitvecExpr"
    then: "BitvecExpr"
    else_: "BitvecExpr"
    width: int


BitvecExpr = Union[
    Literal, Symbol, Unary, Binary, Extract, Concat, ZeroExtend, SignExtend, IfThenElse
]


def mask(width: int) -> int:
    return (1 << width) - 1


def to_signed(value: int, width: int) -> int:
    return value - (1 << width) if value >> (width - 1) & 1 else value


def _check_width(width: int) -> None:
    if width != 1 and (width % 8 or not 8 <= width <= MAX_WIDTH):
        raise ValueError(f"unsupported bitvector width {width}")


def children(expr: BitvecExpr) -> tuple:
    if isinstance(expr, (Literal, Symbol)):
        return ()
    if isinstance(expr, Binary):
        return (expr.left, expr.right)
    if isinstance(expr, Concat):
        return (expr.high, expr.low)
    if isinstance(expr, IfThenElse):
        return (expr.cond, expr.then, expr.else_)
    return (expr.child,)


def postorder(expr: BitvecExpr) -> Iterator[BitvecExpr]:
    """Yields each distinct node once, children before parents, without recursion."""
    seen = set()
    stack = [(expr, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            yield node
            continue
        stack.append((node, True))
        for child in children(node):
            if id(child) not in seen:
                stack.append((child, False))


# --- Reference semantics ---


def _sdiv(a: int, b: int, w: int) -> int:
    if b == 0:
        return mask(w) if to_signed(a, w) >= 0 else 1
    sa, sb = to_signed(a, w), to_signed(b, w)
    q = abs(sa) // abs(sb)
    return (-q if (sa < 0) != (sb < 0) else q) & mask(w)


def _srem(a: int, b: int, w: int) -> int:
    if b == 0:
        return a
    sa, sb = to_signed(a, w), to_signed(b, w)
    r = abs(sa) % abs(sb)
    return (-r if sa < 0 else r) & mask(w)


def _sright(a: int, b: int, w: int) -> int:
    if b >= w:
        return mask(w) if a >> (w - 1) & 1 else 0
    return (to_signed(a, w) >> b) & mask(w)


def _in_signed_range(v: int, w: int) -> bool:
    return -(1 << (w - 1)) <= v < (1 << (w - 1))


BINARY_SEMANTICS: Dict[BinOp, Callable[[int, int, int], int]] = {
    BinOp.ADD: lambda a, b, w: (a + b) & mask(w),
    BinOp.SUB: lambda a, b, w: (a - b) & mask(w),
    BinOp.MULT: lambda a, b, w: (a * b) & mask(w),
    BinOp.DIV: lambda a, b, w: a // b if b else mask(w),
    BinOp.SDIV: _sdiv,
    BinOp.REM: lambda a, b, w: a % b if b else a,
    BinOp.SREM: _srem,
    BinOp.AND: lambda a, b, w: a & b,
    BinOp.OR: lambda a, b, w: a | b,
    BinOp.XOR: lambda a, b, w: a ^ b,
    BinOp.LEFT: lambda a, b, w: (a << b) & mask(w) if b < w else 0,
    BinOp.RIGHT: lambda a, b, w: a >> b if b < w else 0,
    BinOp.SRIGHT: _sright,
    BinOp.EQUAL: lambda a, b, w: int(a == b),
    BinOp.NOTEQUAL: lambda a, b, w: int(a != b),
    BinOp.LESS: lambda a, b, w: int(a < b),
    BinOp.SLESS: lambda a, b, w: int(to_signed(a, w) < to_signed(b, w)),
    BinOp.LESSEQUAL: lambda a, b, w: int(a <= b),
    BinOp.SLESSEQUAL: lambda a, b, w: int(to_signed(a, w) <= to_signed(b, w)),
    BinOp.CARRY: lambda a, b, w: int(a + b > mask(w)),
    BinOp.SCARRY: lambda a, b, w: int(not _in_signed_range(to_signed(a, w) + to_signed(b, w), w)),
    BinOp.SBORROW: lambda a, b, w: int(not _in_signed_range(to_signed(a, w) - to_signed(b, w), w)),
    BinOp.BOOL_AND: lambda a, b, w: int(bool(a) and bool(b)),
    BinOp.BOOL_OR: lambda a, b, w: int(bool(a) or bool(b)),
    BinOp.BOOL_XOR: lambda a, b, w: int(bool(a) != bool(b)),
}

UNARY_SEMANTICS: Dict[UnOp, Callable[[int, int], int]] = {
    UnOp.NEGATE: lambda a, w: ~a & mask(w),
    UnOp.TWOCOMP: lambda a, w: -a & mask(w),
    UnOp.BOOL_NEGATE: lambda a, w: int(a == 0),
    UnOp.POPCOUNT: lambda a, w: bin(a).count("1"),
}


def _node_value(node: BitvecExpr, values: Dict[int, int], bindings: Mapping[int, int]) -> int:
    if isinstance(node, Literal):
        return node.value
    if isinstance(node, Symbol):
        if node.id not in bindings:
            raise UnboundSymbolError(node.id)
        return bindings[node.id] & mask(node.width)
    if isinstance(node, Binary):
        a, b = values[id(node.left)], values[id(node.right)]
        return BINARY_SEMANTICS[node.op](a, b, node.left.width)
    if isinstance(node, Unary):
        return UNARY_SEMANTICS[node.op](values[id(node.child)], node.child.width) & mask(node.width)
    if isinstance(node, Extract):
        return (values[id(node.child)] >> (node.low_byte * 8)) & mask(node.width)
    if isinstance(node, Concat):
        return (values[id(node.high)] << node.low.width) | values[id(node.low)]
    if isinstance(node, ZeroExtend):
        return values[id(node.child)]
    if isinstance(node, SignExtend):
        return to_signed(values[id(node.child)], node.child.width) & mask(node.width)
    if isinstance(node, IfThenElse):
        return values[id(node.then)] if values[id(node.cond)] else values[id(node.else_)]
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(expr: BitvecExpr, bindings: Mapping[int, int]) -> int:
    """Unsigned value of `expr` under `bindings` (symbol id → value)."""
    values: Dict[int, int] = {}
    for node in postorder(expr):
        values[id(node)] = _node_value(node, values, bindings)
    return values[id(expr)]


def eval_concrete(expr: BitvecExpr, bindings: Mapping[int, int]) -> bytes:
    """Little-endian bytes of the expression's value."""
    return evaluate(expr, bindings).to_bytes(max(1, (expr.width + 7) // 8), "little")


def symbols_of(expr: BitvecExpr) -> Dict[int, Symbol]:
    return {node.id: node for node in postorder(expr) if isinstance(node, Symbol)}


def is_concrete(expr: BitvecExpr) -> bool:
    return isinstance(expr, Literal)


# --- Constructors (fold literal-only subtrees) ---


def lit(value: int, width: int) -> Literal:
    _check_width(width)
    return Literal(value & mask(width), width)


def sym(symbol_id: int, width: int, name: str = "") -> Symbol:
    _check_width(width)
    return Symbol(symbol_id, width, name or f"sym{symbol_id}")


def binary(op: BinOp, left: BitvecExpr, right: BitvecExpr) -> BitvecExpr:
    if op not in SHIFT_OPS and left.width != right.width:
        raise ValueError(f"{op.value}: operand widths {left.width} and {right.width} differ")
    if left.width > 64 and op not in WIDE_BINARY_OK:
        raise UnsupportedOpError(f"{op.value} on {left.width}-bit operands")
    width = 1 if op in PREDICATES else left.width
    if isinstance(left, Literal) and isinstance(right, Literal):
        return Literal(BINARY_SEMANTICS[op](left.value, right.value, left.width), width)
    return Binary(op, left, right, width)


def unary(op: UnOp, child: BitvecExpr) -> BitvecExpr:
    if child.width > 64 and op is not UnOp.NEGATE:
        raise UnsupportedOpError(f"{op.value} on {child.width}-bit operand")
    if isinstance(child, Literal):
        return Literal(UNARY_SEMANTICS[op](child.value, child.width) & mask(child.width), child.width)
    return Unary(op, child, child.width)


def extract(child: BitvecExpr, low_byte: int, width: int) -> BitvecExpr:
    _check_width(width)
    if low_byte * 8 + width > child.width:
        raise ValueError("extract past the end of its operand")
    if isinstance(child, Literal):
        return Literal((child.value >> (low_byte * 8)) & mask(width), width)
    return Extract(child, low_byte, width)


def concat(high: BitvecExpr, low: BitvecExpr) -> BitvecExpr:
    width = high.width + low.width
    _check_width(width)
    if isinstance(high, Literal) and isinstance(low, Literal):
        return Literal((high.value << low.width) | low.value, width)
    return Concat(high, low, width)


def zext(child: BitvecExpr, width: int) -> BitvecExpr:
    _check_width(width)
    if width == child.width:
        return child
    if width < child.width:
        raise ValueError("zero-extension cannot narrow")
    if isinstance(child, Literal):
        return Literal(child.value, width)
    return ZeroExtend(child, width)


def sext(child: BitvecExpr, width: int) -> BitvecExpr:
    _check_width(width)
    if width == child.width:
        return child
    if width < child.width:
        raise ValueError("sign-extension cannot narrow")
    if width > 64:
        raise UnsupportedOpError(f"sign-extension to {width} bits")
    if isinstance(child, Literal):
        return Literal(to_signed(child.value, child.width) & mask(width), width)
    return SignExtend(child, width)


def ite(cond: BitvecExpr, then: BitvecExpr, else_: BitvecExpr) -> BitvecExpr:
    if cond.width != 1 or then.width != else_.width:
        raise ValueError("ite needs a 1-bit condition and equal-width branches")
    if isinstance(cond, Literal):
        return then if cond.value else else_
    return IfThenElse(cond, then, else_, then.width)


def resize(expr: BitvecExpr, width: int) -> BitvecExpr:
    """Truncates (low bytes) or zero-extends to `width` bits."""
    if width == expr.width:
        return expr
    if width < expr.width:
        return extract(expr, 0, width)
    return zext(expr, width)


def bool_of(expr: BitvecExpr) -> BitvecExpr:
    """1-bit truth value of an arbitrary-width expression (nonzero is true)."""
    if expr.width == 1:
        return expr
    return binary(BinOp.NOTEQUAL, expr, lit(0, expr.width))


def negate(predicate: BitvecExpr) -> BitvecExpr:
    return binary(BinOp.EQUAL, predicate, lit(0, 1))


def render(expr: BitvecExpr) -> str:
    """Compact prefix rendering, used in messages and debug logs."""
    text: Dict[int, str] = {}
    for node in postorder(expr):
        if isinstance(node, Literal):
            s = f"0x{node.value:x}:{node.width}"
        elif isinstance(node, Symbol):
            s = node.name
        elif isinstance(node, Binary):
            s = f"({node.op.value} {text[id(node.left)]} {text[id(node.right)]})"
        elif isinstance(node, Unary):
            s = f"({node.op.value} {text[id(node.child)]})"
        elif isinstance(node, Extract):
            s = f"(extract {node.low_byte} {node.width} {text[id(node.child)]})"
        elif isinstance(node, Concat):
            s = f"(concat {text[id(node.high)]} {text[id(node.low)]})"
        elif isinstance(node, ZeroExtend):
            s = f"(zext {node.width} {text[id(node.child)]})"
        elif isinstance(node, SignExtend):
            s = f"(sext {node.width} {text[id(node.child)]})"
        else:
            s = f"(ite {text[id(node.cond)]} {text[id(node.then)]} {text[id(node.else_)]})"
        text[id(node)] = s
    return text[id(expr)]


def symbol_ids(expr: Optional[BitvecExpr]) -> List[int]:
    if expr is None:
        return []
    return sorted(symbols_of(expr))
