"""
Solver adapters.

Every backend answers the same question, satisfiability of a conjunction of
path constraints plus an optional extra predicate, and every Sat model is
cross-checked with `model_check` before it leaves this module.
"""

import copy
import enum
import itertools
import logging
import re
import shlex
import subprocess
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from pcodeguard.core.config import settings
from pcodeguard.symbolic.expr import (
    BinOp,
    Binary,
    BitvecExpr,
    Concat,
    Extract,
    IfThenElse,
    Literal,
    SignExtend,
    Symbol,
    UnOp,
    Unary,
    ZeroExtend,
    bool_of,
    children,
    evaluate,
    mask,
    postorder,
)
from pcodeguard.symbolic.values import PathConstraint

logger = logging.getLogger(__name__)

try:
    import z3

    HAS_Z3 = True
except ImportError:
    HAS_Z3 = False


class VerdictStatus(str, enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class SolverVerdict:
    status: VerdictStatus
    model: Dict[int, int] = field(default_factory=dict)
    reason: str = ""

    @property
    def is_sat(self) -> bool:
        return self.status is VerdictStatus.SAT

    @classmethod
    def sat(cls, model: Dict[int, int]) -> "SolverVerdict":
        return cls(VerdictStatus.SAT, dict(model))

    @classmethod
    def unsat(cls) -> "SolverVerdict":
        return cls(VerdictStatus.UNSAT)

    @classmethod
    def unknown(cls, reason: str) -> "SolverVerdict":
        return cls(VerdictStatus.UNKNOWN, reason=reason)


def query_predicates(
    constraints: Sequence[PathConstraint], extra: Optional[BitvecExpr] = None
) -> List[BitvecExpr]:
    preds = [c.predicate() for c in constraints]
    if extra is not None:
        preds.append(bool_of(extra))
    return preds


def query_symbols(predicates: Sequence[BitvecExpr]) -> Dict[int, Symbol]:
    found: Dict[int, Symbol] = {}
    for pred in predicates:
        for node in postorder(pred):
            if isinstance(node, Symbol):
                found[node.id] = node
    return dict(sorted(found.items()))


def model_check(constraints: Sequence[PathConstraint], model: Mapping[int, int], extra: Optional[BitvecExpr] = None) -> bool:
    """True iff every constraint (and `extra`) evaluates to 1 under `model`."""
    return all(evaluate(p, model) == 1 for p in query_predicates(constraints, extra))


class SolverAdapter(ABC):
    """One adapter instance serves one exploration worker at a time."""

    name = "abstract"

    def __init__(self, timeout_ms: Optional[int] = None):
        self.timeout_ms = timeout_ms if timeout_ms is not None else settings.SOLVER_TIMEOUT_MS

    def check_sat(
        self,
        constraints: Sequence[PathConstraint],
        extra: Optional[BitvecExpr] = None,
        hints: Optional[Mapping[int, int]] = None,
    ) -> SolverVerdict:
        predicates = query_predicates(constraints, extra)
        if not predicates:
            return SolverVerdict.sat({})
        verdict = self._solve(predicates, hints or {})
        if verdict.is_sat:
            if not all(evaluate(p, verdict.model) == 1 for p in predicates):
                logger.warning(f"{self.name}: rejecting a model that fails the constraints")
                return SolverVerdict.unknown("model rejected by model_check")
        logger.debug(f"{self.name}: {len(predicates)} predicate(s) -> {verdict.status.value}")
        return verdict

    def fresh(self) -> "SolverAdapter":
        """A new adapter with the same settings, for use on another thread."""
        return copy.copy(self)

    @abstractmethod
    def _solve(self, predicates: List[BitvecExpr], hints: Mapping[int, int]) -> SolverVerdict:
        ...


# --- Built-in bounded enumeration ---


def relevant_spans(predicates: Sequence[BitvecExpr]) -> Dict[int, Tuple[int, int]]:
    """Per symbol, the [low, high) bit span the query actually reads."""
    spans: Dict[int, Tuple[int, int]] = {}

    def widen(s: Symbol, lo: int, hi: int):
        old = spans.get(s.id)
        spans[s.id] = (lo, hi) if old is None else (min(old[0], lo), max(old[1], hi))

    for pred in predicates:
        if isinstance(pred, Symbol):
            widen(pred, 0, pred.width)
        for node in postorder(pred):
            for child in children(node):
                if not isinstance(child, Symbol):
                    continue
                if isinstance(node, Extract):
                    widen(child, node.low_byte * 8, node.low_byte * 8 + node.width)
                else:
                    widen(child, 0, child.width)
    return spans


class EnumerationSolver(SolverAdapter):
    """Exhaustive search; complete whenever the referenced symbolic bits fit the limit."""

    name = "enumeration"

    def __init__(self, timeout_ms: Optional[int] = None, bit_limit: Optional[int] = None):
        super().__init__(timeout_ms)
        self.bit_limit = bit_limit if bit_limit is not None else settings.ENUMERATION_BIT_LIMIT

    def fresh(self) -> "EnumerationSolver":
        return EnumerationSolver(self.timeout_ms, self.bit_limit)

    def symbolic_bits(self, predicates: Sequence[BitvecExpr]) -> int:
        return sum(hi - lo for lo, hi in relevant_spans(predicates).values())

    def _solve(self, predicates: List[BitvecExpr], hints: Mapping[int, int]) -> SolverVerdict:
        symbols = query_symbols(predicates)
        spans = relevant_spans(predicates)
        total = sum(hi - lo for lo, hi in spans.values())
        if total > self.bit_limit:
            return SolverVerdict.unknown(f"{total} symbolic bits exceed the enumeration limit {self.bit_limit}")

        ids = list(symbols)
        bases = []
        for sid in ids:
            lo, hi = spans[sid]
            span_mask = mask(hi - lo) << lo
            bases.append((hints.get(sid, 0) & mask(symbols[sid].width)) & ~span_mask)

        deadline = time.monotonic() + self.timeout_ms / 1000.0
        ranges = [range(1 << (spans[sid][1] - spans[sid][0])) for sid in ids]
        for count, combo in enumerate(itertools.product(*ranges)):
            if count & 0xFFF == 0xFFF and time.monotonic() > deadline:
                return SolverVerdict.unknown("enumeration timeout")
            model = {
                sid: base | (x << spans[sid][0]) for sid, base, x in zip(ids, bases, combo)
            }
            if all(evaluate(p, model) == 1 for p in predicates):
                return SolverVerdict.sat(model)
        return SolverVerdict.unsat()


# --- z3 library backend ---


def _z3_term(node: BitvecExpr, t: Dict[int, "z3.BitVecRef"], ctx=None):
    if isinstance(node, Literal):
        return z3.BitVecVal(node.value, node.width, ctx)
    if isinstance(node, Symbol):
        return z3.BitVec(f"s{node.id}", node.width, ctx)
    if isinstance(node, Unary):
        a = t[id(node.child)]
        w = node.child.width
        if node.op is UnOp.NEGATE:
            return ~a
        if node.op is UnOp.TWOCOMP:
            return -a
        if node.op is UnOp.BOOL_NEGATE:
            return z3.If(a == 0, z3.BitVecVal(1, w, ctx), z3.BitVecVal(0, w, ctx))
        bits = [z3.ZeroExt(w - 1, z3.Extract(i, i, a)) if w > 1 else z3.Extract(i, i, a) for i in range(w)]
        return z3.Sum(bits) if len(bits) > 1 else bits[0]
    if isinstance(node, Binary):
        a, b = t[id(node.left)], t[id(node.right)]
        w, bw = node.left.width, node.right.width
        op = node.op
        one, zero = z3.BitVecVal(1, 1, ctx), z3.BitVecVal(0, 1, ctx)

        def flag(cond):
            return z3.If(cond, one, zero)

        if op in (BinOp.LEFT, BinOp.RIGHT, BinOp.SRIGHT):
            if bw < w:
                b, width = z3.ZeroExt(w - bw, b), w
            else:
                width = bw
            if width > w:
                a = z3.SignExt(width - w, a) if op is BinOp.SRIGHT else z3.ZeroExt(width - w, a)
            shifted = {BinOp.LEFT: lambda: a << b, BinOp.RIGHT: lambda: z3.LShR(a, b), BinOp.SRIGHT: lambda: a >> b}[op]()
            return z3.Extract(w - 1, 0, shifted) if width > w else shifted
        if op is BinOp.CARRY:
            s = z3.ZeroExt(1, a) + z3.ZeroExt(1, b)
            return z3.Extract(w, w, s)
        if op in (BinOp.SCARRY, BinOp.SBORROW):
            wa, wb = z3.SignExt(1, a), z3.SignExt(1, b)
            s = wa + wb if op is BinOp.SCARRY else wa - wb
            return flag(z3.Extract(w, w, s) != z3.Extract(w - 1, w - 1, s))
        if op in (BinOp.BOOL_AND, BinOp.BOOL_OR, BinOp.BOOL_XOR):
            combine = {BinOp.BOOL_AND: z3.And, BinOp.BOOL_OR: z3.Or, BinOp.BOOL_XOR: z3.Xor}[op]
            return z3.If(combine(a != 0, b != 0), z3.BitVecVal(1, w, ctx), z3.BitVecVal(0, w, ctx))
        table = {
            BinOp.ADD: lambda: a + b,
            BinOp.SUB: lambda: a - b,
            BinOp.MULT: lambda: a * b,
            BinOp.DIV: lambda: z3.UDiv(a, b),
            BinOp.SDIV: lambda: a / b,
            BinOp.REM: lambda: z3.URem(a, b),
            BinOp.SREM: lambda: z3.SRem(a, b),
            BinOp.AND: lambda: a & b,
            BinOp.OR: lambda: a | b,
            BinOp.XOR: lambda: a ^ b,
            BinOp.EQUAL: lambda: flag(a == b),
            BinOp.NOTEQUAL: lambda: flag(a != b),
            BinOp.LESS: lambda: flag(z3.ULT(a, b)),
            BinOp.SLESS: lambda: flag(a < b),
            BinOp.LESSEQUAL: lambda: flag(z3.ULE(a, b)),
            BinOp.SLESSEQUAL: lambda: flag(a <= b),
        }
        return table[op]()
    if isinstance(node, Extract):
        lo = node.low_byte * 8
        return z3.Extract(lo + node.width - 1, lo, t[id(node.child)])
    if isinstance(node, Concat):
        return z3.Concat(t[id(node.high)], t[id(node.low)])
    if isinstance(node, ZeroExtend):
        return z3.ZeroExt(node.width - node.child.width, t[id(node.child)])
    if isinstance(node, SignExtend):
        return z3.SignExt(node.width - node.child.width, t[id(node.child)])
    if isinstance(node, IfThenElse):
        return z3.If(t[id(node.cond)] == 1, t[id(node.then)], t[id(node.else_)])
    raise TypeError(f"not an expression node: {node!r}")


def to_z3(expr: BitvecExpr, ctx=None):
    terms: Dict[int, object] = {}
    for node in postorder(expr):
        terms[id(node)] = _z3_term(node, terms, ctx)
    return terms[id(expr)]


class Z3Solver(SolverAdapter):
    name = "z3"

    def __init__(self, timeout_ms: Optional[int] = None):
        if not HAS_Z3:
            raise ImportError("z3-solver is not installed")
        super().__init__(timeout_ms)
        # One context per adapter; z3 contexts must not cross threads
        self.ctx = z3.Context()

    def fresh(self) -> "Z3Solver":
        return Z3Solver(self.timeout_ms)

    def _solve(self, predicates: List[BitvecExpr], hints: Mapping[int, int]) -> SolverVerdict:
        solver = z3.Solver(ctx=self.ctx)
        solver.set("timeout", int(self.timeout_ms))
        for pred in predicates:
            solver.add(to_z3(pred, self.ctx) == 1)
        result = solver.check()
        if result == z3.unsat:
            return SolverVerdict.unsat()
        if result != z3.sat:
            return SolverVerdict.unknown(str(solver.reason_unknown()))
        model = solver.model()
        values = {}
        for sid, s in query_symbols(predicates).items():
            values[sid] = model.eval(z3.BitVec(f"s{sid}", s.width, self.ctx), model_completion=True).as_long()
        return SolverVerdict.sat(values)


# --- External SMT-LIB2 process backend ---


def _smt_bv(value: int, width: int) -> str:
    return f"(_ bv{value} {width})"


def _smt_flag(cond: str) -> str:
    return f"(ite {cond} #b1 #b0)"


def _smt_term(node: BitvecExpr, t: Dict[int, str]) -> str:
    if isinstance(node, Literal):
        return _smt_bv(node.value, node.width)
    if isinstance(node, Symbol):
        return f"s{node.id}"
    if isinstance(node, Unary):
        a, w = t[id(node.child)], node.child.width
        if node.op is UnOp.NEGATE:
            return f"(bvnot {a})"
        if node.op is UnOp.TWOCOMP:
            return f"(bvneg {a})"
        if node.op is UnOp.BOOL_NEGATE:
            return f"(ite (= {a} {_smt_bv(0, w)}) {_smt_bv(1, w)} {_smt_bv(0, w)})"
        bits = [f"((_ zero_extend {w - 1}) ((_ extract {i} {i}) {a}))" for i in range(w)]
        return f"(bvadd {' '.join(bits)})" if len(bits) > 1 else bits[0]
    if isinstance(node, Binary):
        a, b = t[id(node.left)], t[id(node.right)]
        w, bw = node.left.width, node.right.width
        op = node.op
        if op in (BinOp.LEFT, BinOp.RIGHT, BinOp.SRIGHT):
            width = max(w, bw)
            if bw < width:
                b = f"((_ zero_extend {width - bw}) {b})"
            if w < width:
                ext = "sign_extend" if op is BinOp.SRIGHT else "zero_extend"
                a = f"((_ {ext} {width - w}) {a})"
            fn = {BinOp.LEFT: "bvshl", BinOp.RIGHT: "bvlshr", BinOp.SRIGHT: "bvashr"}[op]
            shifted = f"({fn} {a} {b})"
            return f"((_ extract {w - 1} 0) {shifted})" if width > w else shifted
        if op is BinOp.CARRY:
            return f"((_ extract {w} {w}) (bvadd ((_ zero_extend 1) {a}) ((_ zero_extend 1) {b})))"
        if op in (BinOp.SCARRY, BinOp.SBORROW):
            fn = "bvadd" if op is BinOp.SCARRY else "bvsub"
            s = f"({fn} ((_ sign_extend 1) {a}) ((_ sign_extend 1) {b}))"
            return _smt_flag(f"(distinct ((_ extract {w} {w}) {s}) ((_ extract {w - 1} {w - 1}) {s}))")
        if op in (BinOp.BOOL_AND, BinOp.BOOL_OR, BinOp.BOOL_XOR):
            fn = {BinOp.BOOL_AND: "and", BinOp.BOOL_OR: "or", BinOp.BOOL_XOR: "xor"}[op]
            zero = _smt_bv(0, w)
            cond = f"({fn} (distinct {a} {zero}) (distinct {b} {zero}))"
            return f"(ite {cond} {_smt_bv(1, w)} {zero})"
        simple = {
            BinOp.ADD: "bvadd",
            BinOp.SUB: "bvsub",
            BinOp.MULT: "bvmul",
            BinOp.DIV: "bvudiv",
            BinOp.SDIV: "bvsdiv",
            BinOp.REM: "bvurem",
            BinOp.SREM: "bvsrem",
            BinOp.AND: "bvand",
            BinOp.OR: "bvor",
            BinOp.XOR: "bvxor",
        }
        if op in simple:
            return f"({simple[op]} {a} {b})"
        preds = {
            BinOp.EQUAL: "=",
            BinOp.NOTEQUAL: "distinct",
            BinOp.LESS: "bvult",
            BinOp.SLESS: "bvslt",
            BinOp.LESSEQUAL: "bvule",
            BinOp.SLESSEQUAL: "bvsle",
        }
        return _smt_flag(f"({preds[op]} {a} {b})")
    if isinstance(node, Extract):
        lo = node.low_byte * 8
        return f"((_ extract {lo + node.width - 1} {lo}) {t[id(node.child)]})"
    if isinstance(node, Concat):
        return f"(concat {t[id(node.high)]} {t[id(node.low)]})"
    if isinstance(node, ZeroExtend):
        return f"((_ zero_extend {node.width - node.child.width}) {t[id(node.child)]})"
    if isinstance(node, SignExtend):
        return f"((_ sign_extend {node.width - node.child.width}) {t[id(node.child)]})"
    if isinstance(node, IfThenElse):
        return f"(ite (= {t[id(node.cond)]} #b1) {t[id(node.then)]} {t[id(node.else_)]})"
    raise TypeError(f"not an expression node: {node!r}")


def to_smtlib(expr: BitvecExpr) -> str:
    terms: Dict[int, str] = {}
    for node in postorder(expr):
        terms[id(node)] = _smt_term(node, terms)
    return terms[id(expr)]


def smtlib_script(predicates: Sequence[BitvecExpr]) -> str:
    symbols = query_symbols(predicates)
    lines = ["(set-option :produce-models true)", "(set-logic QF_BV)"]
    for sid, s in symbols.items():
        lines.append(f"(declare-const s{sid} (_ BitVec {s.width}))")
    for pred in predicates:
        lines.append(f"(assert (= {to_smtlib(pred)} #b1))")
    lines.append("(check-sat)")
    if symbols:
        lines.append(f"(get-value ({' '.join(f's{sid}' for sid in symbols)}))")
    return "\n".join(lines) + "\n"


_VALUE_RE = re.compile(r"\(\s*s(\d+)\s+(#x[0-9a-fA-F]+|#b[01]+|\(_\s+bv(\d+)\s+\d+\))\s*\)")


def parse_smtlib_values(text: str) -> Dict[int, int]:
    values: Dict[int, int] = {}
    for match in _VALUE_RE.finditer(text):
        sid, literal, decimal = match.groups()
        if decimal is not None:
            value = int(decimal)
        elif literal.startswith("#x"):
            value = int(literal[2:], 16)
        else:
            value = int(literal[2:], 2)
        values[int(sid)] = value
    return values


class SmtLibProcessSolver(SolverAdapter):
    """Talks SMT-LIB2 to an external solver command (e.g. `z3 -in`)."""

    name = "smtlib"

    def __init__(self, command: str, timeout_ms: Optional[int] = None):
        super().__init__(timeout_ms)
        self.command = shlex.split(command)
        if not self.command:
            raise ValueError("empty solver command")

    def _solve(self, predicates: List[BitvecExpr], hints: Mapping[int, int]) -> SolverVerdict:
        script = smtlib_script(predicates)
        try:
            proc = subprocess.run(
                self.command,
                input=script,
                capture_output=True,
                text=True,
                timeout=self.timeout_ms / 1000.0,
            )
        except subprocess.TimeoutExpired:
            return SolverVerdict.unknown("external solver timeout")
        except OSError as e:
            return SolverVerdict.unknown(f"external solver failed: {e}")

        lines = proc.stdout.strip().splitlines()
        head = lines[0].strip() if lines else ""
        if head == "unsat":
            return SolverVerdict.unsat()
        if head != "sat":
            return SolverVerdict.unknown(head or proc.stderr.strip() or "no answer")
        values = parse_smtlib_values("\n".join(lines[1:]))
        missing = [sid for sid in query_symbols(predicates) if sid not in values]
        if missing:
            return SolverVerdict.unknown(f"model misses symbols {missing}")
        return SolverVerdict.sat(values)


class AutoSolver(SolverAdapter):
    """Enumeration within the bit limit, the external backend beyond it."""

    name = "auto"

    def __init__(self, fallback: EnumerationSolver, external: Optional[SolverAdapter] = None):
        super().__init__(fallback.timeout_ms)
        self.fallback = fallback
        self.external = external

    def fresh(self) -> "AutoSolver":
        return AutoSolver(self.fallback.fresh(), self.external.fresh() if self.external is not None else None)

    def _solve(self, predicates: List[BitvecExpr], hints: Mapping[int, int]) -> SolverVerdict:
        if self.fallback.symbolic_bits(predicates) <= self.fallback.bit_limit or self.external is None:
            return self.fallback._solve(predicates, hints)
        return self.external._solve(predicates, hints)


def build_solver(
    backend: Optional[str] = None,
    timeout_ms: Optional[int] = None,
    solver_path: Optional[str] = None,
    bit_limit: Optional[int] = None,
) -> SolverAdapter:
    """Creates the configured adapter; unavailable external backends degrade to enumeration."""
    backend = (backend or settings.SOLVER_BACKEND).lower()
    solver_path = solver_path if solver_path is not None else settings.SOLVER_PATH
    fallback = EnumerationSolver(timeout_ms, bit_limit)

    external: Optional[SolverAdapter] = None
    if backend in ("z3", "auto") and HAS_Z3:
        external = Z3Solver(timeout_ms)
    elif backend in ("smtlib", "auto") and solver_path:
        external = SmtLibProcessSolver(solver_path, timeout_ms)
    elif backend == "z3":
        logger.warning("z3 backend requested but z3-solver is not installed; using enumeration only")
    elif backend == "smtlib":
        logger.warning("smtlib backend requested without PCODEGUARD_SOLVER_PATH; using enumeration only")

    if backend == "enumeration":
        return fallback
    return AutoSolver(fallback, external)


def check_sat(
    constraints: Sequence[PathConstraint],
    extra: Optional[BitvecExpr] = None,
    solver: Optional[SolverAdapter] = None,
) -> SolverVerdict:
    return (solver or EnumerationSolver()).check_sat(constraints, extra)
