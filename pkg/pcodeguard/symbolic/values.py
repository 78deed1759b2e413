from dataclasses import dataclass, field
from typing import Optional, Tuple

from pcodeguard.symbolic.expr import (
    BitvecExpr,
    Literal,
    bool_of,
    lit,
    negate,
    to_signed,
)


@dataclass(frozen=True, slots=True)
class ConcolicValue:
    """Concrete little-endian bytes plus an optional symbolic expression of the same width."""

    concrete: bytes
    symbolic: Optional[BitvecExpr] = None

    def __post_init__(self):
        if self.symbolic is not None and self.symbolic.width != len(self.concrete) * 8:
            raise ValueError(
                f"symbolic width {self.symbolic.width} does not match {len(self.concrete)} bytes"
            )

    @classmethod
    def from_int(cls, value: int, size: int, symbolic: Optional[BitvecExpr] = None) -> "ConcolicValue":
        concrete = (value & ((1 << (size * 8)) - 1)).to_bytes(size, "little")
        if isinstance(symbolic, Literal):
            symbolic = None
        return cls(concrete, symbolic)

    @property
    def size(self) -> int:
        return len(self.concrete)

    @property
    def value(self) -> int:
        return int.from_bytes(self.concrete, "little")

    @property
    def signed(self) -> int:
        return to_signed(self.value, self.size * 8)

    @property
    def is_symbolic(self) -> bool:
        return self.symbolic is not None

    def expr(self) -> BitvecExpr:
        """Symbolic expression, or a literal of the concrete value."""
        if self.symbolic is not None:
            return self.symbolic
        return lit(self.value, self.size * 8)


@dataclass(frozen=True)
class PathConstraint:
    """Direction taken at a symbolic branch: bool(expr) == taken.

    `alternatives` are the 1-bit predicates exploration may assert instead of
    this one; when empty, the negated direction is the single alternative.
    """

    expr: BitvecExpr
    origin: Tuple[int, int]
    taken: bool
    alternatives: Tuple[BitvecExpr, ...] = field(default=())

    def predicate(self) -> BitvecExpr:
        cond = bool_of(self.expr)
        return cond if self.taken else negate(cond)

    def alternative_predicates(self) -> Tuple[BitvecExpr, ...]:
        if self.alternatives:
            return self.alternatives
        cond = bool_of(self.expr)
        return (negate(cond) if self.taken else cond,)
