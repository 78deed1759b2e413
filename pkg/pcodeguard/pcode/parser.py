"""
Parser for textual low-level P-Code listings.

Grammar (one instruction per header line, ops indented below it)::

    0x00201000 len=7
      (register,0x0,8) = COPY (const,0x2a,8)
      STORE (const,0x1b1,8) , (register,0x20,8) , (register,0x0,8)
      CALLOTHER (const,0x5,4) , "syscall"

`#` starts a comment; blank lines are ignored.
"""

import logging
import re
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from pcodeguard.core.exceptions import (
    DuplicateAddressError,
    FileUnreadableError,
    InvalidPcodeError,
    ParseError,
    ParseErrorKind,
)
from pcodeguard.pcode.model import (
    HIGH_LEVEL_OPCODES,
    MAX_OFFSET,
    Instruction,
    LoadUnit,
    Opcode,
    PcodeOp,
    ProgramImage,
    SpaceKind,
    Varnode,
)

logger = logging.getLogger(__name__)

Source = Tuple[str, int, Union[str, bytes]]

_VARNODE_RE = re.compile(r"\(([a-z]+),0[xX]([0-9a-fA-F]+),([0-9]+)\)", re.ASCII)
_HEADER_RE = re.compile(r"0[xX]([0-9a-fA-F]+)(?:\s+len=([0-9]+))?", re.ASCII)
_OPLINE_RE = re.compile(
    r"(?:(?P<out>\([^()]*\))\s*=\s*)?(?P<opcode>[A-Za-z_][A-Za-z0-9_]*)(?:\s+(?P<args>.*))?",
    re.ASCII,
)
_ARG_RE = re.compile(r"\s*(\([^()]*\)|\"[^\"]*\")\s*", re.ASCII)
_HEX_RE = re.compile(r"0[xX]([0-9a-fA-F]+)")

_SPACES = {kind.value: kind for kind in SpaceKind}
_OPCODES = {op.value: op for op in Opcode}


def parse_varnode(token: str) -> Varnode:
    """Parses `(space,0xOFFSET,SIZE)`; raises ParseError(BadVarnode) with line 1 context."""
    try:
        return _parse_varnode(token)
    except _LineError as e:
        raise ParseError(1, e.kind, e.reason) from None


class _LineError(Exception):
    def __init__(self, kind: ParseErrorKind, reason: str):
        self.kind = kind
        self.reason = reason
        super().__init__(reason)


def _parse_varnode(token: str) -> Varnode:
    match = _VARNODE_RE.fullmatch(token)
    if not match:
        raise _LineError(ParseErrorKind.BAD_VARNODE, f"malformed varnode '{token}'")
    space_name, offset_hex, size_text = match.groups()
    space = _SPACES.get(space_name)
    if space is None:
        raise _LineError(ParseErrorKind.BAD_VARNODE, f"unknown address space '{space_name}'")
    offset = int(offset_hex, 16)
    size = int(size_text)
    try:
        return Varnode(space, offset, size)
    except InvalidPcodeError as e:
        raise _LineError(ParseErrorKind.BAD_VARNODE, e.message) from None


def _strip_comment(line: str) -> str:
    in_quote = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return line[:i]
    return line


def _split_args(text: str) -> List[str]:
    """Splits `A , B , "name"` into tokens; separators are commas (optional before a quoted name)."""
    tokens: List[str] = []
    text = text.strip()
    if not text:
        return tokens
    pos = 0
    while True:
        match = _ARG_RE.match(text, pos)
        if not match:
            raise _LineError(ParseErrorKind.BAD_VARNODE, f"cannot parse operand near '{text[pos:pos + 24]}'")
        tokens.append(match.group(1))
        pos = match.end()
        if pos >= len(text):
            return tokens
        if text[pos] == ",":
            pos += 1
        elif text[pos] != '"':
            raise _LineError(ParseErrorKind.BAD_VARNODE, f"expected ',' near '{text[pos:pos + 24]}'")


def _parse_op_line(line: str) -> Tuple[Optional[PcodeOp], Optional[str]]:
    """Returns (op, callother_name). Raises _LineError."""
    match = _OPLINE_RE.fullmatch(line)
    if not match:
        raise _LineError(ParseErrorKind.BAD_VARNODE, f"unrecognized op line '{line}'")
    opcode_name = match.group("opcode")
    if opcode_name in HIGH_LEVEL_OPCODES:
        raise _LineError(
            ParseErrorKind.REJECTED_HIGH_LEVEL_OP,
            f"{opcode_name} is a decompiler-level or floating-point op",
        )
    opcode = _OPCODES.get(opcode_name)
    if opcode is None:
        raise _LineError(ParseErrorKind.UNKNOWN_OPCODE, f"unknown opcode '{opcode_name}'")

    output = _parse_varnode(match.group("out")) if match.group("out") else None
    tokens = _split_args(match.group("args") or "")

    name = None
    inputs: List[Varnode] = []
    for idx, token in enumerate(tokens):
        if token.startswith('"'):
            if opcode is not Opcode.CALLOTHER or idx != 1 or name is not None:
                raise _LineError(ParseErrorKind.BAD_VARNODE, f"unexpected quoted token {token}")
            name = token[1:-1]
            continue
        inputs.append(_parse_varnode(token))

    try:
        return PcodeOp(opcode, tuple(inputs), output), name
    except InvalidPcodeError as e:
        raise _LineError(e.kind, e.message) from None


def _decode(text: Union[str, bytes], unit: str) -> str:
    if isinstance(text, str):
        return text
    try:
        return text.decode("utf-8")
    except UnicodeDecodeError as e:
        line_number = text.count(b"\n", 0, e.start) + 1
        raise ParseError(line_number, ParseErrorKind.BAD_ENCODING, "invalid UTF-8", unit) from None


def parse_unit(
    name: str, base: int, text: Union[str, bytes], lenient: bool = False
) -> Tuple[Dict[int, Instruction], Dict[Tuple[int, int], str]]:
    """Parses one listing; addresses are offset by `base`."""
    source = _decode(text, name)
    instructions: Dict[int, Instruction] = {}
    names: Dict[Tuple[int, int], str] = {}

    current: Optional[Tuple[int, int, int]] = None  # (address, length, header line)
    ops: List[PcodeOp] = []
    op_names: Dict[int, str] = {}

    def flush():
        if current is None:
            return
        address, length, header_line = current
        if not ops:
            if lenient:
                logger.warning(f"{name}:{header_line}: dropping instruction 0x{address:x} without ops")
                return
            raise ParseError(
                header_line, ParseErrorKind.EMPTY_INSTRUCTION, f"instruction 0x{address:x} has no ops", name
            )
        if address in instructions:
            raise ParseError(
                header_line, ParseErrorKind.BAD_ADDRESS, f"address 0x{address:x} repeated", name
            )
        instructions[address] = Instruction(address, tuple(ops), length)
        for idx, op_name in op_names.items():
            names[(address, idx)] = op_name

    for line_number, raw in enumerate(source.split("\n"), start=1):
        line = _strip_comment(raw.rstrip("\r"))
        if not line.strip():
            continue

        if not line[0].isspace():
            flush()
            ops, op_names = [], {}
            header = _HEADER_RE.fullmatch(line.strip())
            if not header:
                raise ParseError(line_number, ParseErrorKind.BAD_ADDRESS, f"bad instruction header '{line.strip()}'", name)
            address = int(header.group(1), 16) + base
            if address > MAX_OFFSET:
                raise ParseError(line_number, ParseErrorKind.BAD_ADDRESS, "address exceeds 64 bits", name)
            length = int(header.group(2)) if header.group(2) else 0
            current = (address, length, line_number)
            continue

        if current is None:
            raise ParseError(line_number, ParseErrorKind.BAD_ADDRESS, "op line before any instruction header", name)
        try:
            op, op_name = _parse_op_line(line.strip())
        except _LineError as e:
            if lenient and e.kind is ParseErrorKind.UNKNOWN_OPCODE:
                logger.warning(f"{name}:{line_number}: skipping op ({e.reason})")
                continue
            raise ParseError(line_number, e.kind, e.reason, name) from None
        if op_name is not None:
            op_names[len(ops)] = op_name
        ops.append(op)

    flush()
    logger.debug(f"Parsed unit '{name}' at base 0x{base:x}: {len(instructions)} instructions")
    return instructions, names


def parse_program(sources: Sequence[Source], lenient: bool = False) -> ProgramImage:
    """Parses every unit and merges them into one ProgramImage."""
    merged: Dict[int, Instruction] = {}
    owner: Dict[int, str] = {}
    names: Dict[Tuple[int, int], str] = {}
    units: List[LoadUnit] = []

    for unit_name, base, text in sources:
        instructions, unit_names = parse_unit(unit_name, base, text, lenient=lenient)
        for address, instruction in instructions.items():
            if address in merged:
                raise DuplicateAddressError(address, owner[address], unit_name)
            merged[address] = instruction
            owner[address] = unit_name
        names.update(unit_names)
        units.append(LoadUnit(unit_name, base))

    logger.info(f"Loaded {len(merged)} instructions from {len(units)} listing(s)")
    return ProgramImage(merged, units, names)


def load_listing(path: str, base: int = 0) -> Source:
    try:
        with open(path, "rb") as fh:
            return (path, base, fh.read())
    except OSError as e:
        raise FileUnreadableError(path, str(e)) from None


def print_program(img: ProgramImage) -> str:
    """Renders the canonical listing text of an image."""
    lines: List[str] = []
    for instruction in img:
        header = f"0x{instruction.address:x}"
        if instruction.length:
            header += f" len={instruction.length}"
        lines.append(header)
        for idx, op in enumerate(instruction.ops):
            text = str(op)
            name = img.callother_name(instruction.address, idx)
            if name is not None:
                first, *rest = [str(v) for v in op.inputs]
                args = " , ".join([first, f'"{name}"', *rest])
                text = f"{op.opcode.value} {args}"
                if op.output is not None:
                    text = f"{op.output} = {text}"
            lines.append(f"  {text}")
    return "\n".join(lines) + "\n"


def normalize_listing(text: str) -> str:
    """Comment-free, whitespace-collapsed form with minimal lowercase hex, for comparisons."""
    out: List[str] = []
    for raw in text.splitlines():
        line = _strip_comment(raw).strip()
        if not line:
            continue
        line = re.sub(r"\s+", " ", line)
        line = re.sub(r"\s*,\s*", ",", line)
        line = re.sub(r"\s*=\s*", "=", line)
        line = _HEX_RE.sub(lambda m: f"0x{int(m.group(1), 16):x}", line)
        out.append(line)
    return "\n".join(out)


def iter_ops(img: ProgramImage) -> Iterable[Tuple[int, int, PcodeOp]]:
    for instruction in img:
        for idx, op in enumerate(instruction.ops):
            yield instruction.address, idx, op
