"""
Loaders for the files that accompany a listing: panic cross-references,
jump tables and the function symbol list.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

from pydantic import ValidationError

from pcodeguard.core.exceptions import FileUnreadableError, MalformedSidecarError
from pcodeguard.pcode.model import ProgramImage
from pcodeguard.schemas import JumpTableDocument
from pcodeguard.services.detection import PanicXrefSet
from pcodeguard.state.machine import RegisterMap, load_register_map

logger = logging.getLogger(__name__)

DEFAULT_TRACE_ARGC = 6

_XREF_RE = re.compile(r'0[xX]([0-9a-fA-F]+)(?:\s+([A-Za-z_][\w:.\-]*)(?:\s+"([^"]*)")?)?', re.ASCII)
_SYMBOL_RE = re.compile(r"0[xX]([0-9a-fA-F]+)\s+(\S+)(?:\s+([0-9]+))?", re.ASCII)


@dataclass(frozen=True)
class JumpTableEntry:
    targets: Tuple[int, ...]
    index_source: str
    index_base: int = 0


JumpTableMap = Dict[int, JumpTableEntry]


@dataclass(frozen=True)
class SymbolEntry:
    name: str
    argc: Optional[int] = None


class SymbolTable:
    def __init__(self, entries: Optional[Dict[int, SymbolEntry]] = None, source: str = ""):
        self.entries: Dict[int, SymbolEntry] = dict(entries or {})
        self.source = source

    def name_of(self, address: int) -> Optional[str]:
        entry = self.entries.get(address)
        return entry.name if entry is not None else None

    def argc_of(self, address: int) -> int:
        entry = self.entries.get(address)
        if entry is None or entry.argc is None:
            return DEFAULT_TRACE_ARGC
        return entry.argc

    def find(self, name: str) -> Optional[int]:
        for address, entry in sorted(self.entries.items()):
            if entry.name == name:
                return address
        return None

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Sidecars:
    xrefs: PanicXrefSet = field(default_factory=PanicXrefSet)
    tables: JumpTableMap = field(default_factory=dict)
    symbols: SymbolTable = field(default_factory=SymbolTable)


def _read_text(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except UnicodeDecodeError as e:
        raise MalformedSidecarError(path, f"invalid UTF-8: {e.reason}") from None
    except OSError as e:
        raise FileUnreadableError(path, str(e)) from None


def _content_lines(text: str):
    for number, raw in enumerate(text.split("\n"), start=1):
        line = _strip_comment(raw)
        if line:
            yield number, line


def _strip_comment(raw: str) -> str:
    in_quote = False
    for i, ch in enumerate(raw):
        if ch == '"':
            in_quote = not in_quote
        elif ch == "#" and not in_quote:
            return raw[:i].strip()
    return raw.strip()


def load_xrefs(path: str, img: Optional[ProgramImage] = None) -> PanicXrefSet:
    """`0x<addr> <label> "<message>"` per line; a bare address is a generic panic call."""
    xrefs = PanicXrefSet(source=path)
    for number, line in _content_lines(_read_text(path)):
        match = _XREF_RE.fullmatch(line)
        if not match:
            raise MalformedSidecarError(path, f"expected '0x<addr> <label> \"<message>\"', got '{line}'", number)
        address = int(match.group(1), 16)
        label = match.group(2) or "panic"
        message = match.group(3)
        if message is None:
            message = "call to a panic function" if match.group(2) is None else label.replace("_", " ")
        if not xrefs.add(address, label, message):
            raise MalformedSidecarError(path, f"address 0x{address:x} listed twice", number)
        if img is not None and address not in img:
            logger.warning(f"{path}:{number}: xref 0x{address:x} is not an instruction address")
    logger.info(f"Loaded {len(xrefs)} panic cross-reference(s) from {path}")
    return xrefs


def load_jump_tables(
    path: str, img: Optional[ProgramImage] = None, register_map: Optional[RegisterMap] = None
) -> JumpTableMap:
    """Targets must be listed instructions and index sources known registers."""
    text = _read_text(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedSidecarError(path, e.msg, e.lineno) from None
    try:
        document = JumpTableDocument.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise MalformedSidecarError(path, f"{where}: {first['msg']}") from None

    registers = {name.lower() for name in (register_map if register_map is not None else load_register_map())}
    tables: JumpTableMap = {}
    for spec in document.tables:
        if spec.switch_addr in tables:
            raise MalformedSidecarError(path, f"switch 0x{spec.switch_addr:x} listed twice")
        if img is not None:
            for target in spec.targets:
                if target not in img:
                    raise MalformedSidecarError(
                        path, f"target 0x{target:x} of switch 0x{spec.switch_addr:x} is not an instruction"
                    )
        if spec.index_source.lower() not in registers:
            raise MalformedSidecarError(
                path, f"index source '{spec.index_source}' of switch 0x{spec.switch_addr:x} is not a register"
            )
        tables[spec.switch_addr] = JumpTableEntry(tuple(spec.targets), spec.index_source.lower(), spec.index_base)
    logger.info(f"Loaded {len(tables)} jump table(s) from {path}")
    return tables


def load_symbols(path: str, img: Optional[ProgramImage] = None) -> SymbolTable:
    """`0x<addr> <name> [argc]` per line."""
    entries: Dict[int, SymbolEntry] = {}
    for number, line in _content_lines(_read_text(path)):
        match = _SYMBOL_RE.fullmatch(line)
        if not match:
            raise MalformedSidecarError(path, f"expected '0x<addr> <name> [argc]', got '{line}'", number)
        address = int(match.group(1), 16)
        if address in entries:
            raise MalformedSidecarError(path, f"address 0x{address:x} listed twice", number)
        argc = int(match.group(3)) if match.group(3) is not None else None
        if argc is not None and argc > DEFAULT_TRACE_ARGC:
            raise MalformedSidecarError(path, f"argc {argc} exceeds {DEFAULT_TRACE_ARGC}", number)
        entries[address] = SymbolEntry(match.group(2), argc)
        if img is not None and address not in img:
            logger.debug(f"{path}:{number}: symbol {match.group(2)} at 0x{address:x} has no listed instruction")
    logger.info(f"Loaded {len(entries)} symbol(s) from {path}")
    return SymbolTable(entries, path)


def add_panic_symbols(xrefs: PanicXrefSet, symbols: SymbolTable) -> int:
    """Flags every function whose name mentions `panic` as a cross-reference target."""
    added = 0
    for address, entry in sorted(symbols.entries.items()):
        if "panic" in entry.name.lower() and xrefs.add(address, "panic", f"entered {entry.name}"):
            added += 1
    if added:
        logger.info(f"Added {added} panic function(s) from the symbol table")
    return added


def load_sidecars(
    img: ProgramImage,
    xrefs_path: Optional[str] = None,
    jump_tables_path: Optional[str] = None,
    symbols_path: Optional[str] = None,
    panic_from_symbols: bool = False,
) -> Sidecars:
    """Missing optional files yield empty structures."""
    sidecars = Sidecars()
    if xrefs_path:
        sidecars.xrefs = load_xrefs(xrefs_path, img)
    if jump_tables_path:
        sidecars.tables = load_jump_tables(jump_tables_path, img)
    if symbols_path:
        sidecars.symbols = load_symbols(symbols_path, img)
    if panic_from_symbols:
        add_panic_symbols(sidecars.xrefs, sidecars.symbols)
    return sidecars
