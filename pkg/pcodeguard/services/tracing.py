"""
Execution artifacts: the per-op log (execution_log.txt) and the event trace
(execution_trace.txt). Both are plain text, one record per line.
"""

import enum
import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence, TextIO, Tuple

from pcodeguard.pcode.model import PcodeOp, Varnode
from pcodeguard.services.sidecars import SymbolTable
from pcodeguard.symbolic.expr import symbol_ids
from pcodeguard.symbolic.values import ConcolicValue

logger = logging.getLogger(__name__)

LOG_FILE = "execution_log.txt"
TRACE_FILE = "execution_trace.txt"


class TraceEventKind(str, enum.Enum):
    CALL = "CALL"
    RETURN = "RETURN"
    SYSCALL = "SYSCALL"
    FINDING = "FINDING"


@dataclass(frozen=True)
class TraceEvent:
    step: int
    kind: TraceEventKind
    address: int = 0
    args: Tuple[int, ...] = ()
    number: int = 0
    label: str = ""


def render_value(value: ConcolicValue) -> str:
    if value.is_symbolic:
        ids = ".".join(str(i) for i in symbol_ids(value.symbolic))
        return f"sym{ids}@0x{value.value:x}"
    return f"0x{value.value:x}"


def render_operand(vn: Varnode, value: Optional[ConcolicValue]) -> str:
    if vn.is_constant or value is None:
        return str(vn)
    return f"{vn}={render_value(value)}"


def append_log(
    sink: TextIO,
    step: int,
    addr: int,
    op_index: int,
    op: PcodeOp,
    inputs_rendered: Sequence[str],
    output_rendered: str,
) -> None:
    line = f"STEP {step} 0x{addr:x}/{op_index} {op.opcode.value}"
    if inputs_rendered:
        line += " " + " , ".join(inputs_rendered)
    sink.write(f"{line} -> {output_rendered}\n")


def render_event(event: TraceEvent, symbols: Optional[SymbolTable] = None) -> str:
    if event.kind is TraceEventKind.CALL:
        symbols = symbols or SymbolTable()
        name = symbols.name_of(event.address) or "?"
        args = ", ".join(f"0x{a:x}" for a in event.args[: symbols.argc_of(event.address)])
        return f"CALL 0x{event.address:x} {name} args=[{args}]"
    if event.kind is TraceEventKind.RETURN:
        return f"RETURN 0x{event.address:x}"
    if event.kind is TraceEventKind.SYSCALL:
        args = ", ".join(f"0x{a:x}" for a in event.args)
        return f"SYSCALL {event.number} args=[{args}]"
    return f"FINDING {event.label} 0x{event.address:x}"


def append_trace(sink: TextIO, event: TraceEvent, symbols: Optional[SymbolTable] = None) -> None:
    sink.write(render_event(event, symbols) + "\n")


def artifact_names(run_id: int) -> Tuple[str, str]:
    if run_id == 0:
        return LOG_FILE, TRACE_FILE
    return f"execution_log.{run_id}.txt", f"execution_trace.{run_id}.txt"


class RunArtifacts:
    """Log and trace writers for one execution path."""

    def __init__(
        self,
        out_dir: Optional[str],
        run_id: int = 0,
        log: bool = True,
        trace: bool = True,
        symbols: Optional[SymbolTable] = None,
        debug: bool = False,
    ):
        self.symbols = symbols or SymbolTable()
        self.debug = debug
        self._log: Optional[TextIO] = None
        self._trace: Optional[TextIO] = None
        if out_dir is None:
            return
        log_name, trace_name = artifact_names(run_id)
        os.makedirs(out_dir, exist_ok=True)
        if log:
            self._log = open(os.path.join(out_dir, log_name), "w", encoding="utf-8", newline="\n")
        if trace:
            self._trace = open(os.path.join(out_dir, trace_name), "w", encoding="utf-8", newline="\n")

    @property
    def logging(self) -> bool:
        return self._log is not None

    def log_op(
        self,
        step: int,
        addr: int,
        op_index: int,
        op: PcodeOp,
        inputs: Sequence[Tuple[Varnode, Optional[ConcolicValue]]],
        output: Optional[Tuple[Varnode, ConcolicValue]],
    ) -> None:
        if self._log is None:
            return
        rendered_inputs = [render_operand(vn, value) for vn, value in inputs]
        rendered_output = render_operand(*output) if output is not None else "-"
        append_log(self._log, step, addr, op_index, op, rendered_inputs, rendered_output)

    def event(self, event: TraceEvent) -> None:
        if self._trace is None:
            return
        append_trace(self._trace, event, self.symbols)

    def end_step(self) -> None:
        if not self.debug:
            return
        for sink in (self._log, self._trace):
            if sink is not None:
                sink.flush()

    def close(self) -> None:
        for sink in (self._log, self._trace):
            if sink is not None:
                sink.close()
        self._log = self._trace = None

    def __enter__(self) -> "RunArtifacts":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()
