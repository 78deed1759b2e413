import enum
from typing import Annotated, Any, Dict, List, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from pcodeguard.core.config import settings


def parse_int(value: Any) -> Any:
    """Accepts ints and `0x`-prefixed / decimal strings (sidecars store addresses as hex text)."""
    if isinstance(value, str):
        text = value.strip()
        try:
            return int(text, 0)
        except ValueError:
            raise ValueError(f"not an integer: '{value}'") from None
    return value


HexInt = Annotated[int, BeforeValidator(parse_int)]


# --- Findings ---


class Strategy(str, enum.Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    CPROFILE = "CProfile"


class Finding(BaseModel):
    """A detected panic path or invariant violation."""

    model_config = ConfigDict(frozen=True)

    strategy: Strategy
    kind: str
    label: str
    address: int
    message: str
    # Symbolic input name -> value that drives the path
    witness: Optional[Dict[str, int]] = None
    trace_ref: int = 0
    run_id: int = 0
    replayed: Optional[bool] = None

    def summary(self) -> str:
        line = f"[{self.strategy.value}] {self.kind} at 0x{self.address:x}: {self.message}"
        if self.witness:
            inputs = ", ".join(f"{k}=0x{v:x}" for k, v in sorted(self.witness.items()))
            line += f" (witness: {inputs})"
        return line


class ExplorationStats(BaseModel):
    runs: int = 0
    steps: int = 0
    forks: int = 0
    sat: int = 0
    unsat: int = 0
    unknown: int = 0
    faults: int = 0
    budget_exhausted: bool = False
    budget_reason: Optional[str] = None

    def exhaust(self, reason: str) -> None:
        self.budget_exhausted = True
        if self.budget_reason is None:
            self.budget_reason = reason


class ExitStatus(str, enum.Enum):
    CLEAN_TERMINATION = "CleanTermination"
    FINDING_HALT = "FindingHalt"
    BUDGET_EXHAUSTED = "BudgetExhausted"
    FAULT = "Fault"


EXIT_CODES = {
    ExitStatus.CLEAN_TERMINATION: 0,
    ExitStatus.FINDING_HALT: 1,
    ExitStatus.BUDGET_EXHAUSTED: 0,
    ExitStatus.FAULT: 3,
}


class RunReport(BaseModel):
    strategy: Strategy
    exit_status: ExitStatus
    findings: List[Finding] = []
    stats: ExplorationStats = Field(default_factory=ExplorationStats)
    fault: Optional[str] = None
    stdout: str = ""

    @model_validator(mode="after")
    def findings_imply_halt(self) -> "RunReport":
        if self.exit_status is ExitStatus.FINDING_HALT and not self.findings:
            raise ValueError("FindingHalt requires at least one finding")
        return self

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.exit_status]


# --- Sidecar documents ---


class DumpSegment(BaseModel):
    base: HexInt
    perms: str = "rw"
    file: str


class DumpManifest(BaseModel):
    """Register values plus raw segment images, as captured at the analysis start point."""

    registers: Dict[str, HexInt] = {}
    segments: List[DumpSegment] = []


class JumpTableSpec(BaseModel):
    switch_addr: HexInt
    index_source: str
    index_base: HexInt = 0
    targets: List[HexInt] = Field(min_length=1)


class JumpTableDocument(BaseModel):
    tables: List[JumpTableSpec] = []


class RegisterSpec(BaseModel):
    offset: HexInt
    size: int


class RegisterMapDocument(BaseModel):
    architecture: str = "x86-64"
    registers: Dict[str, RegisterSpec]


# --- Run configuration ---


class Comparator(str, enum.Enum):
    EQ = "eq"
    NE = "ne"
    ULT = "ult"
    ULE = "ule"
    UGT = "ugt"
    UGE = "uge"
    SLT = "slt"
    SLE = "sle"
    SGT = "sgt"
    SGE = "sge"


class CustomInvariant(BaseModel):
    """`register <comparator> constant` must hold whenever pc == address."""

    model_config = ConfigDict(populate_by_name=True)

    name: str
    address: HexInt
    register_name: str = Field(alias="register")
    comparator: Comparator
    constant: HexInt
    message: str = ""


class ListingSpec(BaseModel):
    path: str
    base: HexInt = 0


class FunctionStart(BaseModel):
    address: HexInt
    arg_count: int = Field(default=0, ge=0, le=6)


class StubSpec(BaseModel):
    address: HexInt
    name: str
    value: HexInt = 0


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    listings: List[ListingSpec] = Field(min_length=1)
    xrefs: Optional[str] = None
    jump_tables: Optional[str] = None
    symbols: Optional[str] = None
    dump: Optional[str] = None

    start: Optional[HexInt] = None
    func: Optional[FunctionStart] = None
    strategy: Strategy = Strategy.S1

    c_invariants: bool = False
    custom_invariants: List[CustomInvariant] = []
    panic_from_symbols: bool = False

    max_steps: int = Field(default_factory=lambda: settings.MAX_STEPS, ge=1)
    max_forks: int = Field(default_factory=lambda: settings.MAX_FORKS, ge=0)
    max_depth: int = Field(default_factory=lambda: settings.MAX_DEPTH, ge=0)
    solver_timeout_ms: int = Field(default_factory=lambda: settings.SOLVER_TIMEOUT_MS, ge=1)
    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)
    seed: int = 0

    symbolic_registers: List[str] = []
    stdin_path: Optional[str] = None
    symbolic_stdin: int = Field(default=0, ge=0)
    stubs: List[StubSpec] = []
    syscall_stub: Optional[HexInt] = None

    strict: bool = False
    lenient: bool = False
    continue_after_finding: bool = False
    validate_witnesses: bool = True
    debug: bool = False
    log: bool = True
    trace: bool = True
    output_dir: str = Field(default_factory=lambda: settings.OUTPUT_DIR)

    @model_validator(mode="after")
    def check_start_mode(self) -> "RunConfig":
        if self.strategy is Strategy.CPROFILE:
            raise ValueError("strategy must be one of S1, S2, S3")
        if self.strategy is Strategy.S3 and self.func is None:
            raise ValueError("strategy S3 requires a function start (--func ADDR:ARGC)")
        if self.strategy is not Strategy.S3 and self.func is not None:
            raise ValueError("a function start is only valid with strategy S3")
        return self
